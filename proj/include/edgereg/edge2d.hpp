#pragma once

#include <vector>

#include "edgereg/dataio.hpp"

namespace edgereg {

struct LineSegment {
  // Subpixel endpoints in image coordinates.
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width = 1.0;

  double length() const { return std::hypot(x2 - x1, y2 - y1); }
  // Orientation in [0, pi): segments are undirected.
  double angle() const;
};

struct EdgePixel {
  int u = 0, v = 0;
};
inline bool operator==(const EdgePixel &a, const EdgePixel &b) {
  return a.u == b.u && a.v == b.v;
}
inline bool operator<(const EdgePixel &a, const EdgePixel &b) {
  return a.v != b.v ? a.v < b.v : a.u < b.u;
}

// Deduplicated pixels in ascending (v, u) order.
struct EdgePixelSet {
  std::vector<EdgePixel> pixels;

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

// Gradient-based line support region detector. Fixed internal constants
// (22.5 degree alignment tolerance, 0.7 rectangle density, 8 px minimum
// length); no user thresholds by design.
std::vector<LineSegment> detect_line_segments(const GrayImage &image);

EdgePixelSet rasterize_segments(const std::vector<LineSegment> &segments, int width,
                                int height);

// Band-pass on the 3x3 gradient magnitude, thresholds on the 0-255 scale:
// pixels with low < |g| <= high are edges.
EdgePixelSet sobel_edges(const GrayImage &image, double low, double high);

// Smooth, gradient, thin along the gradient, then double-threshold hysteresis.
EdgePixelSet canny_edges(const GrayImage &image, double low, double high);

// Dispatch on config.edge_source, applying that source's thresholds.
EdgePixelSet extract_edge_pixels(const GrayImage &image, const PipelineConfig &config);

}  // namespace edgereg
