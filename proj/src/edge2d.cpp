#include "edgereg/edge2d.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "edgereg/errors.hpp"
#include "edgereg/geometry.hpp"

namespace edgereg {

namespace {

// Detector constants; thresholds are intrinsic to the method, not user-facing.
constexpr double kScale = 0.8;
constexpr double kScaledSigma = 0.6;  // blur strength measured on the downscaled grid
constexpr double kAngleTolDeg = 22.5;
constexpr double kMinDensity = 0.7;
constexpr double kMinLengthPx = 8.0;  // at original image resolution
constexpr int kMinRegionSize = 5;

double angle_tol_rad() { return deg_to_rad(kAngleTolDeg); }

// Gradient quantization floor: a 2-gray-level step misaligned by the full
// angle tolerance still clears it.
double gradient_threshold() { return (2.0 / 255.0) / std::sin(angle_tol_rad()); }

void require_filled(const GrayImage &image, const char *what) {
  if (image.width <= 0 || image.height <= 0 ||
      image.intensities.size() != static_cast<std::size_t>(image.width) * image.height)
    throw ValidationError(std::string(what) + ": image is empty or partially filled");
}

GrayImage gaussian_blur(const GrayImage &image, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double &w : kernel) w /= total;

  const int W = image.width, H = image.height;
  auto clampi = [](int x, int n) { return std::min(std::max(x, 0), n - 1); };
  GrayImage tmp = image, out = image;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * image.at(clampi(u + k, W), v);
      tmp.at(u, v) = acc;
    }
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * tmp.at(u, clampi(v + k, H));
      out.at(u, v) = acc;
    }
  return out;
}

double sample_bilinear_px(const GrayImage &image, double x, double y) {
  const int W = image.width, H = image.height;
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  const int x0 = std::min(static_cast<int>(x), W - 2 >= 0 ? W - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), H - 2 >= 0 ? H - 2 : 0);
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * image.at(x0, y0) + fx * (1 - fy) * image.at(x1, y0) +
         (1 - fx) * fy * image.at(x0, y1) + fx * fy * image.at(x1, y1);
}

GrayImage downscale_bilinear(const GrayImage &image, double scale) {
  GrayImage out;
  out.width = std::max(1, static_cast<int>(std::floor(image.width * scale)));
  out.height = std::max(1, static_cast<int>(std::floor(image.height * scale)));
  out.intensities.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u)
      out.at(u, v) = sample_bilinear_px(image, u / scale, v / scale);
  return out;
}

// Angular distance wrapped to [0, pi]; level-line angles keep their polarity,
// so the two sides of a thin stripe never merge into one region.
double angle_distance(double a, double b) {
  double d = std::fmod(a - b, 2.0 * kPi);
  if (d < -kPi) d += 2.0 * kPi;
  if (d > kPi) d -= 2.0 * kPi;
  return std::abs(d);
}

struct GradientField {
  int width = 0, height = 0;  // one less than the image in each dimension
  std::vector<double> magnitude;
  std::vector<double> angle;  // level-line orientation

  double mag(int x, int y) const { return magnitude[static_cast<std::size_t>(y) * width + x]; }
  double ang(int x, int y) const { return angle[static_cast<std::size_t>(y) * width + x]; }
};

// 2x2 difference scheme; the sample for cell (x, y) lives at pixel
// coordinates (x + 0.5, y + 0.5).
GradientField compute_gradient_2x2(const GrayImage &image) {
  GradientField g;
  g.width = image.width - 1;
  g.height = image.height - 1;
  g.magnitude.assign(static_cast<std::size_t>(g.width) * g.height, 0.0);
  g.angle.assign(static_cast<std::size_t>(g.width) * g.height, 0.0);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const double a = image.at(x, y), b = image.at(x + 1, y);
      const double c = image.at(x, y + 1), d = image.at(x + 1, y + 1);
      const double gx = 0.5 * (b + d - a - c);
      const double gy = 0.5 * (c + d - a - b);
      const std::size_t i = static_cast<std::size_t>(y) * g.width + x;
      g.magnitude[i] = std::hypot(gx, gy);
      g.angle[i] = std::atan2(gx, -gy);
    }
  return g;
}

struct RegionPixel {
  int x = 0, y = 0;
};

}  // namespace

double LineSegment::angle() const {
  double a = std::atan2(y2 - y1, x2 - x1);
  if (a < 0) a += kPi;
  if (a >= kPi) a -= kPi;
  return a;
}

namespace {

// Rectangle summary of a support region: magnitude-weighted centroid plus the
// principal axis of the second-moment matrix, extents from projections.
struct RectFit {
  double cx = 0, cy = 0;      // centroid
  double ax = 0, ay = 0;      // unit main axis
  double smin = 0, smax = 0;  // extents along the axis
  double length = 0, width = 0, density = 0;
  bool ok = false;
};

RectFit fit_rectangle(const GradientField &grad, const std::vector<RegionPixel> &region) {
  RectFit r;
  double wsum = 0.0;
  for (const RegionPixel &p : region) {
    const double w = grad.mag(p.x, p.y);
    wsum += w;
    r.cx += w * (p.x + 0.5);
    r.cy += w * (p.y + 0.5);
  }
  if (wsum <= 0.0) return r;
  r.cx /= wsum;
  r.cy /= wsum;
  double ixx = 0.0, iyy = 0.0, ixy = 0.0;
  for (const RegionPixel &p : region) {
    const double w = grad.mag(p.x, p.y);
    const double dx = p.x + 0.5 - r.cx, dy = p.y + 0.5 - r.cy;
    ixx += w * dx * dx;
    iyy += w * dy * dy;
    ixy += w * dx * dy;
  }
  ixx /= wsum;
  iyy /= wsum;
  ixy /= wsum;
  const double half_tr = 0.5 * (ixx + iyy);
  const double disc = std::sqrt(std::max(0.0, half_tr * half_tr - (ixx * iyy - ixy * ixy)));
  const double lambda = half_tr + disc;
  double ax = lambda - iyy, ay = ixy;
  if (std::hypot(ax, ay) < 1e-12) {
    ax = ixy;
    ay = lambda - ixx;
  }
  const double an = std::hypot(ax, ay);
  if (an < 1e-12) return r;  // isotropic blob, no direction
  r.ax = ax / an;
  r.ay = ay / an;

  bool first = true;
  for (const RegionPixel &p : region) {
    const double dx = p.x + 0.5 - r.cx, dy = p.y + 0.5 - r.cy;
    const double s = dx * r.ax + dy * r.ay;
    if (first) {
      r.smin = r.smax = s;
      first = false;
    } else {
      r.smin = std::min(r.smin, s);
      r.smax = std::max(r.smax, s);
    }
  }
  // Length from the extreme projections (the endpoints must span the region),
  // one extra unit for the footprint of the cells themselves. Width from the
  // second moment: a uniform rectangle of width w has cross variance w^2/12,
  // which is robust to single rows of ragged support.
  r.length = (r.smax - r.smin) + 1.0;
  const double lambda_min = std::max(0.0, half_tr - disc);
  r.width = std::max(1.0, std::sqrt(12.0 * lambda_min));
  r.density = static_cast<double>(region.size()) / (r.length * r.width);
  r.ok = true;
  return r;
}

}  // namespace

std::vector<LineSegment> detect_line_segments(const GrayImage &image) {
  require_filled(image, "detect_line_segments");
  std::vector<LineSegment> segments;
  if (image.width < 4 || image.height < 4) return segments;

  // Blur at the equivalent original-resolution sigma, then shrink; gradients
  // are taken on the shrunk grid and endpoints mapped back at the end.
  const GrayImage blurred = gaussian_blur(image, kScaledSigma / kScale);
  const GrayImage small = downscale_bilinear(blurred, kScale);
  if (small.width < 3 || small.height < 3) return segments;
  const GradientField grad = compute_gradient_2x2(small);

  const double rho = gradient_threshold();
  const double tau = angle_tol_rad();
  const int GW = grad.width, GH = grad.height;
  const std::size_t n_cells = static_cast<std::size_t>(GW) * GH;

  // Seeds in pseudo-descending magnitude order via bucket sort.
  double max_mag = 0.0;
  for (double m : grad.magnitude) max_mag = std::max(max_mag, m);
  if (max_mag <= rho) return segments;
  constexpr int kBins = 1024;
  std::vector<std::vector<int>> bins(kBins);
  for (std::size_t i = 0; i < n_cells; ++i) {
    if (grad.magnitude[i] <= rho) continue;
    int b = static_cast<int>(grad.magnitude[i] / max_mag * (kBins - 1));
    bins[std::min(std::max(b, 0), kBins - 1)].push_back(static_cast<int>(i));
  }

  std::vector<char> used(n_cells, 0);
  std::vector<RegionPixel> region;
  std::vector<int> frontier;

  // Grow an 8-connected region of cells whose level-line orientation stays
  // within `tol` of the running mean direction.
  const auto grow_region = [&](int seed, double tol) {
    region.clear();
    frontier.clear();
    used[seed] = 1;
    region.push_back({seed % GW, seed / GW});
    frontier.push_back(seed);
    double theta = grad.angle[seed];
    double sum_cos = std::cos(theta), sum_sin = std::sin(theta);
    for (std::size_t f = 0; f < frontier.size(); ++f) {
      const int cx = frontier[f] % GW, cy = frontier[f] / GW;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= GW || ny >= GH) continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * GW + nx;
          if (used[ni] || grad.magnitude[ni] <= rho) continue;
          if (angle_distance(grad.angle[ni], theta) > tol) continue;
          used[ni] = 1;
          region.push_back({nx, ny});
          frontier.push_back(static_cast<int>(ni));
          sum_cos += std::cos(grad.angle[ni]);
          sum_sin += std::sin(grad.angle[ni]);
          theta = std::atan2(sum_sin, sum_cos);
        }
    }
  };
  const auto release_region = [&]() {
    for (const RegionPixel &p : region)
      used[static_cast<std::size_t>(p.y) * GW + p.x] = 0;
  };

  for (int b = kBins - 1; b >= 0; --b) {
    for (int seed : bins[b]) {
      if (used[seed]) continue;
      const double sx = seed % GW + 0.5, sy = seed / GW + 0.5;

      grow_region(seed, tau);
      if (static_cast<int>(region.size()) < kMinRegionSize) continue;
      RectFit rect = fit_rectangle(grad, region);

      // Low density means the region leaked into unrelated structure.
      // Recover as in the classic detector: first re-grow with a tolerance
      // matched to the angle spread near the seed, then shrink the region
      // radius until the rectangle is dense enough.
      if (rect.ok && rect.density < kMinDensity) {
        double sum = 0.0, sum2 = 0.0;
        int n_near = 0;
        const double near_r2 = rect.width * rect.width;
        for (const RegionPixel &p : region) {
          const double dx = p.x + 0.5 - sx, dy = p.y + 0.5 - sy;
          if (dx * dx + dy * dy > near_r2) continue;
          double d = std::fmod(grad.ang(p.x, p.y) - grad.angle[seed], 2.0 * kPi);
          if (d < -kPi) d += 2.0 * kPi;
          if (d > kPi) d -= 2.0 * kPi;
          sum += d;
          sum2 += d * d;
          ++n_near;
        }
        if (n_near > 1) {
          const double mean = sum / n_near;
          const double tol2 = 2.0 * std::sqrt(std::max(0.0, sum2 / n_near - mean * mean));
          if (tol2 > 0.0 && tol2 < tau) {
            release_region();
            grow_region(seed, tol2);
            rect = fit_rectangle(grad, region);
          }
        }
        for (int pass = 0; pass < 6 && rect.ok && rect.density < kMinDensity; ++pass) {
          double radius2 = 0.0;
          for (const RegionPixel &p : region) {
            const double dx = p.x + 0.5 - sx, dy = p.y + 0.5 - sy;
            radius2 = std::max(radius2, dx * dx + dy * dy);
          }
          const double keep2 = radius2 * 0.75 * 0.75;
          std::vector<RegionPixel> kept;
          kept.reserve(region.size());
          for (const RegionPixel &p : region) {
            const double dx = p.x + 0.5 - sx, dy = p.y + 0.5 - sy;
            if (dx * dx + dy * dy <= keep2) {
              kept.push_back(p);
            } else {
              used[static_cast<std::size_t>(p.y) * GW + p.x] = 0;
            }
          }
          region.swap(kept);
          if (static_cast<int>(region.size()) < kMinRegionSize) break;
          rect = fit_rectangle(grad, region);
        }
      }

      if (!rect.ok) continue;
      if (static_cast<int>(region.size()) < kMinRegionSize) continue;
      if (rect.density < kMinDensity) continue;
      if (rect.length / kScale < kMinLengthPx) continue;

      LineSegment seg;
      seg.x1 = (rect.cx + rect.ax * rect.smin) / kScale;
      seg.y1 = (rect.cy + rect.ay * rect.smin) / kScale;
      seg.x2 = (rect.cx + rect.ax * rect.smax) / kScale;
      seg.y2 = (rect.cy + rect.ay * rect.smax) / kScale;
      seg.width = rect.width / kScale;
      segments.push_back(seg);
    }
  }
  return segments;
}

EdgePixelSet rasterize_segments(const std::vector<LineSegment> &segments, int width,
                                int height) {
  if (width <= 0 || height <= 0)
    throw ValidationError("rasterize_segments: non-positive raster dimensions");
  std::vector<EdgePixel> pixels;
  for (const LineSegment &seg : segments) {
    int x0 = static_cast<int>(std::lround(seg.x1));
    int y0 = static_cast<int>(std::lround(seg.y1));
    const int x1 = static_cast<int>(std::lround(seg.x2));
    const int y1 = static_cast<int>(std::lround(seg.y2));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      if (x0 >= 0 && y0 >= 0 && x0 < width && y0 < height)
        pixels.push_back({x0, y0});
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  std::sort(pixels.begin(), pixels.end());
  pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
  EdgePixelSet out;
  out.pixels = std::move(pixels);
  return out;
}

namespace {

// 3x3 Sobel responses on the 0-255 intensity scale; the one-pixel border has
// no full window and reports zero.
void sobel_gradients(const GrayImage &image, std::vector<double> &gx,
                     std::vector<double> &gy, std::vector<double> &mag) {
  const int W = image.width, H = image.height;
  gx.assign(static_cast<std::size_t>(W) * H, 0.0);
  gy.assign(static_cast<std::size_t>(W) * H, 0.0);
  mag.assign(static_cast<std::size_t>(W) * H, 0.0);
  for (int v = 1; v + 1 < H; ++v)
    for (int u = 1; u + 1 < W; ++u) {
      const double sx = (image.at(u + 1, v - 1) + 2.0 * image.at(u + 1, v) +
                         image.at(u + 1, v + 1)) -
                        (image.at(u - 1, v - 1) + 2.0 * image.at(u - 1, v) +
                         image.at(u - 1, v + 1));
      const double sy = (image.at(u - 1, v + 1) + 2.0 * image.at(u, v + 1) +
                         image.at(u + 1, v + 1)) -
                        (image.at(u - 1, v - 1) + 2.0 * image.at(u, v - 1) +
                         image.at(u + 1, v - 1));
      const std::size_t i = static_cast<std::size_t>(v) * W + u;
      gx[i] = sx * 255.0;
      gy[i] = sy * 255.0;
      mag[i] = std::hypot(gx[i], gy[i]);
    }
}

void require_band(double low, double high, const char *what) {
  if (!(low >= 0.0) || !(high > low))
    throw ValidationError(std::string(what) + ": thresholds must satisfy 0 <= low < high");
}

}  // namespace

EdgePixelSet sobel_edges(const GrayImage &image, double low, double high) {
  require_filled(image, "sobel_edges");
  require_band(low, high, "sobel_edges");
  std::vector<double> gx, gy, mag;
  sobel_gradients(image, gx, gy, mag);
  EdgePixelSet out;
  for (int v = 1; v + 1 < image.height; ++v)
    for (int u = 1; u + 1 < image.width; ++u) {
      const double g = mag[static_cast<std::size_t>(v) * image.width + u];
      if (g > low && g <= high) out.pixels.push_back({u, v});
    }
  return out;  // row-major construction is already (v, u)-sorted and unique
}

EdgePixelSet canny_edges(const GrayImage &image, double low, double high) {
  require_filled(image, "canny_edges");
  require_band(low, high, "canny_edges");
  const GrayImage blurred = gaussian_blur(image, 1.4);
  std::vector<double> gx, gy, mag;
  sobel_gradients(blurred, gx, gy, mag);

  const int W = image.width, H = image.height;
  std::vector<double> thinned(static_cast<std::size_t>(W) * H, 0.0);
  for (int v = 1; v + 1 < H; ++v)
    for (int u = 1; u + 1 < W; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * W + u;
      if (mag[i] <= 0.0) continue;
      // Quantize the gradient direction to one of four axes and compare with
      // the two neighbours along it.
      double a = std::atan2(gy[i], gx[i]) * 180.0 / kPi;
      if (a < 0) a += 180.0;
      int du = 1, dv = 0;
      if (a >= 22.5 && a < 67.5) {
        du = 1;
        dv = 1;
      } else if (a >= 67.5 && a < 112.5) {
        du = 0;
        dv = 1;
      } else if (a >= 112.5 && a < 157.5) {
        du = -1;
        dv = 1;
      }
      const double fwd = mag[static_cast<std::size_t>(v + dv) * W + (u + du)];
      const double back = mag[static_cast<std::size_t>(v - dv) * W + (u - du)];
      // Ties break toward the back neighbour so a symmetric two-pixel ridge
      // thins to exactly one pixel.
      if (mag[i] > back && mag[i] >= fwd) thinned[i] = mag[i];
    }

  // Double threshold with hysteresis: strong responses seed a flood fill that
  // may pass through weak ones.
  std::vector<char> state(static_cast<std::size_t>(W) * H, 0);  // 1 weak, 2 strong
  std::queue<int> work;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * W + u;
      if (thinned[i] > high) {
        state[i] = 2;
        work.push(static_cast<int>(i));
      } else if (thinned[i] > low) {
        state[i] = 1;
      }
    }
  while (!work.empty()) {
    const int i = work.front();
    work.pop();
    const int u = i % W, v = i / W;
    for (int dv = -1; dv <= 1; ++dv)
      for (int du = -1; du <= 1; ++du) {
        if (du == 0 && dv == 0) continue;
        const int nu = u + du, nv = v + dv;
        if (nu < 0 || nv < 0 || nu >= W || nv >= H) continue;
        const std::size_t ni = static_cast<std::size_t>(nv) * W + nu;
        if (state[ni] == 1) {
          state[ni] = 2;
          work.push(static_cast<int>(ni));
        }
      }
  }
  EdgePixelSet out;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u)
      if (state[static_cast<std::size_t>(v) * W + u] == 2) out.pixels.push_back({u, v});
  return out;
}

EdgePixelSet extract_edge_pixels(const GrayImage &image, const PipelineConfig &config) {
  switch (config.edge_source) {
    case EdgeSource2D::kLsd:
      return rasterize_segments(detect_line_segments(image), image.width, image.height);
    case EdgeSource2D::kSobel:
      return sobel_edges(image, config.sobel_low, config.sobel_high);
    case EdgeSource2D::kCanny:
      return canny_edges(image, config.canny_low, config.canny_high);
  }
  throw ValidationError("extract_edge_pixels: unknown edge source");
}

}  // namespace edgereg
