#include "edgereg/dataio.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace edgereg {

using nlohmann::json;

GrayImage GrayImage::filled(int w, int h, double value) {
  GrayImage img;
  img.width = w;
  img.height = h;
  img.intensities.assign(static_cast<std::size_t>(w) * h, value);
  return img;
}

RgbImage RgbImage::from_gray(const GrayImage &g) {
  RgbImage img;
  img.width = g.width;
  img.height = g.height;
  img.rgb.resize(static_cast<std::size_t>(g.width) * g.height * 3);
  for (std::size_t i = 0; i < g.intensities.size(); ++i) {
    const double v = std::clamp(g.intensities[i], 0.0, 1.0);
    const auto byte = static_cast<std::uint8_t>(std::lround(v * 255.0));
    img.rgb[i * 3 + 0] = byte;
    img.rgb[i * 3 + 1] = byte;
    img.rgb[i * 3 + 2] = byte;
  }
  return img;
}

void RgbImage::set(int u, int v, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const std::size_t i = (static_cast<std::size_t>(v) * width + u) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

void PipelineConfig::validate() const {
  auto positive = [](double v, const char *name) {
    if (!(v > 0.0)) throw ValidationError(std::string(name) + " must be > 0");
  };
  positive(eps_depth, "eps_depth");
  positive(eps_reflect, "eps_reflect");
  positive(eps_corr, "eps_corr");
  positive(ransac_threshold_px, "ransac_threshold_px");
  positive(sa_radius1, "sa_radius1");
  positive(sa_radius2, "sa_radius2");
  positive(aug_max_xy, "aug_max_xy");
  if (feature_dim < 4) throw ValidationError("feature_dim must be >= 4");
  if (fps_count > point_downsample)
    throw ValidationError("fps_count must be <= point_downsample");
  if (exchange_blocks < 1) throw ValidationError("exchange_blocks must be >= 1");
  if (attention_heads < 1 || feature_dim % attention_heads != 0)
    throw ValidationError("attention_heads must divide feature_dim");
  if (!(ransac_confidence > 0.0 && ransac_confidence < 1.0))
    throw ValidationError("ransac_confidence must lie in (0,1)");
  if (ransac_max_iters < 1) throw ValidationError("ransac_max_iters must be >= 1");
  if (!(sobel_low >= 0.0 && sobel_low < sobel_high))
    throw ValidationError("sobel thresholds must satisfy 0 <= low < high");
  if (!(canny_low >= 0.0 && canny_low < canny_high))
    throw ValidationError("canny thresholds must satisfy 0 <= low < high");
  if (max_edge_pixels < 4 || max_edge_points < 4)
    throw ValidationError("per-frame edge caps must be >= 4");
}

EdgeSource2D parse_edge_source(const std::string &name) {
  if (name == "lsd") return EdgeSource2D::kLsd;
  if (name == "sobel") return EdgeSource2D::kSobel;
  if (name == "canny") return EdgeSource2D::kCanny;
  throw ValidationError("unknown 2D edge source: " + name);
}

EdgeMode3D parse_edge_mode(const std::string &name) {
  if (name == "depth" || name == "depth-only") return EdgeMode3D::kDepthOnly;
  if (name == "reflect" || name == "reflectance" || name == "reflect-only")
    return EdgeMode3D::kReflectOnly;
  if (name == "both" || name == "combined") return EdgeMode3D::kCombined;
  throw ValidationError("unknown 3D edge mode: " + name);
}

std::string edge_source_name(EdgeSource2D s) {
  switch (s) {
    case EdgeSource2D::kLsd: return "lsd";
    case EdgeSource2D::kSobel: return "sobel";
    case EdgeSource2D::kCanny: return "canny";
  }
  return "?";
}

std::string edge_mode_name(EdgeMode3D m) {
  switch (m) {
    case EdgeMode3D::kDepthOnly: return "depth";
    case EdgeMode3D::kReflectOnly: return "reflect";
    case EdgeMode3D::kCombined: return "both";
  }
  return "?";
}

namespace {

json config_to_json(const PipelineConfig &c) {
  return json{{"eps_depth", c.eps_depth},
              {"eps_reflect", c.eps_reflect},
              {"eps_corr", c.eps_corr},
              {"edge_source", edge_source_name(c.edge_source)},
              {"edge_mode", edge_mode_name(c.edge_mode)},
              {"sobel_low", c.sobel_low},
              {"sobel_high", c.sobel_high},
              {"canny_low", c.canny_low},
              {"canny_high", c.canny_high},
              {"feature_dim", c.feature_dim},
              {"point_downsample", c.point_downsample},
              {"fps_count", c.fps_count},
              {"exchange_blocks", c.exchange_blocks},
              {"attention_heads", c.attention_heads},
              {"exchange_enabled", c.exchange_enabled},
              {"layer_norm", c.layer_norm},
              {"sa_radius1", c.sa_radius1},
              {"sa_radius2", c.sa_radius2},
              {"sa_k_max", c.sa_k_max},
              {"max_edge_pixels", c.max_edge_pixels},
              {"max_edge_points", c.max_edge_points},
              {"lambda_fov", c.lambda_fov},
              {"lambda_sigma", c.lambda_sigma},
              {"lambda_match", c.lambda_match},
              {"learning_rate", c.learning_rate},
              {"grad_clip", c.grad_clip},
              {"aug_max_xy", c.aug_max_xy},
              {"ransac_threshold_px", c.ransac_threshold_px},
              {"ransac_confidence", c.ransac_confidence},
              {"ransac_max_iters", c.ransac_max_iters},
              {"min_match_confidence", c.min_match_confidence},
              {"seed", c.seed}};
}

PipelineConfig config_from_json(const json &j) {
  PipelineConfig c;
  const json defaults = config_to_json(c);
  for (const auto &item : j.items()) {
    if (!defaults.contains(item.key()))
      throw FormatError("unknown config key: " + item.key());
  }
  auto get = [&](const char *key, auto &field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("eps_depth", c.eps_depth);
  get("eps_reflect", c.eps_reflect);
  get("eps_corr", c.eps_corr);
  if (j.contains("edge_source")) c.edge_source = parse_edge_source(j.at("edge_source"));
  if (j.contains("edge_mode")) c.edge_mode = parse_edge_mode(j.at("edge_mode"));
  get("sobel_low", c.sobel_low);
  get("sobel_high", c.sobel_high);
  get("canny_low", c.canny_low);
  get("canny_high", c.canny_high);
  get("feature_dim", c.feature_dim);
  get("point_downsample", c.point_downsample);
  get("fps_count", c.fps_count);
  get("exchange_blocks", c.exchange_blocks);
  get("attention_heads", c.attention_heads);
  get("exchange_enabled", c.exchange_enabled);
  get("layer_norm", c.layer_norm);
  get("sa_radius1", c.sa_radius1);
  get("sa_radius2", c.sa_radius2);
  get("sa_k_max", c.sa_k_max);
  get("max_edge_pixels", c.max_edge_pixels);
  get("max_edge_points", c.max_edge_points);
  get("lambda_fov", c.lambda_fov);
  get("lambda_sigma", c.lambda_sigma);
  get("lambda_match", c.lambda_match);
  get("learning_rate", c.learning_rate);
  get("grad_clip", c.grad_clip);
  get("aug_max_xy", c.aug_max_xy);
  get("ransac_threshold_px", c.ransac_threshold_px);
  get("ransac_confidence", c.ransac_confidence);
  get("ransac_max_iters", c.ransac_max_iters);
  get("min_match_confidence", c.min_match_confidence);
  get("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace

PipelineConfig pipeline_config_from_json_text(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string pipeline_config_to_json_text(const PipelineConfig &cfg) {
  return config_to_json(cfg).dump(2) + "\n";
}

PipelineConfig load_pipeline_config(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return pipeline_config_from_json_text(buf.str());
}

void save_pipeline_config(const PipelineConfig &cfg, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open config for writing: " + path);
  os << pipeline_config_to_json_text(cfg);
  if (!os) throw IoError("config write failed: " + path);
}

PointCloud read_point_cloud_bin(const std::string &path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open point cloud: " + path);
  const std::streamoff bytes = is.tellg();
  if (bytes % 16 != 0)
    throw FormatError("point cloud size " + std::to_string(bytes) +
                      " is not a multiple of 16: " + path);
  is.seekg(0);
  PointCloud cloud;
  cloud.points.resize(static_cast<std::size_t>(bytes / 16));
  std::vector<float> raw(static_cast<std::size_t>(bytes / 4));
  if (bytes > 0) {
    is.read(reinterpret_cast<char *>(raw.data()), bytes);
    if (!is) throw IoError("short read on point cloud: " + path);
  }
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    cloud.points[i].x = raw[i * 4 + 0];
    cloud.points[i].y = raw[i * 4 + 1];
    cloud.points[i].z = raw[i * 4 + 2];
    cloud.points[i].reflectance = raw[i * 4 + 3];
  }
  return cloud;
}

void write_point_cloud_bin(const std::string &path, const PointCloud &cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open point cloud for writing: " + path);
  std::vector<float> raw(cloud.size() * 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    raw[i * 4 + 0] = static_cast<float>(cloud.points[i].x);
    raw[i * 4 + 1] = static_cast<float>(cloud.points[i].y);
    raw[i * 4 + 2] = static_cast<float>(cloud.points[i].z);
    raw[i * 4 + 3] = static_cast<float>(cloud.points[i].reflectance);
  }
  if (!raw.empty())
    os.write(reinterpret_cast<const char *>(raw.data()),
             static_cast<std::streamsize>(raw.size() * 4));
  if (!os) throw IoError("point cloud write failed: " + path);
}

namespace {

// PNM header token reader: skips whitespace and '#' comment lines.
int next_pnm_int(std::istream &is, const std::string &path) {
  for (;;) {
    const int c = is.peek();
    if (c == EOF) throw FormatError("truncated image header: " + path);
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    break;
  }
  int value;
  if (!(is >> value)) throw FormatError("malformed image header: " + path);
  return value;
}

}  // namespace

GrayImage load_grayscale(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  std::string magic;
  is >> magic;
  const bool ascii = magic == "P2" || magic == "P3";
  const bool rgb = magic == "P3" || magic == "P6";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw FormatError("unsupported image codec '" + magic + "': " + path);

  const int width = next_pnm_int(is, path);
  const int height = next_pnm_int(is, path);
  const int maxval = next_pnm_int(is, path);
  if (width <= 0 || height <= 0) throw FormatError("bad image dimensions: " + path);
  if (maxval <= 0 || maxval > 255)
    throw FormatError("only 8-bit images supported (maxval " + std::to_string(maxval) +
                      "): " + path);

  const std::size_t samples = static_cast<std::size_t>(width) * height * (rgb ? 3 : 1);
  std::vector<double> raw(samples);
  if (ascii) {
    for (std::size_t i = 0; i < samples; ++i) {
      int v;
      if (!(is >> v)) throw FormatError("truncated image data: " + path);
      raw[i] = v;
    }
  } else {
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> bytes(samples);
    is.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(samples));
    if (static_cast<std::size_t>(is.gcount()) != samples)
      throw FormatError("truncated image data: " + path);
    for (std::size_t i = 0; i < samples; ++i) raw[i] = bytes[i];
  }

  GrayImage img;
  img.width = width;
  img.height = height;
  img.intensities.resize(static_cast<std::size_t>(width) * height);
  const double scale = 1.0 / maxval;
  for (std::size_t i = 0; i < img.intensities.size(); ++i) {
    if (rgb) {
      img.intensities[i] =
          (0.299 * raw[i * 3] + 0.587 * raw[i * 3 + 1] + 0.114 * raw[i * 3 + 2]) * scale;
    } else {
      img.intensities[i] = raw[i] * scale;
    }
  }
  return img;
}

void write_graymap(const std::string &path, const GrayImage &image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open image for writing: " + path);
  os << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.intensities.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(image.intensities[i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char *>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("image write failed: " + path);
}

void write_pixmap(const std::string &path, const RgbImage &image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open image for writing: " + path);
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char *>(image.rgb.data()),
           static_cast<std::streamsize>(image.rgb.size()));
  if (!os) throw IoError("image write failed: " + path);
}

KittiCalibration parse_kitti_calibration(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open calibration: " + path);
  std::vector<double> p2, tr;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    std::vector<double> *target = nullptr;
    if (tag == "P2:") target = &p2;
    else if (tag == "Tr:" || tag == "Tr_velo_to_cam:") target = &tr;
    else continue;
    double v;
    while (ls >> v) target->push_back(v);
  }
  if (p2.size() != 12)
    throw FormatError("calibration P2 line must carry 12 floats, got " +
                      std::to_string(p2.size()) + ": " + path);
  if (tr.size() != 12)
    throw FormatError("calibration Tr line must carry 12 floats, got " +
                      std::to_string(tr.size()) + ": " + path);

  KittiCalibration calib;
  calib.K.fx = p2[0];
  calib.K.fy = p2[5];
  calib.K.cx = p2[2];
  calib.K.cy = p2[6];
  if (!calib.K.is_valid()) throw FormatError("calibration P2 focal lengths not positive: " + path);

  PoseSE3 tr_pose;
  tr_pose.R << tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10];
  tr_pose.t << tr[3], tr[7], tr[11];

  // Fold P2's baseline column into the extrinsic: t_b = K^-1 * P2[:,3].
  // Composed as pure-translation * Tr, so Tr's rotation block is kept verbatim;
  // re-orthonormalizing here would break exact agreement with P2 * Tr.
  const double bz = p2[11];
  const double bx = (p2[3] - calib.K.cx * bz) / calib.K.fx;
  const double by = (p2[7] - calib.K.cy * bz) / calib.K.fy;
  calib.T_gt.R = tr_pose.R;
  calib.T_gt.t = tr_pose.t + Eigen::Vector3d(bx, by, bz);
  return calib;
}

PointCloud downsample_random(const PointCloud &cloud, std::int64_t target, Rng &rng) {
  if (target < 1) throw ValidationError("downsample target must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(cloud.size());
  if (n <= target) return cloud;
  // Sequential selection sampling keeps order and uses one uniform per point.
  PointCloud out;
  out.points.reserve(static_cast<std::size_t>(target));
  std::int64_t needed = target;
  for (std::int64_t i = 0; i < n && needed > 0; ++i) {
    const std::int64_t remaining = n - i;
    if (rng.uniform() * static_cast<double>(remaining) < static_cast<double>(needed)) {
      out.points.push_back(cloud.points[static_cast<std::size_t>(i)]);
      --needed;
    }
  }
  return out;
}

DatasetManifest read_manifest(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error &e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.contains("frames") || !j.at("frames").is_array())
    throw FormatError("manifest lacks a frames array: " + path);
  DatasetManifest m;
  for (const auto &f : j.at("frames")) {
    ManifestEntry e;
    e.cloud_path = f.at("cloud").get<std::string>();
    e.image_path = f.at("image").get<std::string>();
    const auto k = f.at("K");
    if (k.size() != 4) throw FormatError("manifest K must be [fx, fy, cx, cy]");
    e.K.fx = k[0];
    e.K.fy = k[1];
    e.K.cx = k[2];
    e.K.cy = k[3];
    const auto t = f.at("T_gt");
    if (t.size() != 12) throw FormatError("manifest T_gt must be 12 row-major floats");
    e.T_gt.R << t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10];
    e.T_gt.t << t[3], t[7], t[11];
    m.frames.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const DatasetManifest &m, const std::string &path) {
  json frames = json::array();
  for (const auto &e : m.frames) {
    json t = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) t.push_back(e.T_gt.R(r, c));
      t.push_back(e.T_gt.t(r));
    }
    frames.push_back(json{{"cloud", e.cloud_path},
                          {"image", e.image_path},
                          {"K", {e.K.fx, e.K.fy, e.K.cx, e.K.cy}},
                          {"T_gt", t}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open manifest for writing: " + path);
  os << json{{"frames", frames}}.dump(2) << "\n";
  if (!os) throw IoError("manifest write failed: " + path);
}

FramePair load_frame(const ManifestEntry &entry) {
  FramePair f;
  f.cloud = read_point_cloud_bin(entry.cloud_path);
  f.image = load_grayscale(entry.image_path);
  f.K = entry.K;
  f.T_gt = entry.T_gt;
  return f;
}

}  // namespace edgereg
