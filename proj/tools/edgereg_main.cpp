#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "edgereg/errors.hpp"
#include "edgereg/synth.hpp"
#include "edgereg/trainer.hpp"

using namespace edgereg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void emit_error(const std::string &type, const std::string &message) {
  std::cout << json{{"error", {{"type", type}, {"message", message}}}}.dump(2) << "\n";
}

// Runtime failures leave a machine-readable trace on stdout. I/O problems
// (unreadable inputs, unwritable outputs) exit 2, everything else 1.
template <typename Body>
int guarded(Body &&body) {
  try {
    return body();
  } catch (const IoError &e) {
    emit_error("IoError", e.what());
    return 2;
  } catch (const FormatError &e) {
    emit_error("FormatError", e.what());
    return 1;
  } catch (const ValidationError &e) {
    emit_error("ValidationError", e.what());
    return 1;
  } catch (const ContractError &e) {
    emit_error("ContractError", e.what());
    return 1;
  } catch (const NumericError &e) {
    emit_error("NumericError", e.what());
    return 1;
  } catch (const DegeneracyError &e) {
    emit_error("DegeneracyError", e.what());
    return 1;
  } catch (const Error &e) {
    emit_error("Error", e.what());
    return 1;
  } catch (const std::exception &e) {
    emit_error("InternalError", e.what());
    return 1;
  }
}

int env_threads() {
  const char *v = std::getenv("EDGEREG_THREADS");
  if (v == nullptr) return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

// "source:mode" sets both halves; a bare token sets whichever half it names.
void apply_edge_mode(PipelineConfig &cfg, const std::string &value) {
  const auto colon = value.find(':');
  if (colon != std::string::npos) {
    cfg.edge_source = parse_edge_source(value.substr(0, colon));
    cfg.edge_mode = parse_edge_mode(value.substr(colon + 1));
    return;
  }
  try {
    cfg.edge_mode = parse_edge_mode(value);
    return;
  } catch (const ValidationError &) {
  }
  cfg.edge_source = parse_edge_source(value);
}

struct CommonOptions {
  std::string config_path;
  std::string checkpoint;
  std::string edge_mode;
  std::uint64_t seed = 0;
  std::int64_t blocks = 0;
  double eps_c = 0.0;
};

void add_common(CLI::App *cmd, CommonOptions &o) {
  cmd->add_option("--config", o.config_path,
                  "pipeline config JSON (all fields optional); defaults apply when omitted");
  cmd->add_option("--seed", o.seed, "seed override for every random choice");
  cmd->add_option("--checkpoint", o.checkpoint, "parameter checkpoint to load");
  cmd->add_option("--edge-mode", o.edge_mode,
                  "edge ablation switch, {lsd|sobel|canny}:{depth|reflect|both} or either half");
  cmd->add_option("--blocks", o.blocks, "number of feature exchange blocks");
  cmd->add_option("--eps-c", o.eps_c, "ground-truth pairing radius in pixels");
}

PipelineConfig resolve_config(const CLI::App *cmd, const CommonOptions &o) {
  PipelineConfig cfg;
  if (!o.config_path.empty()) cfg = load_pipeline_config(o.config_path);
  if (cmd->count("--seed") > 0) cfg.seed = o.seed;
  if (!o.edge_mode.empty()) apply_edge_mode(cfg, o.edge_mode);
  if (cmd->count("--blocks") > 0) cfg.exchange_blocks = o.blocks;
  if (cmd->count("--eps-c") > 0) cfg.eps_corr = o.eps_c;
  cfg.validate();
  return cfg;
}

Pipeline make_pipeline(const PipelineConfig &cfg, const std::string &checkpoint) {
  Pipeline pipe(cfg);
  if (!checkpoint.empty()) pipe.load_checkpoint(checkpoint);
  return pipe;
}

// KITTI-style per-frame calibration: P2 carries the intrinsics, Tr the exact
// scan-to-camera pose, so parse_kitti_calibration recovers both verbatim.
void write_synth_calib(const std::string &path, const CameraIntrinsics &K, const PoseSE3 &T) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open calibration for writing: " + path);
  os.precision(17);
  os << "P2: " << K.fx << " 0 " << K.cx << " 0 0 " << K.fy << " " << K.cy << " 0 0 0 1 0\n";
  os << "Tr:";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << " " << T.R(r, c);
    os << " " << T.t(r);
  }
  os << "\n";
  if (!os) throw IoError("calibration write failed: " + path);
}

// Manifest entries are stored relative to the manifest file.
DatasetManifest load_manifest_resolved(const std::string &path) {
  DatasetManifest m = read_manifest(path);
  const fs::path base = fs::path(path).parent_path();
  for (ManifestEntry &e : m.frames) {
    if (fs::path(e.cloud_path).is_relative()) e.cloud_path = (base / e.cloud_path).string();
    if (fs::path(e.image_path).is_relative()) e.image_path = (base / e.image_path).string();
  }
  return m;
}

std::vector<FramePair> load_frames(const DatasetManifest &m) {
  std::vector<FramePair> frames;
  frames.reserve(m.frames.size());
  for (const ManifestEntry &e : m.frames) frames.push_back(load_frame(e));
  return frames;
}

// Projected scan drawn over the image, nearer returns warm, farther cool.
RgbImage render_overlay(const GrayImage &image, const PointCloud &cloud,
                        const CameraIntrinsics &K, const PoseSE3 &pose) {
  RgbImage out = RgbImage::from_gray(image);
  struct Hit {
    int u, v;
    double range;
  };
  std::vector<Hit> hits;
  double near = std::numeric_limits<double>::infinity();
  double far = -std::numeric_limits<double>::infinity();
  for (const CloudPoint &p : cloud.points) {
    const Projection pr = project_point(K, pose, p.xyz());
    if (!pr.in_front) continue;
    const int u = static_cast<int>(std::lround(pr.u));
    const int v = static_cast<int>(std::lround(pr.v));
    if (!image.in_bounds(u, v)) continue;
    const double range = pose.apply(p.xyz()).norm();
    hits.push_back({u, v, range});
    near = std::min(near, range);
    far = std::max(far, range);
  }
  const double span = far > near ? far - near : 1.0;
  for (const Hit &h : hits) {
    const double s = (h.range - near) / span;
    out.set(h.u, h.v, static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - s))), 64,
            static_cast<std::uint8_t>(std::lround(255.0 * s)));
  }
  return out;
}

PoseSE3 read_pose_file(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file: " + path);
  std::vector<double> v;
  double x;
  while (is >> x) v.push_back(x);
  if (v.size() != 12) {
    throw FormatError("pose file must carry 12 row-major floats (R|t), got " +
                      std::to_string(v.size()) + ": " + path);
  }
  PoseSE3 T;
  T.R << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  T.t << v[3], v[7], v[11];
  if (!T.is_valid(1e-6)) throw ValidationError("pose file is not a rigid transform: " + path);
  return T;
}

int cmd_synth(const std::string &outdir, int count, const PipelineConfig &cfg) {
  std::error_code ec;
  fs::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create output directory " + outdir + ": " + ec.message());
  Rng rng(cfg.seed);
  const SceneSpec spec;
  DatasetManifest manifest;
  for (int i = 0; i < count; ++i) {
    const SyntheticFrame sf = generate_synthetic_frame(rng, spec);
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%06d", i);
    const std::string cloud_name = std::string(stem) + ".bin";
    const std::string image_name = std::string(stem) + ".pgm";
    const std::string calib_name = std::string(stem) + "_calib.txt";
    write_point_cloud_bin((fs::path(outdir) / cloud_name).string(), sf.frame.cloud);
    write_graymap((fs::path(outdir) / image_name).string(), sf.frame.image);
    write_synth_calib((fs::path(outdir) / calib_name).string(), sf.frame.K, sf.frame.T_gt);
    manifest.frames.push_back({cloud_name, image_name, sf.frame.K, sf.frame.T_gt});
  }
  const std::string manifest_path = (fs::path(outdir) / "manifest.json").string();
  write_manifest(manifest, manifest_path);
  std::cout << json{{"frames", count}, {"manifest", manifest_path}}.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string &manifest_path, const PipelineConfig &cfg,
              const std::string &warm_checkpoint, const std::string &out_checkpoint,
              const std::string &log_path, int steps, int batch) {
  const DatasetManifest manifest = load_manifest_resolved(manifest_path);
  if (manifest.frames.empty()) throw ContractError("manifest has no frames: " + manifest_path);
  const std::vector<FramePair> frames = load_frames(manifest);

  Pipeline pipe = make_pipeline(cfg, warm_checkpoint);
  Trainer trainer(pipe, cfg.seed);
  int skipped_steps = 0;
  std::size_t cursor = 0;
  for (int s = 0; s < steps; ++s) {
    std::vector<FramePair> batch_frames;
    batch_frames.reserve(static_cast<std::size_t>(batch));
    for (int k = 0; k < batch; ++k) {
      batch_frames.push_back(frames[cursor % frames.size()]);
      ++cursor;
    }
    try {
      trainer.train_step(batch_frames);
    } catch (const ContractError &e) {
      // Every frame in this batch lacked edges or overlap; move on.
      ++skipped_steps;
      std::cerr << "step " << (s + 1) << " skipped: " << e.what() << "\n";
    }
  }
  pipe.save_checkpoint(out_checkpoint);
  if (!log_path.empty()) {
    std::ofstream os(log_path, std::ios::trunc);
    if (!os) throw IoError("cannot open training log for writing: " + log_path);
    write_training_log(os, trainer.history());
  }
  json out{{"steps", trainer.step()},
           {"skipped_steps", skipped_steps},
           {"frames", manifest.frames.size()},
           {"checkpoint", out_checkpoint}};
  if (!trainer.history().empty()) {
    out["l_total"] = trainer.history().back().l_total;
    out["running_l_total"] = trainer.running().l_total;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_register(const std::string &cloud_path, const std::string &image_path,
                 const std::string &calib_path, const std::vector<double> &intrinsics,
                 const PipelineConfig &cfg, const std::string &checkpoint,
                 const std::string &dump_corr, const std::string &overlay) {
  const Clock::time_point start = Clock::now();
  FramePair frame;
  frame.cloud = read_point_cloud_bin(cloud_path);
  frame.image = load_grayscale(image_path);
  bool has_gt = false;
  if (!calib_path.empty()) {
    const KittiCalibration calib = parse_kitti_calibration(calib_path);
    frame.K = calib.K;
    frame.T_gt = calib.T_gt;
    has_gt = true;
  } else {
    frame.K = {intrinsics[0], intrinsics[1], intrinsics[2], intrinsics[3]};
    frame.T_gt = PoseSE3::identity();
    if (!frame.K.is_valid()) throw ValidationError("--intrinsics focal lengths must be positive");
  }

  Pipeline pipe = make_pipeline(cfg, checkpoint);
  Rng rng(cfg.seed);
  Tape t;
  StageTimings st;
  const ForwardResult fwd = pipe.forward(t, frame, PoseSE3::identity(), rng, &st);
  if (!fwd.usable) throw ContractError("registration failed: " + fwd.diagnostic);

  const CorrespondenceSet corr = extract_correspondences(t.value(fwd.assignment.p), fwd.pixels,
                                                         fwd.points, cfg.min_match_confidence);
  if (!dump_corr.empty()) {
    std::ofstream os(dump_corr, std::ios::trunc);
    if (!os) throw IoError("cannot open correspondence dump for writing: " + dump_corr);
    write_correspondences_csv(os, corr);
  }
  if (corr.size() < 4) {
    throw ContractError("registration failed: only " + std::to_string(corr.size()) +
                        " correspondences, need at least 4");
  }
  const Clock::time_point pose_start = Clock::now();
  const RansacResult res = ransac_epnp(corr, frame.K, cfg, rng);
  const double pose_ms = ms_since(pose_start);
  if (!res.success) throw ContractError("registration failed: no consensus among correspondences");

  if (!overlay.empty()) {
    write_pixmap(overlay, render_overlay(frame.image, frame.cloud, frame.K, res.pose));
  }

  json pose_json{{"r", json::array()}, {"t", json::array()}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) pose_json["r"].push_back(res.pose.R(r, c));
  for (int r = 0; r < 3; ++r) pose_json["t"].push_back(res.pose.t(r));

  json report{{"pose", pose_json},
              {"correspondences", corr.size()},
              {"inliers", res.inlier_count()},
              {"ransac_iterations", res.iterations_used},
              {"mean_inlier_reproj_px", res.mean_inlier_reproj_error},
              {"timings_ms",
               {{"edges_2d", st.edges_2d_ms},
                {"edges_3d", st.edges_3d_ms},
                {"features", st.features_ms},
                {"exchange", st.exchange_ms},
                {"matching", st.matching_ms},
                {"pose", pose_ms},
                {"total", ms_since(start)}}}};
  if (has_gt) {
    const PoseError err = compute_pose_error(frame.T_gt, res.pose);
    report["rre_deg"] = err.rre_deg;
    report["rte_m"] = err.rte_m;
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

json summary_json(const EvaluationSummary &s) {
  return json{{"rte_mean", s.rte_mean},   {"rte_std", s.rte_std},
              {"rre_mean", s.rre_mean},   {"rre_std", s.rre_std},
              {"acc", s.acc},             {"frames", s.frames},
              {"filtered_frames", s.filtered_frames}};
}

int cmd_evaluate(const std::string &manifest_path, const PipelineConfig &cfg,
                 const std::string &checkpoint, bool sweep) {
  const DatasetManifest manifest = load_manifest_resolved(manifest_path);
  if (manifest.frames.empty()) throw ContractError("manifest has no frames: " + manifest_path);
  const std::vector<FramePair> frames = load_frames(manifest);
  const int threads = env_threads();

  const auto run_cell = [&](const PipelineConfig &cell_cfg) {
    Pipeline pipe = make_pipeline(cell_cfg, checkpoint);
    return summary_json(evaluate_dataset(pipe, frames, cell_cfg.seed, threads));
  };

  if (!sweep) {
    std::cout << run_cell(cfg).dump(2) << "\n";
    return 0;
  }
  json cells = json::object();
  for (const EdgeSource2D src : {EdgeSource2D::kLsd, EdgeSource2D::kSobel, EdgeSource2D::kCanny}) {
    for (const EdgeMode3D mode :
         {EdgeMode3D::kDepthOnly, EdgeMode3D::kReflectOnly, EdgeMode3D::kCombined}) {
      PipelineConfig cell = cfg;
      cell.edge_source = src;
      cell.edge_mode = mode;
      cells[edge_source_name(src) + ":" + edge_mode_name(mode)] = run_cell(cell);
    }
  }
  std::cout << cells.dump(2) << "\n";
  return 0;
}

int cmd_visualize(const std::string &cloud_path, const std::string &image_path,
                  const std::string &calib_path, const std::string &pose_path,
                  const std::string &out_path) {
  const PointCloud cloud = read_point_cloud_bin(cloud_path);
  const GrayImage image = load_grayscale(image_path);
  const KittiCalibration calib = parse_kitti_calibration(calib_path);
  const PoseSE3 pose = pose_path.empty() ? calib.T_gt : read_pose_file(pose_path);

  const RgbImage overlay = render_overlay(image, cloud, calib.K, pose);
  write_pixmap(out_path, overlay);

  std::size_t drawn = 0;
  const RgbImage plain = RgbImage::from_gray(image);
  for (std::size_t i = 0; i < overlay.rgb.size(); i += 3) {
    if (overlay.rgb[i] != plain.rgb[i] || overlay.rgb[i + 1] != plain.rgb[i + 1] ||
        overlay.rgb[i + 2] != plain.rgb[i + 2]) {
      ++drawn;
    }
  }
  std::cout << json{{"out", out_path}, {"pixels_drawn", drawn}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Edge-based registration of LiDAR scans against camera images"};
  app.require_subcommand(1);

  CLI::App *synth = app.add_subcommand("synth", "generate a synthetic dataset with ground truth");
  CommonOptions synth_common;
  std::string synth_outdir;
  int synth_count = 10;
  synth->add_option("outdir", synth_outdir, "output directory")->required();
  synth->add_option("--count", synth_count, "number of frames")->check(CLI::PositiveNumber);
  add_common(synth, synth_common);

  CLI::App *train = app.add_subcommand("train", "fit the matching network on a dataset");
  CommonOptions train_common;
  std::string train_manifest, train_out = "edgereg_checkpoint.bin", train_log;
  int train_steps = 100, train_batch = 1;
  train->add_option("manifest", train_manifest, "dataset manifest JSON")->required();
  train->add_option("--out", train_out, "checkpoint to write when done");
  train->add_option("--log", train_log, "training log CSV");
  train->add_option("--steps", train_steps, "optimizer steps")->check(CLI::PositiveNumber);
  train->add_option("--batch", train_batch, "frames per step")->check(CLI::PositiveNumber);
  add_common(train, train_common);

  CLI::App *reg = app.add_subcommand("register", "register one scan against one image");
  CommonOptions reg_common;
  std::string reg_cloud, reg_image, reg_calib, reg_dump_corr, reg_overlay;
  std::vector<double> reg_intrinsics;
  reg->add_option("cloud", reg_cloud, "point cloud .bin (KITTI layout)")->required();
  reg->add_option("image", reg_image, "grayscale image (PGM/PPM)")->required();
  CLI::Option *calib_opt =
      reg->add_option("--calib", reg_calib, "KITTI calibration file (enables rre/rte)");
  reg->add_option("--intrinsics", reg_intrinsics, "fx fy cx cy when no calib file")
      ->expected(4)
      ->excludes(calib_opt);
  reg->add_option("--dump-corr", reg_dump_corr, "write predicted correspondences CSV");
  reg->add_option("--overlay", reg_overlay, "write registered-scan overlay PPM");
  add_common(reg, reg_common);

  CLI::App *eval = app.add_subcommand("evaluate", "evaluate a checkpoint over a dataset");
  CommonOptions eval_common;
  std::string eval_manifest;
  bool eval_sweep = false;
  eval->add_option("manifest", eval_manifest, "dataset manifest JSON")->required();
  eval->add_flag("--sweep", eval_sweep, "run every edge source:mode cell");
  add_common(eval, eval_common);

  CLI::App *vis = app.add_subcommand("visualize", "project a scan over an image");
  std::string vis_cloud, vis_image, vis_calib, vis_pose, vis_out;
  vis->add_option("cloud", vis_cloud, "point cloud .bin")->required();
  vis->add_option("image", vis_image, "grayscale image")->required();
  vis->add_option("calib", vis_calib, "KITTI calibration file")->required();
  vis->add_option("--pose", vis_pose, "pose file, 12 row-major floats (R|t); default calib Tr");
  vis->add_option("--out", vis_out, "output PPM")->required();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    return guarded([&] { return cmd_synth(synth_outdir, synth_count, resolve_config(synth, synth_common)); });
  }
  if (train->parsed()) {
    return guarded([&] {
      return cmd_train(train_manifest, resolve_config(train, train_common), train_common.checkpoint,
                       train_out, train_log, train_steps, train_batch);
    });
  }
  if (reg->parsed()) {
    return guarded([&] {
      if (reg_calib.empty() && reg_intrinsics.empty()) {
        throw ValidationError("register needs --calib or --intrinsics fx fy cx cy");
      }
      return cmd_register(reg_cloud, reg_image, reg_calib, reg_intrinsics,
                          resolve_config(reg, reg_common), reg_common.checkpoint, reg_dump_corr,
                          reg_overlay);
    });
  }
  if (eval->parsed()) {
    return guarded([&] {
      return cmd_evaluate(eval_manifest, resolve_config(eval, eval_common),
                          eval_common.checkpoint, eval_sweep);
    });
  }
  if (vis->parsed()) {
    return guarded([&] { return cmd_visualize(vis_cloud, vis_image, vis_calib, vis_pose, vis_out); });
  }
  return 1;
}
