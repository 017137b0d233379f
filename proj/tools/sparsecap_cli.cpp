#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsecap/bvh.hpp"
#include "sparsecap/calibration.hpp"
#include "sparsecap/errors.hpp"
#include "sparsecap/estimator.hpp"
#include "sparsecap/manifold.hpp"
#include "sparsecap/metrics.hpp"
#include "sparsecap/motion_io.hpp"
#include "sparsecap/pipeline.hpp"
#include "sparsecap/scenario.hpp"

namespace fs = std::filesystem;
using namespace sparsecap;

namespace {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };
Level g_level = Level::kInfo;

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= g_level) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config;
  std::string out_dir = ".";
  std::string log_level = "info";
};

KeyValueConfig load_config(const Globals& g) {
  KeyValueConfig cfg = g.config.empty() ? KeyValueConfig() : KeyValueConfig::load(g.config);
  if (g.seed_set) cfg.set("seed", std::to_string(g.seed));
  return cfg;
}

SkeletonModel skeleton_for(const KeyValueConfig& cfg) {
  const std::string path = cfg.get_string("skeleton", "");
  return path.empty() ? SkeletonModel::mean_body() : read_skeleton_json(path);
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

HeadTrajectory read_head(const std::string& path, double rate) {
  std::vector<RigidTransform> poses;
  for (const TimedPose& p : read_pose_jsonl(path)) poses.push_back(p.pose);
  return HeadTrajectory::from_poses(std::move(poses), rate);
}

std::vector<Rotation> orientations(const std::string& csv) { return parse_watch_csv(csv, 0.0).orientation; }

nlohmann::json rotation_json(const Rotation& r) {
  const Quat4 q = r.quaternion();
  return {q[0], q[1], q[2], q[3]};
}

/// Directories holding scenario-layout recordings: `dir` itself or its sorted subdirectories.
std::vector<fs::path> recording_dirs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("data directory not found: " + dir);
  if (fs::exists(fs::path(dir) / "head.jsonl")) return {fs::path(dir)};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "head.jsonl")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValidationError("no recordings (head.jsonl) under " + dir);
  return out;
}

TrainingSequence training_sequence(const fs::path& dir, const SkeletonModel& skeleton, const FloorParams& floor) {
  PipelineInputs in = load_inputs(dir.string());
  if (!in.truth) throw ValidationError("recording " + dir.string() + " has no motion.jsonl");
  if (in.truth->contacts.size() != in.truth->size()) throw ValidationError("motion in " + dir.string() + " has no contact labels");
  TrainingSequence s;
  s.motion = *in.truth;
  s.head = in.head;
  s.imu = in.imu;
  FloorState state;
  s.floor_levels = track_floor(s.motion.contacts, foot_positions(skeleton, s.motion), in.cloud, state, floor);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-sensor motion capture: estimation, floor tracking and visual refinement"};
  app.require_subcommand(1);
  Globals g;
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s; g.seed_set = true; }, "Random seed");
  app.add_option("--config", g.config, "Key-value configuration file");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--log-level", g.log_level, "error | warn | info | debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  std::map<std::string, std::string> s;  // string option storage
  std::map<std::string, int> n;
  std::map<std::string, double> d;
  std::function<void()> action;

  auto* scenario = app.add_subcommand("scenario", "Generate a synthetic scenario with ground truth");
  scenario->add_option("--kind", s["kind"], "flat-walk | staircase | arm-swing-sync | reach-interaction")->required();
  scenario->add_option("--duration", d["duration"], "Seconds (default per kind)");
  scenario->callback([&] {
    action = [&] {
      KeyValueConfig cfg = load_config(g);
      cfg.set("scenario", s["kind"]);
      if (d.count("duration") && d["duration"] > 0) cfg.set("duration", std::to_string(d["duration"]));
      const SkeletonModel sk = skeleton_for(cfg);
      const Scenario sc = generate_scenario(scenario_spec_from(cfg), sk);
      write_scenario(g.out_dir, sc);
      log(Level::kInfo, "wrote " + std::to_string(sc.motion.size()) + " frames to " + g.out_dir);
    };
  });

  auto* synth = app.add_subcommand("synth-imu", "Synthesize wrist IMU streams from a motion");
  synth->add_option("--motion", s["motion"], "Motion JSON Lines")->required();
  n["span"] = kDefaultSecondDifferenceSpan;
  n["filter"] = 0;
  synth->add_option("--span", n["span"], "Second-difference span n");
  synth->add_option("--filter", n["filter"], "Moving-average window (0 = none)");
  synth->callback([&] {
    action = [&] {
      const KeyValueConfig cfg = load_config(g);
      const MotionSequence m = read_motion_jsonl(s["motion"]);
      ImuStream imu = synthesize_imu(m, skeleton_for(cfg), n["span"]);
      if (n["filter"] > 0) filter_accelerations(imu, n["filter"]);
      write_watch_csv(out_path(g, "imu_left.csv").string(), extract_wrist(imu, kLeft));
      write_watch_csv(out_path(g, "imu_right.csv").string(), extract_wrist(imu, kRight));
      log(Level::kInfo, "wrote imu_left.csv and imu_right.csv");
    };
  });

  auto* calib = app.add_subcommand("calibrate", "Board and T-pose calibration of both wrist sensors");
  for (const char* k : {"board-left", "board-right", "tpose-left", "tpose-right"}) {
    calib->add_option(std::string("--") + k, s[k], "Raw watch CSV")->required();
  }
  calib->add_option("--raw-left", s["raw-left"], "Raw recording to calibrate");
  calib->add_option("--raw-right", s["raw-right"], "Raw recording to calibrate");
  d["max-spread"] = kDefaultMaxSpreadDeg;
  calib->add_option("--max-spread", d["max-spread"], "Largest allowed sample spread, degrees");
  calib->callback([&] {
    action = [&] {
      const KeyValueConfig cfg = load_config(g);
      const auto tpose = tpose_wrist_rotations(skeleton_for(cfg));
      ImuCalibration cal;
      nlohmann::json out;
      const char* sides[2] = {"left", "right"};
      for (int k = 0; k < 2; ++k) {
        const std::string side = sides[k];
        cal.wrists[k].world_from_reference = calibrate_board(orientations(s["board-" + side]), d["max-spread"]);
        cal.wrists[k].sensor_to_joint =
            calibrate_tpose(orientations(s["tpose-" + side]), cal.wrists[k].world_from_reference, tpose[k], d["max-spread"]);
        out[side] = {{"R_g_r", rotation_json(cal.wrists[k].world_from_reference)},
                     {"R_S_j", rotation_json(cal.wrists[k].sensor_to_joint)}};
      }
      std::ofstream(out_path(g, "calibration.json")) << out.dump(2) << "\n";
      if (!s["raw-left"].empty() && !s["raw-right"].empty()) {
        const ImuStream raw = combine_wrists(parse_watch_csv(s["raw-left"]), parse_watch_csv(s["raw-right"]), kDefaultFrameRate);
        const ImuStream calibrated = apply_calibration(raw, cal);
        write_watch_csv(out_path(g, "imu_left.csv").string(), extract_wrist(calibrated, kLeft));
        write_watch_csv(out_path(g, "imu_right.csv").string(), extract_wrist(calibrated, kRight));
      }
      log(Level::kInfo, "wrote calibration.json");
    };
  });

  auto* sync = app.add_subcommand("sync", "Align IMU streams to the head trajectory");
  sync->add_option("--head", s["head"], "Head pose JSON Lines")->required();
  sync->add_option("--imu-left", s["imu-left"], "Left watch CSV")->required();
  sync->add_option("--imu-right", s["imu-right"], "Right watch CSV")->required();
  n["range"] = 30;
  sync->add_option("--range", n["range"], "Largest offset searched, frames");
  sync->callback([&] {
    action = [&] {
      const ImuStream imu = combine_wrists(parse_watch_csv(s["imu-left"]), parse_watch_csv(s["imu-right"]), kDefaultFrameRate);
      const HeadTrajectory head = read_head(s["head"], kDefaultFrameRate);
      const SyncResult r = synchronize(imu, head, n["range"]);
      const ImuStream aligned = shift_stream(imu, r.offset);
      write_watch_csv(out_path(g, "imu_left.csv").string(), extract_wrist(aligned, kLeft));
      write_watch_csv(out_path(g, "imu_right.csv").string(), extract_wrist(aligned, kRight));
      std::cout << nlohmann::json{{"offset", r.offset}, {"score", r.score}, {"runner_up", r.runner_up}}.dump() << "\n";
    };
  });

  auto* estimate = app.add_subcommand("estimate", "Run the motion estimator with floor tracking");
  for (const char* k : {"head", "imu-left", "imu-right", "cloud", "checkpoint", "out"}) {
    estimate->add_option(std::string("--") + k, s[k])->required();
  }
  estimate->callback([&] {
    action = [&] {
      const KeyValueConfig cfg = load_config(g);
      const SkeletonModel sk = skeleton_for(cfg);
      const HeadTrajectory head = read_head(s["head"], kDefaultFrameRate);
      ImuStream imu = combine_wrists(parse_watch_csv(s["imu-left"]), parse_watch_csv(s["imu-right"]), kDefaultFrameRate);
      if (imu.size() < head.size()) throw ValidationError("IMU recording is shorter than the head trajectory");
      imu.frames.resize(head.size());
      const PointCloud cloud = read_point_cloud(s["cloud"], cloud_format_from_path(s["cloud"]));
      const NeuralRegressor reg(std::make_shared<const MotionEstimator>(load_estimator(s["checkpoint"])));
      const InferenceResult r = infer_sequence(head, imu, cloud, reg, sk, inference_options_from(cfg));
      write_motion_jsonl(s["out"], r.motion);
      log(Level::kInfo, "estimated " + std::to_string(r.motion.size()) + " frames; final floor " +
                            std::to_string(r.floor.level) + " m after " + std::to_string(r.floor.history.size()) + " updates");
    };
  });

  auto* train_est = app.add_subcommand("train-estimator", "Train the motion estimator");
  train_est->add_option("--data", s["data"], "Recording directory or directory of recordings")->required();
  n["steps"] = -1;
  train_est->add_option("--steps", n["steps"], "Training steps");
  s["checkpoint"] = "estimator.ckpt";
  train_est->add_option("--checkpoint", s["checkpoint"], "Output checkpoint name");
  train_est->callback([&] {
    action = [&] {
      KeyValueConfig cfg = load_config(g);
      if (n["steps"] >= 0) cfg.set("steps", std::to_string(n["steps"]));
      const SkeletonModel sk = skeleton_for(cfg);
      const EstimatorConfig ec = EstimatorConfig::from(cfg);
      std::vector<TrainingSequence> seqs;
      const FloorParams fp = inference_options_from(cfg).floor;
      for (const auto& dir : recording_dirs(s["data"])) seqs.push_back(training_sequence(dir, sk, fp));
      const WindowDataset data = build_window_dataset(seqs, sk, ec.window, cfg.get_int("stride", ec.window / 2));
      EstimatorTrainingOptions opts = EstimatorTrainingOptions::from(cfg);
      if (opts.log_every == 0) opts.log_every = 100;
      MotionEstimator model(ec, opts.seed);
      const TrainingReport rep = train_estimator(model, data, sk, opts, [](int step, const LossBreakdown& b) {
        log(Level::kInfo, "step " + std::to_string(step) + " loss " + std::to_string(b.total));
      });
      const fs::path out = out_path(g, s["checkpoint"]);
      save_estimator(out.string(), model);
      log(Level::kInfo, "loss " + std::to_string(rep.initial.total) + " -> " + std::to_string(rep.final.total) + "; wrote " + out.string());
    };
  });

  auto* train_ae = app.add_subcommand("train-ae", "Train the motion autoencoder");
  std::vector<std::string> ae_inputs;
  train_ae->add_option("--data", ae_inputs, "Motion JSON Lines files or recording directories")->required();
  n["ae-steps"] = -1;
  train_ae->add_option("--steps", n["ae-steps"], "Training steps");
  s["ae-checkpoint"] = "autoencoder.ckpt";
  train_ae->add_option("--checkpoint", s["ae-checkpoint"], "Output checkpoint name");
  train_ae->callback([&] {
    action = [&] {
      KeyValueConfig cfg = load_config(g);
      if (n["ae-steps"] >= 0) cfg.set("steps", std::to_string(n["ae-steps"]));
      const SkeletonModel sk = skeleton_for(cfg);
      std::vector<MotionSequence> seqs;
      for (const std::string& in : ae_inputs) {
        if (fs::is_directory(in)) {
          for (const auto& dir : recording_dirs(in)) seqs.push_back(read_motion_jsonl((dir / "motion.jsonl").string()));
        } else {
          seqs.push_back(read_motion_jsonl(in));
        }
      }
      AutoencoderTrainingOptions opts = AutoencoderTrainingOptions::from(cfg);
      if (opts.log_every == 0) opts.log_every = 250;
      MotionAutoencoder model(AutoencoderConfig::from(cfg), opts.seed);
      const AutoencoderReport rep = train_autoencoder(model, seqs, sk, opts, [](int step, const ReconstructionBreakdown& b) {
        log(Level::kInfo, "step " + std::to_string(step) + " loss " + std::to_string(b.total));
      });
      const fs::path out = out_path(g, s["ae-checkpoint"]);
      save_autoencoder(out.string(), model);
      log(Level::kInfo, "loss " + std::to_string(rep.initial.total) + " -> " + std::to_string(rep.final.total) + "; wrote " + out.string());
    };
  });

  auto* optimize = app.add_subcommand("optimize", "Refine a motion against visual cues in the autoencoder latent space");
  for (const char* k : {"motion", "cues", "ae-checkpoint", "out"}) optimize->add_option(std::string("--") + k, s[std::string("opt-") + k])->required();
  optimize->callback([&] {
    action = [&] {
      const KeyValueConfig cfg = load_config(g);
      const SkeletonModel sk = skeleton_for(cfg);
      const MotionAutoencoder ae = load_autoencoder(s["opt-ae-checkpoint"]);
      const LatentResult r = optimize_latent(read_motion_jsonl(s["opt-motion"]), load_cues(s["opt-cues"], sk), ae, sk,
                                             LatentOptions::from(cfg));
      if (r.skipped_cues > 0) log(Level::kWarn, std::to_string(r.skipped_cues) + " cue projections had non-positive depth");
      write_motion_jsonl(s["opt-out"], r.motion);
      log(Level::kInfo, "visual loss " + std::to_string(r.initial.vis) + " -> " + std::to_string(r.best.vis) + " in " +
                            std::to_string(r.iterations) + " iterations");
    };
  });

  auto* metrics = app.add_subcommand("metrics", "Compare a predicted motion with ground truth");
  metrics->add_option("--pred", s["pred"])->required();
  metrics->add_option("--gt", s["gt"])->required();
  metrics->add_option("--report", s["report"], "Report JSON path (stdout when omitted)");
  metrics->callback([&] {
    action = [&] {
      const SkeletonModel sk = skeleton_for(load_config(g));
      const std::string text = metric_report_json(evaluate_motion(sk, read_motion_jsonl(s["pred"]), read_motion_jsonl(s["gt"])), sk);
      if (s["report"].empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream f(s["report"]);
        if (!f) throw ValidationError("cannot write " + s["report"]);
        f << text << "\n";
      }
    };
  });

  auto* exp = app.add_subcommand("export", "Export a motion as BVH");
  exp->add_option("--motion", s["exp-motion"])->required();
  exp->add_option("--out", s["exp-out"], "BVH path")->required();
  exp->callback([&] {
    action = [&] { export_bvh(s["exp-out"], read_motion_jsonl(s["exp-motion"]), skeleton_for(load_config(g))); };
  });

  auto* run = app.add_subcommand("run", "Full pipeline from a configuration or a previous run's manifest");
  run->add_option("--manifest", s["manifest"], "manifest.json of an earlier run");
  run->callback([&] {
    action = [&] {
      KeyValueConfig cfg = s["manifest"].empty() ? load_config(g) : config_from_manifest(s["manifest"]);
      if (!s["manifest"].empty() && g.seed_set) cfg.set("seed", std::to_string(g.seed));
      const PipelineResult r = run_pipeline(PipelineConfig::from(cfg), g.out_dir);
      std::cout << r.report_json;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (g.log_level == "error") g_level = Level::kError;
  if (g.log_level == "warn") g_level = Level::kWarn;
  if (g.log_level == "debug") g_level = Level::kDebug;

  try {
    action();
  } catch (const ValidationError& e) {
    log(Level::kError, e.what());
    return 2;
  } catch (const NumericalError& e) {
    log(Level::kError, e.what());
    return 3;
  } catch (const std::exception& e) {
    log(Level::kError, e.what());
    return 2;
  }
  return 0;
}
