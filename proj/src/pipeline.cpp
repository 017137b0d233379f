#include "sparsecap/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sparsecap/bvh.hpp"
#include "sparsecap/errors.hpp"
#include "sparsecap/motion_io.hpp"

namespace sparsecap {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ScenarioSpec scenario_spec_from(const KeyValueConfig& cfg) {
  ScenarioSpec s = ScenarioSpec::defaults(parse_scenario_kind(cfg.get_string("scenario", "flat-walk")));
  s.duration = cfg.get_double("duration", s.duration);
  s.frame_rate = cfg.get_double("frame_rate", s.frame_rate);
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(s.seed)));
  s.step_frames = cfg.get_int("step_frames", s.step_frames);
  s.swing_frames = cfg.get_int("swing_frames", s.swing_frames);
  s.step_length = cfg.get_double("step_length", s.step_length);
  s.step_height = cfg.get_double("step_height", s.step_height);
  s.tread_depth = cfg.get_double("tread_depth", s.tread_depth);
  s.step_count = cfg.get_int("step_count", s.step_count);
  s.cloud_spacing = cfg.get_double("cloud_spacing", s.cloud_spacing);
  s.cloud_noise = cfg.get_double("cloud_noise", s.cloud_noise);
  s.validate();
  return s;
}

PipelineInputs load_inputs(const std::string& dir, double frame_rate) {
  const fs::path d(dir);
  PipelineInputs in;
  std::vector<RigidTransform> poses;
  for (const TimedPose& p : read_pose_jsonl((d / "head.jsonl").string())) poses.push_back(p.pose);
  in.head = HeadTrajectory::from_poses(std::move(poses), frame_rate);
  in.imu = combine_wrists(parse_watch_csv((d / "imu_left.csv").string(), frame_rate),
                          parse_watch_csv((d / "imu_right.csv").string(), frame_rate), frame_rate);
  const fs::path bin = d / "cloud.bin";
  const fs::path cloud = fs::exists(bin) ? bin : d / "cloud.xyz";
  in.cloud = read_point_cloud(cloud.string(), cloud_format_from_path(cloud.string()));
  if (fs::exists(d / "motion.jsonl")) in.truth = read_motion_jsonl((d / "motion.jsonl").string());
  if (in.imu.size() < in.head.size()) {
    throw ValidationError("IMU streams have " + std::to_string(in.imu.size()) + " frames but the head has " +
                          std::to_string(in.head.size()));
  }
  in.imu.frames.resize(in.head.size());
  return in;
}

InferenceOptions inference_options_from(const KeyValueConfig& cfg) {
  InferenceOptions o;
  o.stride = cfg.get_int("stride", o.stride);
  if (o.stride < 1) throw ValidationError("stride must be >= 1");
  o.floor.contact_threshold = cfg.get_double("floor_contact_threshold", o.floor.contact_threshold);
  o.floor.search_radius = cfg.get_double("floor_search_radius", o.floor.search_radius);
  o.floor.min_points = cfg.get_int("floor_min_points", o.floor.min_points);
  o.floor.min_change = cfg.get_double("floor_min_change", o.floor.min_change);
  o.floor.min_update_interval = cfg.get_int("floor_min_update_interval", o.floor.min_update_interval);
  return o;
}

PipelineConfig PipelineConfig::from(const KeyValueConfig& cfg) {
  PipelineConfig c;
  c.raw = cfg;
  c.scenario = cfg.get_string("scenario", "");
  c.input_dir = cfg.get_string("input_dir", "");
  c.estimator = cfg.get_string("estimator", "");
  c.autoencoder = cfg.get_string("autoencoder", "");
  c.cues = cfg.get_string("cues", "");
  c.skeleton = cfg.get_string("skeleton", "");
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  c.export_bvh = cfg.get_bool("export_bvh", true);
  c.inference = inference_options_from(cfg);
  c.latent = LatentOptions::from(cfg);
  if (c.scenario.empty() && c.input_dir.empty()) throw ValidationError("configuration needs 'scenario' or 'input_dir'");
  if (c.estimator.empty()) throw ValidationError("configuration needs 'estimator' (checkpoint path or 'oracle')");
  if (!c.cues.empty() && c.autoencoder.empty()) throw ValidationError("'cues' requires an 'autoencoder' checkpoint");
  return c;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("stage '") + name + "': " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("stage '") + name + "': " + e.what());
  } catch (const std::exception& e) {
    throw ValidationError(std::string("stage '") + name + "': " + e.what());
  }
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
}

ojson metrics_json(const MetricReport& m) {
  return ojson{{"mpjpe_cm", m.mpjpe},      {"r_mpjpe_cm", m.r_mpjpe},         {"mpjve_cm_s", m.mpjve},
               {"root_pe_cm", m.root_pe}, {"jitter_ratio", m.jitter_ratio}, {"frames", m.frames}};
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const std::string& out_dir) {
  const fs::path out(out_dir);
  stage("setup", [&] {
    fs::create_directories(out);
    return 0;
  });
  const SkeletonModel skeleton = stage("skeleton", [&] {
    return config.skeleton.empty() ? SkeletonModel::mean_body() : read_skeleton_json(config.skeleton);
  });

  PipelineInputs inputs = stage("inputs", [&] {
    if (!config.scenario.empty()) {
      KeyValueConfig sc = config.raw;
      sc.set("seed", std::to_string(config.seed));
      const Scenario s = generate_scenario(scenario_spec_from(sc), skeleton);
      write_scenario((out / "scenario").string(), s);
      return load_inputs((out / "scenario").string(), s.spec.frame_rate);
    }
    return load_inputs(config.input_dir);
  });

  PipelineResult result;
  const InferenceResult inferred = stage("estimate", [&] {
    std::unique_ptr<WindowRegressor> regressor;
    if (config.estimator == "oracle") {
      if (!inputs.truth) throw ValidationError("the oracle estimator needs motion.jsonl in the inputs");
      regressor = std::make_unique<OracleRegressor>(*inputs.truth);
    } else {
      require_file(config.estimator, "estimator checkpoint");
      regressor = std::make_unique<NeuralRegressor>(std::make_shared<const MotionEstimator>(load_estimator(config.estimator)));
    }
    return infer_sequence(inputs.head, inputs.imu, inputs.cloud, *regressor, skeleton, config.inference);
  });
  result.estimate = inferred.motion;
  result.motion = inferred.motion;
  result.floor_levels = inferred.floor_levels;
  result.floor = inferred.floor;

  if (!config.autoencoder.empty()) {
    result.latent = stage("optimize", [&] {
      require_file(config.autoencoder, "autoencoder checkpoint");
      const MotionAutoencoder ae = load_autoencoder(config.autoencoder);
      CueSet cues;
      if (!config.cues.empty()) {
        require_file(config.cues, "cue file");
        cues = load_cues(config.cues, skeleton);
      }
      return optimize_latent(result.estimate, cues, ae, skeleton, config.latent);
    });
    result.motion = result.latent->motion;
  }

  if (inputs.truth) {
    result.metrics = stage("metrics", [&] { return evaluate_motion(skeleton, result.motion, *inputs.truth); });
  }

  stage("write", [&] {
    std::ostringstream motion_text;
    write_motion_jsonl(motion_text, result.motion);
    write_text(out / "motion.jsonl", motion_text.str());
    if (result.latent) write_motion_jsonl((out / "estimate.jsonl").string(), result.estimate);

    ojson floor;
    floor["final_level"] = result.floor.level;
    floor["updates"] = ojson::array();
    for (const FloorUpdate& u : result.floor.history) floor["updates"].push_back({{"frame", u.frame}, {"level", u.level}});
    write_text(out / "floor.json", floor.dump(2) + "\n");
    if (config.export_bvh) export_bvh((out / "animation.bvh").string(), result.motion, skeleton);

    const std::string config_text = config.raw.to_string();
    ojson manifest;
    manifest["schema"] = kManifestSchema;
    manifest["tool_version"] = kToolVersion;
    manifest["config_hash"] = hex64(fnv1a64(config_text));
    manifest["seed"] = config.seed;
    manifest["config"] = ojson::object();
    for (const auto& [k, v] : config.raw.values()) manifest["config"][k] = v;
    result.manifest_json = manifest.dump(2) + "\n";
    write_text(out / "manifest.json", result.manifest_json);

    ojson report;
    report["schema"] = kManifestSchema;
    report["config_hash"] = manifest["config_hash"];
    report["frames"] = result.motion.size();
    report["motion_hash"] = hex64(fnv1a64(motion_text.str()));
    report["floor"] = floor;
    if (result.metrics) report["metrics"] = metrics_json(*result.metrics);
    if (result.latent) {
      report["latent"] = {{"iterations", result.latent->iterations},
                          {"best_iteration", result.latent->best_iteration},
                          {"skipped_cues", result.latent->skipped_cues},
                          {"initial", {{"vis", result.latent->initial.vis}, {"reg", result.latent->initial.reg}, {"slip", result.latent->initial.slip}}},
                          {"final", {{"vis", result.latent->best.vis}, {"reg", result.latent->best.reg}, {"slip", result.latent->best.slip}}}};
      if (inputs.truth) report["estimate_metrics"] = metrics_json(evaluate_motion(skeleton, result.estimate, *inputs.truth));
    }
    result.report_json = report.dump(2) + "\n";
    write_text(out / "report.json", result.report_json);
    return 0;
  });
  return result;
}

KeyValueConfig config_from_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path + " is not valid JSON: " + e.what());
  }
  if (!j.contains("schema") || !j["schema"].is_string() || j["schema"].get<std::string>().rfind("1.", 0) != 0) {
    throw ValidationError("manifest " + path + " has an unsupported schema");
  }
  if (!j.contains("config") || !j["config"].is_object()) throw ValidationError("manifest " + path + " has no config");
  KeyValueConfig cfg;
  for (const auto& [k, v] : j["config"].items()) {
    if (!v.is_string()) throw ValidationError("manifest config value for '" + k + "' must be a string");
    cfg.set(k, v.get<std::string>());
  }
  return cfg;
}

}  // namespace sparsecap
