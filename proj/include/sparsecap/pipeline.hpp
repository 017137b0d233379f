#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sparsecap/config.hpp"
#include "sparsecap/estimator.hpp"
#include "sparsecap/manifold.hpp"
#include "sparsecap/metrics.hpp"
#include "sparsecap/scenario.hpp"

namespace sparsecap {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestSchema = "1.0.0";

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

/// Reads scenario keys (scenario, duration, frame_rate, seed, step_frames,
/// swing_frames, step_length, step_height, tread_depth, step_count,
/// cloud_spacing, cloud_noise) on top of the kind's defaults.
ScenarioSpec scenario_spec_from(const KeyValueConfig& cfg);

/// Sensor inputs in the layout write_scenario produces.
struct PipelineInputs {
  HeadTrajectory head;
  ImuStream imu;
  PointCloud cloud;
  /// motion.jsonl when present.
  std::optional<MotionSequence> truth;
};

/// Loads head.jsonl, imu_left.csv, imu_right.csv, cloud.xyz (or cloud.bin) and optional motion.jsonl.
PipelineInputs load_inputs(const std::string& dir, double frame_rate = kDefaultFrameRate);

/// Keys stride, floor_contact_threshold, floor_search_radius, floor_min_points,
/// floor_min_change, floor_min_update_interval.
InferenceOptions inference_options_from(const KeyValueConfig& cfg);

struct PipelineConfig {
  /// Generate inputs from this scenario kind when set; otherwise read input_dir.
  std::string scenario;
  std::string input_dir;
  /// Estimator checkpoint path, or "oracle" to replay the ground truth through inference.
  std::string estimator;
  /// Optional autoencoder checkpoint and cue file for the refinement stage.
  std::string autoencoder;
  std::string cues;
  /// Skeleton JSON; empty selects the built-in mean body.
  std::string skeleton;
  std::uint64_t seed = 0;
  bool export_bvh = true;
  InferenceOptions inference;
  LatentOptions latent;
  /// Every key the run was configured with.
  KeyValueConfig raw;

  static PipelineConfig from(const KeyValueConfig& cfg);
};

struct PipelineResult {
  MotionSequence estimate;
  /// Refined motion, or the estimate when no refinement ran.
  MotionSequence motion;
  std::vector<double> floor_levels;
  FloorState floor;
  std::optional<MetricReport> metrics;
  std::optional<LatentResult> latent;
  std::string report_json;
  std::string manifest_json;
};

/// Runs scenario/input loading, estimation, optional latent refinement and
/// metrics. Writes motion.jsonl, floor.json, report.json, manifest.json and
/// animation.bvh to out_dir. Errors keep their type and name the failing stage.
PipelineResult run_pipeline(const PipelineConfig& config, const std::string& out_dir);

/// Reads the configuration recorded in a manifest.json.
KeyValueConfig config_from_manifest(const std::string& path);

}  // namespace sparsecap
