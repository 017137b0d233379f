#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsecap/floor.hpp"
#include "sparsecap/sensors.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

enum class ScenarioKind { kFlatWalk, kStaircase, kArmSwingSync, kReachInteraction };

std::string scenario_name(ScenarioKind kind);
/// flat-walk | staircase | arm-swing-sync | reach-interaction
ScenarioKind parse_scenario_kind(const std::string& name);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kFlatWalk;
  /// Seconds; the frame count is round(duration * frame_rate).
  double duration = 20.0;
  double frame_rate = kDefaultFrameRate;
  std::uint64_t seed = 0;

  /// Walking: frames per step (swing + double support) and swing frames.
  int step_frames = 30;
  int swing_frames = 18;
  /// Flat walk step length in m; 0 draws it from [0.25, 0.28] with the seed.
  double step_length = 0.0;
  /// Staircase: height change per tread, tread depth and number of steps down.
  double step_height = -0.18;
  double tread_depth = 0.28;
  int step_count = 24;

  /// Point cloud grid spacing and per-coordinate noise, m.
  double cloud_spacing = 0.03;
  double cloud_noise = 0.002;

  /// Default durations: 20 s walks and sync, 28 s staircase, 128 frames reach.
  static ScenarioSpec defaults(ScenarioKind kind);
  /// Throws ValidationError for invalid fields.
  void validate() const;
};

struct Scenario {
  ScenarioSpec spec;
  /// Ground truth with exact contact labels.
  MotionSequence motion;
  HeadTrajectory head;
  /// Calibrated, synchronized wrist IMU streams synthesized from the motion.
  ImuStream imu;
  std::vector<Vec3> cloud;
  /// Surface heights the feet can stand on (the landing first).
  std::vector<double> levels;
  /// Floor level in effect at each frame, from tracking the ground-truth contacts.
  std::vector<double> floor_levels;
  /// Frames where the arms stop at the top (arm-swing-sync only).
  std::vector<int> events;

  /// Ground surface height under (x, y).
  double surface_height(double x, double y) const;
};

Scenario generate_scenario(const ScenarioSpec& spec, const SkeletonModel& skeleton);

/// Foot joint positions per frame (left, right).
std::vector<std::array<Vec3, 2>> foot_positions(const SkeletonModel& skeleton, const MotionSequence& motion);

/// 1 where the foot is static over frames t-1, t, t+1 (those that exist) and on the surface.
std::vector<ContactPair> planted_mask(const SkeletonModel& skeleton, const MotionSequence& motion, double tolerance = 1e-9);

/// Writes motion.jsonl, head.jsonl, imu_left.csv, imu_right.csv, cloud.xyz and scenario.json.
void write_scenario(const std::string& dir, const Scenario& scenario);

}  // namespace sparsecap
