#pragma once

#include <array>
#include <span>
#include <vector>

#include "sparsecap/geometry.hpp"
#include "sparsecap/sensors.hpp"

namespace sparsecap {

// Frame names: r = the sensor's arbitrary reference frame, g = gravity-aligned
// world (z up, y facing), S = sensor body, j = wrist joint.

struct WristCalibration {
  Rotation world_from_reference;  // R_g_r
  Rotation sensor_to_joint;       // R_S_j
};

struct ImuCalibration {
  std::array<WristCalibration, 2> wrists;
};

inline constexpr double kDefaultMaxSpreadDeg = 5.0;

/// Largest geodesic angle (radians) between any sample and the chordal mean.
double angular_spread(std::span<const Rotation> samples);

/// Board step: the sensor rests aligned with g, so its raw reading is R_r_g.
/// Returns R_g_r = inverse of the chordal mean. Throws if the spread exceeds the limit.
Rotation calibrate_board(std::span<const Rotation> raw_board_samples, double max_spread_deg = kDefaultMaxSpreadDeg);

/// T-pose step: R_S_j = (R_r_S)^-1 (R_g_r)^-1 R_g_j for the averaged raw reading R_r_S.
Rotation calibrate_tpose(std::span<const Rotation> raw_tpose_samples, const Rotation& world_from_reference,
                         const Rotation& tpose_wrist_rotation, double max_spread_deg = kDefaultMaxSpreadDeg);

/// Global wrist rotations of the skeleton's rest (T-) pose, left then right.
std::array<Rotation, 2> tpose_wrist_rotations(const SkeletonModel& skeleton);

/// R_g_j = R_g_r R_r_S R_S_j and a_g = R_g_r R_r_S a_S.
ImuStream apply_calibration(const ImuStream& raw, const ImuCalibration& cal);

/// Inverse of apply_calibration; used to forward-simulate raw recordings.
ImuStream simulate_raw(const ImuStream& calibrated, const ImuCalibration& cal);

/// Camera positions on the board axes: C1, C2 on I_y at y1, y2 and C3, C4 on
/// I_x at x3, x4, all at `board_height` above the floor.
struct BoardGeometry {
  double y1 = 0.1;
  double y2 = 0.4;
  double x3 = 0.1;
  double x4 = 0.4;
  double board_height = 0.0;

  std::array<Vec3, 4> targets() const;
};

struct AxisAlignmentOptions {
  /// Gauss-Newton refinement of point-to-axis distances after the closed-form fit.
  /// It lowers line_rms but can raise the point-to-target residual.
  bool refine = false;
  double tolerance = 1e-10;
  int max_iterations = 100;
};

struct AxisAlignment {
  SimilarityTransform slam_to_world;
  /// Sum of squared point-to-target distances, m^2.
  double residual = 0.0;
  /// Root mean square point-to-axis distance, m.
  double line_rms = 0.0;
  int iterations = 0;
};

/// Closed-form similarity fit of C1..C4 onto their board targets, optionally
/// refined against the board axes.
AxisAlignment align_camera_axes(const std::array<Vec3, 4>& slam_points, const BoardGeometry& board,
                                const AxisAlignmentOptions& options = {});

struct CameraTrajectory {
  std::vector<RigidTransform> poses;
  std::vector<bool> valid;
  double frame_rate = kDefaultFrameRate;

  std::size_t size() const { return poses.size(); }
};

struct CameraAlignment {
  SimilarityTransform slam_to_world;
  /// Camera pose in the head joint frame.
  RigidTransform camera_in_head;
  double initial_height = 0.0;
};

/// OpenCV-style camera (z forward, y down) looking along the head's facing
/// direction, mounted at (0, 0.08, 0.10) m in the head frame.
RigidTransform default_camera_in_head();

/// Rotation part of camera_in_head from a still stance with a known head orientation.
Rotation camera_rotation_in_head(std::span<const Rotation> camera_world, const Rotation& head_world);

/// H_t = (slam_to_world applied to C_t) * camera_in_head^-1.
HeadTrajectory head_from_camera(const CameraTrajectory& trajectory, const CameraAlignment& alignment);
/// Camera poses that a head trajectory implies; inverse of head_from_camera.
CameraTrajectory camera_from_head(const HeadTrajectory& head, const CameraAlignment& alignment);

inline constexpr double kDefaultOutlierAcceleration = 30.0;

/// Invalidates frames whose positional second difference over valid
/// neighbours exceeds the threshold (largest first), then fills invalid
/// frames by linear/spherical interpolation and clamps the ends. Filled frames
/// keep valid = false.
CameraTrajectory repair_camera_outliers(const CameraTrajectory& trajectory,
                                        double accel_threshold = kDefaultOutlierAcceleration);

struct SyncResult {
  int offset = 0;
  double score = 0.0;
  double runner_up = 0.0;
};

/// Integer offset d such that aligned[t] = imu[t - d] lines up the left-wrist
/// acceleration peaks with the head's height maxima. Throws NumericalError when
/// the best score is not unique outside +-1 frame.
SyncResult synchronize(const ImuStream& imu, const HeadTrajectory& head, int search_range);

/// aligned[t] = imu[t - offset], clamped to the recorded range.
ImuStream shift_stream(const ImuStream& imu, int offset);

}  // namespace sparsecap
