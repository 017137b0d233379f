#include "sparsecap/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "sparsecap/errors.hpp"

namespace sparsecap {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Rotation checked_mean(std::span<const Rotation> samples, double max_spread_deg, const char* step) {
  if (samples.empty()) throw ValidationError(std::string(step) + ": no samples");
  const Rotation mean = chordal_mean(samples);
  double spread = 0.0;
  for (const auto& r : samples) spread = std::max(spread, mean.angle_to(r));
  if (spread > max_spread_deg * kDeg) {
    throw ValidationError(std::string(step) + ": sensor moved during calibration (spread " +
                          std::to_string(spread / kDeg) + " deg)");
  }
  return mean;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace

double angular_spread(std::span<const Rotation> samples) {
  const Rotation mean = chordal_mean(samples);
  double spread = 0.0;
  for (const auto& r : samples) spread = std::max(spread, mean.angle_to(r));
  return spread;
}

Rotation calibrate_board(std::span<const Rotation> raw_board_samples, double max_spread_deg) {
  return checked_mean(raw_board_samples, max_spread_deg, "board calibration").inverse();
}

Rotation calibrate_tpose(std::span<const Rotation> raw_tpose_samples, const Rotation& world_from_reference,
                         const Rotation& tpose_wrist_rotation, double max_spread_deg) {
  const Rotation reference_from_sensor = checked_mean(raw_tpose_samples, max_spread_deg, "T-pose calibration");
  return reference_from_sensor.inverse() * world_from_reference.inverse() * tpose_wrist_rotation;
}

std::array<Rotation, 2> tpose_wrist_rotations(const SkeletonModel& skeleton) {
  const GlobalPose g = forward_kinematics(skeleton, Pose::rest());
  return {g.rotations[skeleton.named().l_wrist], g.rotations[skeleton.named().r_wrist]};
}

ImuStream apply_calibration(const ImuStream& raw, const ImuCalibration& cal) {
  ImuStream out = raw;
  for (auto& frame : out.frames) {
    for (int k = 0; k < 2; ++k) {
      const WristCalibration& w = cal.wrists[k];
      const Rotation world_from_sensor = w.world_from_reference * frame[k].orientation;
      frame[k].acceleration = world_from_sensor * frame[k].acceleration;
      frame[k].orientation = world_from_sensor * w.sensor_to_joint;
    }
  }
  return out;
}

ImuStream simulate_raw(const ImuStream& calibrated, const ImuCalibration& cal) {
  ImuStream out = calibrated;
  for (auto& frame : out.frames) {
    for (int k = 0; k < 2; ++k) {
      const WristCalibration& w = cal.wrists[k];
      const Rotation world_from_sensor = frame[k].orientation * w.sensor_to_joint.inverse();
      frame[k].acceleration = world_from_sensor.inverse() * frame[k].acceleration;
      frame[k].orientation = w.world_from_reference.inverse() * world_from_sensor;
    }
  }
  return out;
}

std::array<Vec3, 4> BoardGeometry::targets() const {
  return {Vec3(0, y1, board_height), Vec3(0, y2, board_height), Vec3(x3, 0, board_height), Vec3(x4, 0, board_height)};
}

AxisAlignment align_camera_axes(const std::array<Vec3, 4>& slam_points, const BoardGeometry& board,
                                const AxisAlignmentOptions& options) {
  for (const auto& p : slam_points) {
    if (!p.allFinite()) throw ValidationError("camera alignment: non-finite point");
  }
  const double slam_y = (slam_points[1] - slam_points[0]).norm();
  const double slam_x = (slam_points[3] - slam_points[2]).norm();
  if (slam_y < 1e-6 || slam_x < 1e-6) throw ValidationError("camera alignment: degenerate point pair (separation < 1e-6)");
  const double board_y = std::abs(board.y2 - board.y1);
  const double board_x = std::abs(board.x4 - board.x3);
  if (board_y < 1e-6 || board_x < 1e-6) throw ValidationError("camera alignment: degenerate board geometry");

  const auto targets = board.targets();
  Eigen::Matrix<double, 3, 4> src, dst;
  for (int i = 0; i < 4; ++i) {
    src.col(i) = slam_points[i];
    dst.col(i) = targets[i];
  }
  const Eigen::Matrix4d closed = Eigen::umeyama(src, dst, true);
  const Mat3 sr = closed.topLeftCorner<3, 3>();
  const double closed_scale = std::cbrt(sr.determinant());

  AxisAlignment out;
  out.slam_to_world.scale = closed_scale;
  out.slam_to_world.rotation = Rotation::project(sr / closed_scale);
  out.slam_to_world.translation = closed.topRightCorner<3, 1>();

  auto line_residuals = [&](const SimilarityTransform& t) {
    Eigen::Matrix<double, 8, 1> r;
    for (int i = 0; i < 4; ++i) {
      const Vec3 q = t.apply(slam_points[i]);
      // C1, C2 belong on the y axis (x = 0); C3, C4 on the x axis (y = 0).
      r(2 * i) = i < 2 ? q.x() : q.y();
      r(2 * i + 1) = q.z() - board.board_height;
    }
    return r;
  };

  if (options.refine) {
    SimilarityTransform t = out.slam_to_world;
    t.scale = (board_y + board_x) / (slam_y + slam_x);
    for (int it = 0; it < options.max_iterations; ++it) {
      const auto r = line_residuals(t);
      Eigen::Matrix<double, 8, 6> jac;
      for (int i = 0; i < 4; ++i) {
        const Vec3 rotated = t.scale * (t.rotation * slam_points[i]);
        Eigen::Matrix<double, 3, 6> dq;
        dq.leftCols<3>() = -skew(rotated);
        dq.rightCols<3>() = Mat3::Identity();
        jac.row(2 * i) = dq.row(i < 2 ? 0 : 1);
        jac.row(2 * i + 1) = dq.row(2);
      }
      const Eigen::Matrix<double, 6, 1> delta = (jac.transpose() * jac).ldlt().solve(-jac.transpose() * r);
      if (!delta.allFinite()) throw NumericalError("camera alignment refinement diverged");
      t.rotation = Rotation::from_angle_axis(delta.head<3>()) * t.rotation;
      t.translation += delta.tail<3>();
      out.iterations = it + 1;
      if (delta.norm() < options.tolerance) break;
    }
    out.slam_to_world = t;
  }

  out.residual = 0.0;
  for (int i = 0; i < 4; ++i) out.residual += (out.slam_to_world.apply(slam_points[i]) - targets[i]).squaredNorm();
  out.line_rms = std::sqrt(line_residuals(out.slam_to_world).squaredNorm() / 4.0);
  return out;
}

RigidTransform default_camera_in_head() {
  Mat3 m;
  // Columns: camera x, y, z axes in head coordinates (x right, y forward, z up).
  m << 1, 0, 0,
       0, 0, 1,
       0, -1, 0;
  return {Rotation::from_matrix(m), Vec3(0.0, 0.08, 0.10)};
}

Rotation camera_rotation_in_head(std::span<const Rotation> camera_world, const Rotation& head_world) {
  return head_world.inverse() * chordal_mean(camera_world);
}

HeadTrajectory head_from_camera(const CameraTrajectory& trajectory, const CameraAlignment& alignment) {
  const RigidTransform head_in_camera = alignment.camera_in_head.inverse();
  std::vector<RigidTransform> poses;
  poses.reserve(trajectory.size());
  for (const auto& c : trajectory.poses) poses.push_back(alignment.slam_to_world.apply(c) * head_in_camera);
  return HeadTrajectory::from_poses(std::move(poses), trajectory.frame_rate);
}

CameraTrajectory camera_from_head(const HeadTrajectory& head, const CameraAlignment& alignment) {
  const SimilarityTransform world_to_slam = alignment.slam_to_world.inverse();
  CameraTrajectory out;
  out.frame_rate = head.frame_rate;
  for (const auto& h : head.poses) out.poses.push_back(world_to_slam.apply(h * alignment.camera_in_head));
  out.valid.assign(out.poses.size(), true);
  return out;
}

CameraTrajectory repair_camera_outliers(const CameraTrajectory& trajectory, double accel_threshold) {
  const std::size_t n = trajectory.size();
  if (n < 3) throw ValidationError("repair_camera_outliers needs at least 3 frames");
  std::vector<bool> valid = trajectory.valid;
  if (valid.size() != n) valid.assign(n, true);
  const double rate2 = trajectory.frame_rate * trajectory.frame_rate;

  // Slope change between the nearest valid neighbours, per squared frame.
  auto acceleration = [&](std::size_t t) -> double {
    std::ptrdiff_t prev = static_cast<std::ptrdiff_t>(t) - 1;
    while (prev >= 0 && !valid[prev]) --prev;
    std::size_t next = t + 1;
    while (next < n && !valid[next]) ++next;
    if (prev < 0 || next >= n) return 0.0;
    const Vec3& p = trajectory.poses[t].translation;
    const Vec3 forward = (trajectory.poses[next].translation - p) / static_cast<double>(next - t);
    const Vec3 backward = (p - trajectory.poses[prev].translation) / static_cast<double>(t - prev);
    return (forward - backward).norm() * rate2;
  };

  if (std::isfinite(accel_threshold)) {
    for (;;) {
      double worst = accel_threshold;
      std::size_t worst_t = n;
      for (std::size_t t = 0; t < n; ++t) {
        if (!valid[t]) continue;
        const double a = acceleration(t);
        if (a > worst) {
          worst = a;
          worst_t = t;
        }
      }
      if (worst_t == n) break;
      valid[worst_t] = false;
    }
  }
  if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) {
    throw ValidationError("repair_camera_outliers: every frame is invalid");
  }

  CameraTrajectory out = trajectory;
  out.valid = valid;
  std::ptrdiff_t prev = -1;
  for (std::size_t t = 0; t < n; ++t) {
    if (valid[t]) {
      prev = static_cast<std::ptrdiff_t>(t);
      continue;
    }
    std::size_t next = t + 1;
    while (next < n && !valid[next]) ++next;
    if (prev < 0) {
      out.poses[t] = trajectory.poses[next];
    } else if (next >= n) {
      out.poses[t] = trajectory.poses[prev];
    } else {
      const RigidTransform& a = trajectory.poses[prev];
      const RigidTransform& b = trajectory.poses[next];
      const double s = static_cast<double>(static_cast<std::ptrdiff_t>(t) - prev) / static_cast<double>(static_cast<std::ptrdiff_t>(next) - prev);
      out.poses[t].translation = (1.0 - s) * a.translation + s * b.translation;
      out.poses[t].rotation = slerp(a.rotation, b.rotation, s);
    }
  }
  return out;
}

SyncResult synchronize(const ImuStream& imu, const HeadTrajectory& head, int search_range) {
  if (search_range < 0) throw ValidationError("sync search range must be >= 0");
  const int n_imu = static_cast<int>(imu.size());
  const int n_head = static_cast<int>(head.size());
  if (n_imu == 0 || n_head < 3) throw ValidationError("synchronize: streams too short");

  std::vector<double> magnitude(n_imu);
  for (int t = 0; t < n_imu; ++t) magnitude[t] = imu.frames[t][kLeft].acceleration.norm();

  // Height maxima: vertical velocity changes sign from positive to non-positive.
  constexpr int kNeighbourhood = 3;
  std::vector<int> events;
  for (int t = 1; t + 1 < n_head; ++t) {
    const double z = head.poses[t].translation.z();
    if (!(z > head.poses[t - 1].translation.z()) || !(z >= head.poses[t + 1].translation.z())) continue;
    bool is_max = true;
    for (int k = std::max(0, t - kNeighbourhood); k <= std::min(n_head - 1, t + kNeighbourhood); ++k) {
      if (head.poses[k].translation.z() > z) is_max = false;
    }
    if (is_max) events.push_back(t);
  }
  if (events.empty()) throw NumericalError("synchronize: no head height maxima found");

  std::vector<double> scores;
  for (int d = -search_range; d <= search_range; ++d) {
    double s = 0.0;
    for (int k : events) {
      const int idx = k - d;
      if (idx >= 0 && idx < n_imu) s += magnitude[idx];
    }
    scores.push_back(s);
  }
  const auto best_it = std::max_element(scores.begin(), scores.end());
  const int best = static_cast<int>(best_it - scores.begin());
  SyncResult result;
  result.offset = best - search_range;
  result.score = *best_it;
  result.runner_up = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
    if (std::abs(i - best) > 1) result.runner_up = std::max(result.runner_up, scores[i]);
  }
  if (result.runner_up >= result.score * (1.0 - 1e-9) && result.score > 0.0) {
    throw NumericalError("synchronize: correlation peak is ambiguous (offsets " + std::to_string(result.offset) +
                         " and another score within tolerance)");
  }
  return result;
}

ImuStream shift_stream(const ImuStream& imu, int offset) {
  ImuStream out = imu;
  const int n = static_cast<int>(imu.size());
  for (int t = 0; t < n; ++t) out.frames[t] = imu.frames[std::clamp(t - offset, 0, n - 1)];
  return out;
}

}  // namespace sparsecap
