#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sparsecap/geometry.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

inline constexpr int kLeft = 0;
inline constexpr int kRight = 1;

struct ImuSample {
  Rotation orientation;                  // wrist joint orientation in the gravity-aligned world
  Vec3 acceleration = Vec3::Zero();      // m/s^2, world frame, gravity removed
};

/// Both wrists, every frame: frames[t][kLeft], frames[t][kRight].
struct ImuStream {
  std::vector<std::array<ImuSample, 2>> frames;
  double frame_rate = kDefaultFrameRate;

  std::size_t size() const { return frames.size(); }
};

struct HeadTrajectory {
  std::vector<RigidTransform> poses;
  /// Head up-vector in world coordinates, one per pose.
  std::vector<Vec3> up;
  /// Height above the tracked floor; empty until floor tracking assigns it.
  std::vector<double> heights;
  double frame_rate = kDefaultFrameRate;

  std::size_t size() const { return poses.size(); }
  static HeadTrajectory from_poses(std::vector<RigidTransform> poses, double frame_rate = kDefaultFrameRate);
};

inline constexpr int kDefaultSecondDifferenceSpan = 4;
inline constexpr int kDefaultAverageWindow = 7;

/// Head-local axis that points up in the rest pose.
inline const Vec3 kHeadLocalUp = Vec3::UnitZ();

/// a_t = (p[t-n] + p[t+n] - 2 p[t]) / (n dt)^2; the first and last n frames
/// repeat the nearest valid value. Requires more than 2n samples.
std::vector<Vec3> second_difference_acceleration(std::span<const Vec3> positions, double frame_rate, int n);

/// Orientation = global wrist rotation, acceleration = second difference of
/// the wrist position.
ImuStream synthesize_imu(const MotionSequence& motion, const SkeletonModel& skeleton, int n = kDefaultSecondDifferenceSpan);

/// Centered moving average with truncated windows at the edges. `window` must be odd.
std::vector<Vec3> average_filter(std::span<const Vec3> signal, int window = kDefaultAverageWindow);
/// Filters both acceleration channels in place.
void filter_accelerations(ImuStream& imu, int window = kDefaultAverageWindow);

HeadTrajectory head_from_motion(const MotionSequence& motion, const SkeletonModel& skeleton);

/// One wrist's recording in the watch CSV layout.
struct WatchRecording {
  std::vector<double> time;
  std::vector<Rotation> orientation;
  std::vector<Vec3> acceleration;

  std::size_t size() const { return time.size(); }
};

/// Reads `time_s,qw,qx,qy,qz,ax,ay,az`. With target_rate > 0 the samples are
/// resampled onto t0 + k / target_rate by nearest timestamp.
WatchRecording parse_watch_csv(std::istream& in, double target_rate = kDefaultFrameRate);
WatchRecording parse_watch_csv(const std::string& path, double target_rate = kDefaultFrameRate);
void write_watch_csv(std::ostream& out, const WatchRecording& rec);
void write_watch_csv(const std::string& path, const WatchRecording& rec);

WatchRecording extract_wrist(const ImuStream& imu, int side);
/// Truncates to the shorter recording.
ImuStream combine_wrists(const WatchRecording& left, const WatchRecording& right, double frame_rate);

}  // namespace sparsecap
