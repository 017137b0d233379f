#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sparsecap/geometry.hpp"

namespace sparsecap {

inline constexpr int kJointCount = 22;
inline constexpr int kBodyJointCount = kJointCount - 1;
inline constexpr double kDefaultFrameRate = 30.0;

struct NamedJoints {
  int head = -1;
  int l_wrist = -1;
  int r_wrist = -1;
  int l_foot = -1;
  int r_foot = -1;
};

/// Kinematic tree with rest offsets. Joints are stored in topological order
/// (every parent precedes its children) and joint 0 is the single root.
class SkeletonModel {
 public:
  SkeletonModel(std::vector<std::string> names, std::vector<int> parents, std::vector<Vec3> offsets, NamedJoints named);

  /// Built-in 22-joint mean body: z-up, facing +y, rest pose is a T-pose,
  /// head joint at 1.60 m when the root stands at its rest height.
  static SkeletonModel mean_body();
  /// Root height that puts the feet on z = 0 in the rest pose.
  static constexpr double kRestRootHeight = 0.95;

  int joint_count() const { return static_cast<int>(parents_.size()); }
  int parent(int j) const { return parents_[j]; }
  const Vec3& offset(int j) const { return offsets_[j]; }
  const std::string& name(int j) const { return names_[j]; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<Vec3>& offsets() const { return offsets_; }
  const NamedJoints& named() const { return named_; }
  /// Throws ValidationError for unknown names.
  int index_of(const std::string& name) const;

  /// l_wrist, r_wrist, l_foot, r_foot.
  std::array<int, 4> end_effectors() const { return {named_.l_wrist, named_.r_wrist, named_.l_foot, named_.r_foot}; }
  /// True if `joint` is `ancestor` or lies below it.
  bool in_subtree(int joint, int ancestor) const;

 private:
  std::vector<std::string> names_;
  std::vector<int> parents_;
  std::vector<Vec3> offsets_;
  NamedJoints named_;
};

/// Root translation plus one rotation per joint: rotations[0] is the global
/// root orientation, the others are parent-local.
struct Pose {
  Vec3 root_translation = Vec3::Zero();
  std::vector<Rotation> rotations = std::vector<Rotation>(kJointCount);

  static Pose rest(const Vec3& root = Vec3(0, 0, SkeletonModel::kRestRootHeight)) {
    Pose p;
    p.root_translation = root;
    return p;
  }
};

/// Left foot, right foot.
using ContactPair = std::array<double, 2>;

struct MotionSequence {
  std::vector<Pose> frames;
  double frame_rate = kDefaultFrameRate;
  /// Empty, or one entry per frame.
  std::vector<ContactPair> contacts;

  std::size_t size() const { return frames.size(); }
  double dt() const { return 1.0 / frame_rate; }
};

struct GlobalPose {
  std::vector<Vec3> positions;
  std::vector<Rotation> rotations;
};

GlobalPose forward_kinematics(const SkeletonModel& skeleton, const Pose& pose);

/// positions[t][j], world frame.
using JointTrack = std::vector<std::vector<Vec3>>;

JointTrack joint_positions(const SkeletonModel& skeleton, const MotionSequence& motion);

/// Central differences inside, one-sided at both ends, scaled by the rate.
/// Throws for fewer than two frames.
JointTrack finite_difference(const JointTrack& positions, double frame_rate);

JointTrack joint_velocities(const SkeletonModel& skeleton, const MotionSequence& motion);

struct ContactThresholds {
  double max_height = 0.05;  // m above the floor
  double max_speed = 0.30;   // m/s
};

/// Floor height under a horizontal location.
using FloorHeightField = std::function<double(double x, double y)>;

/// contact = 1 iff the foot is within max_height of the floor and slower than max_speed.
std::vector<ContactPair> label_contacts(const SkeletonModel& skeleton, const MotionSequence& motion, double floor_level,
                                        const ContactThresholds& thresholds = {});
std::vector<ContactPair> label_contacts(const SkeletonModel& skeleton, const MotionSequence& motion,
                                        const FloorHeightField& floor, const ContactThresholds& thresholds = {});

/// Applies a world-frame rigid transform to the root; local joint rotations are untouched.
Pose transform_pose(const RigidTransform& t, const Pose& pose);

struct NormalizedWindow {
  std::vector<Pose> frames;
  std::vector<RigidTransform> head;
  /// World -> first-frame head coordinates.
  RigidTransform world_to_head;
};

/// Expresses a window in the coordinates of its first head pose.
NormalizedWindow normalize_window(std::span<const Pose> frames, std::span<const RigidTransform> head);
/// Inverse of normalize_window.
std::vector<Pose> denormalize_frames(std::span<const Pose> frames, const RigidTransform& world_to_head);

}  // namespace sparsecap
