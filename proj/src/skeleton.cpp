#include "sparsecap/skeleton.hpp"

#include <string>

#include "sparsecap/errors.hpp"

namespace sparsecap {

SkeletonModel::SkeletonModel(std::vector<std::string> names, std::vector<int> parents, std::vector<Vec3> offsets,
                             NamedJoints named)
    : names_(std::move(names)), parents_(std::move(parents)), offsets_(std::move(offsets)), named_(named) {
  const std::size_t n = parents_.size();
  if (n == 0) throw ValidationError("skeleton has no joints");
  if (names_.size() != n || offsets_.size() != n) throw ValidationError("skeleton names/parents/offsets differ in length");
  if (parents_[0] != -1) throw ValidationError("joint 0 must be the root");
  for (std::size_t j = 1; j < n; ++j) {
    if (parents_[j] < 0 || parents_[j] >= static_cast<int>(j)) {
      throw ValidationError("joint " + names_[j] + " breaks topological order (parent " + std::to_string(parents_[j]) + ")");
    }
  }
  for (int idx : {named_.head, named_.l_wrist, named_.r_wrist, named_.l_foot, named_.r_foot}) {
    if (idx < 0 || idx >= static_cast<int>(n)) throw ValidationError("skeleton is missing a named joint");
  }
}

SkeletonModel SkeletonModel::mean_body() {
  std::vector<std::string> names = {
      "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
      "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
      "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist"};
  std::vector<int> parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
  std::vector<Vec3> offsets = {
      {0, 0, 0},        {-0.09, 0, -0.08}, {0.09, 0, -0.08}, {0, 0, 0.10},      {0, 0, -0.40},
      {0, 0, -0.40},    {0, 0, 0.13},      {0, 0, -0.40},    {0, 0, -0.40},     {0, 0, 0.05},
      {0, 0.12, -0.07}, {0, 0.12, -0.07},  {0, 0, 0.21},     {-0.07, 0, 0.15},  {0.07, 0, 0.15},
      {0, 0, 0.16},     {-0.12, 0, 0.03},  {0.12, 0, 0.03},  {-0.26, 0, 0},     {0.26, 0, 0},
      {-0.25, 0, 0},    {0.25, 0, 0}};
  NamedJoints named{15, 20, 21, 10, 11};
  return SkeletonModel(std::move(names), std::move(parents), std::move(offsets), named);
}

int SkeletonModel::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < names_.size(); ++j) {
    if (names_[j] == name) return static_cast<int>(j);
  }
  throw ValidationError("unknown joint name '" + name + "'");
}

bool SkeletonModel::in_subtree(int joint, int ancestor) const {
  for (int j = joint; j >= 0; j = parents_[j]) {
    if (j == ancestor) return true;
  }
  return false;
}

GlobalPose forward_kinematics(const SkeletonModel& skeleton, const Pose& pose) {
  const int n = skeleton.joint_count();
  if (static_cast<int>(pose.rotations.size()) != n) {
    throw ValidationError("pose has " + std::to_string(pose.rotations.size()) + " rotations, skeleton has " +
                          std::to_string(n) + " joints");
  }
  GlobalPose out;
  out.positions.resize(n);
  out.rotations.resize(n);
  out.positions[0] = pose.root_translation;
  out.rotations[0] = pose.rotations[0];
  for (int j = 1; j < n; ++j) {
    const int p = skeleton.parent(j);
    out.positions[j] = out.positions[p] + out.rotations[p] * skeleton.offset(j);
    out.rotations[j] = out.rotations[p] * pose.rotations[j];
  }
  return out;
}

JointTrack joint_positions(const SkeletonModel& skeleton, const MotionSequence& motion) {
  JointTrack out;
  out.reserve(motion.size());
  for (const auto& pose : motion.frames) out.push_back(forward_kinematics(skeleton, pose).positions);
  return out;
}

JointTrack finite_difference(const JointTrack& positions, double frame_rate) {
  const std::size_t n = positions.size();
  if (n < 2) throw ValidationError("velocities need at least two frames");
  JointTrack v(n, std::vector<Vec3>(positions[0].size()));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < positions[t].size(); ++j) {
      if (t == 0) {
        v[t][j] = (positions[1][j] - positions[0][j]) * frame_rate;
      } else if (t + 1 == n) {
        v[t][j] = (positions[t][j] - positions[t - 1][j]) * frame_rate;
      } else {
        v[t][j] = (positions[t + 1][j] - positions[t - 1][j]) * (0.5 * frame_rate);
      }
    }
  }
  return v;
}

JointTrack joint_velocities(const SkeletonModel& skeleton, const MotionSequence& motion) {
  if (motion.size() < 2) throw ValidationError("joint_velocities needs at least two frames");
  return finite_difference(joint_positions(skeleton, motion), motion.frame_rate);
}

std::vector<ContactPair> label_contacts(const SkeletonModel& skeleton, const MotionSequence& motion, double floor_level,
                                        const ContactThresholds& thresholds) {
  return label_contacts(skeleton, motion, [floor_level](double, double) { return floor_level; }, thresholds);
}

std::vector<ContactPair> label_contacts(const SkeletonModel& skeleton, const MotionSequence& motion,
                                        const FloorHeightField& floor, const ContactThresholds& thresholds) {
  const JointTrack pos = joint_positions(skeleton, motion);
  JointTrack vel;
  if (motion.size() >= 2) vel = finite_difference(pos, motion.frame_rate);
  const std::array<int, 2> feet = {skeleton.named().l_foot, skeleton.named().r_foot};
  std::vector<ContactPair> out(motion.size());
  for (std::size_t t = 0; t < motion.size(); ++t) {
    for (int k = 0; k < 2; ++k) {
      const Vec3& p = pos[t][feet[k]];
      const double height = p.z() - floor(p.x(), p.y());
      const double speed = vel.empty() ? 0.0 : vel[t][feet[k]].norm();
      out[t][k] = (height < thresholds.max_height && speed < thresholds.max_speed) ? 1.0 : 0.0;
    }
  }
  return out;
}

Pose transform_pose(const RigidTransform& t, const Pose& pose) {
  Pose out = pose;
  out.root_translation = t.apply(pose.root_translation);
  out.rotations[0] = t.rotation * pose.rotations[0];
  return out;
}

NormalizedWindow normalize_window(std::span<const Pose> frames, std::span<const RigidTransform> head) {
  if (frames.empty() || head.empty()) throw ValidationError("normalize_window: empty window");
  if (frames.size() != head.size()) throw ValidationError("normalize_window: pose and head lengths differ");
  NormalizedWindow out;
  out.world_to_head = head[0].inverse();
  out.frames.reserve(frames.size());
  out.head.reserve(head.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.frames.push_back(transform_pose(out.world_to_head, frames[t]));
    out.head.push_back(out.world_to_head * head[t]);
  }
  return out;
}

std::vector<Pose> denormalize_frames(std::span<const Pose> frames, const RigidTransform& world_to_head) {
  const RigidTransform head_to_world = world_to_head.inverse();
  std::vector<Pose> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(transform_pose(head_to_world, f));
  return out;
}

}  // namespace sparsecap
