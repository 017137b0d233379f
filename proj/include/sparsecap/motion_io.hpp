#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sparsecap/geometry.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

// Motion JSON Lines: one frame per line,
//   {"t": seconds, "p0": [x,y,z], "q": [[w,x,y,z] x 22], "contact": [l, r]}
// "contact" is optional but must be present on every line or none.
MotionSequence read_motion_jsonl(std::istream& in);
MotionSequence read_motion_jsonl(const std::string& path);
void write_motion_jsonl(std::ostream& out, const MotionSequence& motion);
void write_motion_jsonl(const std::string& path, const MotionSequence& motion);

// Skeleton JSON: {"names": [...], "parents": [...], "offsets": [[x,y,z], ...],
//                 "joints": {"head": i, "l_wrist": i, "r_wrist": i, "l_foot": i, "r_foot": i}}
SkeletonModel read_skeleton_json(const std::string& path);
void write_skeleton_json(const std::string& path, const SkeletonModel& skeleton);
/// Path of the shipped mean-body skeleton file.
std::string default_skeleton_path();

struct TimedPose {
  double t = 0.0;
  RigidTransform pose;
};

// Pose trajectory JSON Lines (camera or head): {"t": s, "p": [3], "q": [w,x,y,z]}
std::vector<TimedPose> read_pose_jsonl(std::istream& in);
std::vector<TimedPose> read_pose_jsonl(const std::string& path);
void write_pose_jsonl(std::ostream& out, const std::vector<TimedPose>& poses);
void write_pose_jsonl(const std::string& path, const std::vector<TimedPose>& poses);

}  // namespace sparsecap
