#pragma once

#include <iosfwd>
#include <string>

#include "sparsecap/skeleton.hpp"

namespace sparsecap {

/// BVH export: offsets and root translation in centimetres, rotations as
/// ZXY Euler angles in degrees, world axes unchanged (z up).
void export_bvh(std::ostream& out, const MotionSequence& motion, const SkeletonModel& skeleton);
void export_bvh(const std::string& path, const MotionSequence& motion, const SkeletonModel& skeleton);

/// Reads a BVH file whose joints match the skeleton by name, parent and
/// offset. Any Euler channel order is accepted. Contacts are left empty.
MotionSequence import_bvh(std::istream& in, const SkeletonModel& skeleton);
MotionSequence import_bvh(const std::string& path, const SkeletonModel& skeleton);

}  // namespace sparsecap
