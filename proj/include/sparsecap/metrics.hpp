#pragma once

#include <string>
#include <vector>

#include "sparsecap/skeleton.hpp"

namespace sparsecap {

/// Error metrics against ground truth. Positions in cm, velocities in cm/s.
struct MetricReport {
  double mpjpe = 0, r_mpjpe = 0, mpjve = 0, root_pe = 0;
  /// Predicted jerk magnitude over ground-truth jerk magnitude.
  double jitter_ratio = 0;
  int frames = 0;
  int joints = 0;
  std::vector<double> per_joint_mpjpe, per_joint_r_mpjpe, per_joint_mpjve;
};

/// Mean joint position error in cm.
double mpjpe(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt);
/// Same after subtracting each frame's root position from every joint.
double r_mpjpe(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt);
/// Mean root translation error in cm.
double root_pe(const MotionSequence& pred, const MotionSequence& gt);
/// Mean joint velocity error in cm/s; needs at least two frames.
double mpjve(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt);
/// Mean jerk norm (third difference times rate cubed) over joints and frames.
double mean_jerk(const SkeletonModel& skeleton, const MotionSequence& motion);
/// Needs at least four frames; throws NumericalError when the ground truth has no jerk.
double jitter_ratio(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt);

/// All five metrics with per-joint breakdowns. Jitter is reported as 0 for
/// sequences shorter than four frames.
MetricReport evaluate_motion(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt);

/// Deterministic JSON text with joint names as keys of the breakdowns.
std::string metric_report_json(const MetricReport& report, const SkeletonModel& skeleton);

}  // namespace sparsecap
