#include "sparsecap/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "sparsecap/errors.hpp"

namespace sparsecap {
namespace {

// Mean jerk below this (m/s^3) is round-off, not motion.
constexpr double kMinJerk = 1e-8;

constexpr double kCm = 100.0;

void check_pair(const MotionSequence& pred, const MotionSequence& gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()) + " frames");
  }
  if (pred.size() == 0) throw ValidationError("metric inputs are empty");
  if (pred.frame_rate != gt.frame_rate) throw ValidationError("metric inputs differ in frame rate");
}

std::vector<double> per_joint_mean(const JointTrack& a, const JointTrack& b, bool root_relative) {
  const std::size_t J = a.front().size();
  std::vector<double> out(J, 0.0);
  for (std::size_t t = 0; t < a.size(); ++t) {
    const Vec3 ra = root_relative ? a[t][0] : Vec3::Zero();
    const Vec3 rb = root_relative ? b[t][0] : Vec3::Zero();
    for (std::size_t j = 0; j < J; ++j) out[j] += ((a[t][j] - ra) - (b[t][j] - rb)).norm();
  }
  for (double& v : out) v *= kCm / static_cast<double>(a.size());
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double jerk_of(const JointTrack& p, double rate) {
  const std::size_t T = p.size();
  const std::size_t J = p.front().size();
  double sum = 0.0;
  for (std::size_t t = 3; t < T; ++t) {
    for (std::size_t j = 0; j < J; ++j) {
      sum += (p[t][j] - 3.0 * p[t - 1][j] + 3.0 * p[t - 2][j] - p[t - 3][j]).norm();
    }
  }
  return sum * rate * rate * rate / static_cast<double>((T - 3) * J);
}

}  // namespace

double mpjpe(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  return mean_of(per_joint_mean(joint_positions(skeleton, pred), joint_positions(skeleton, gt), false));
}

double r_mpjpe(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  return mean_of(per_joint_mean(joint_positions(skeleton, pred), joint_positions(skeleton, gt), true));
}

double root_pe(const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  double s = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    s += (pred.frames[t].root_translation - gt.frames[t].root_translation).norm();
  }
  return kCm * s / static_cast<double>(pred.size());
}

double mpjve(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  if (pred.size() < 2) throw ValidationError("velocity error needs at least two frames");
  return mean_of(per_joint_mean(joint_velocities(skeleton, pred), joint_velocities(skeleton, gt), false));
}

double mean_jerk(const SkeletonModel& skeleton, const MotionSequence& motion) {
  if (motion.size() < 4) throw ValidationError("jitter needs at least four frames");
  return jerk_of(joint_positions(skeleton, motion), motion.frame_rate);
}

double jitter_ratio(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  const double g = mean_jerk(skeleton, gt);
  if (!(g > kMinJerk)) throw NumericalError("jitter ratio is undefined: ground truth has no jerk");
  return mean_jerk(skeleton, pred) / g;
}

MetricReport evaluate_motion(const SkeletonModel& skeleton, const MotionSequence& pred, const MotionSequence& gt) {
  check_pair(pred, gt);
  const JointTrack pp = joint_positions(skeleton, pred), gp = joint_positions(skeleton, gt);
  MetricReport r;
  r.frames = static_cast<int>(pred.size());
  r.joints = skeleton.joint_count();
  r.per_joint_mpjpe = per_joint_mean(pp, gp, false);
  r.per_joint_r_mpjpe = per_joint_mean(pp, gp, true);
  r.mpjpe = mean_of(r.per_joint_mpjpe);
  r.r_mpjpe = mean_of(r.per_joint_r_mpjpe);
  r.root_pe = root_pe(pred, gt);
  if (pred.size() >= 2) {
    r.per_joint_mpjve = per_joint_mean(finite_difference(pp, pred.frame_rate), finite_difference(gp, gt.frame_rate), false);
    r.mpjve = mean_of(r.per_joint_mpjve);
  } else {
    r.per_joint_mpjve.assign(r.joints, 0.0);
  }
  if (pred.size() >= 4) {
    const double g = jerk_of(gp, gt.frame_rate);
    if (!(g > kMinJerk)) throw NumericalError("jitter ratio is undefined: ground truth has no jerk");
    r.jitter_ratio = jerk_of(pp, pred.frame_rate) / g;
  }
  return r;
}

std::string metric_report_json(const MetricReport& r, const SkeletonModel& skeleton) {
  nlohmann::ordered_json j;
  j["frames"] = r.frames;
  j["mpjpe_cm"] = r.mpjpe;
  j["r_mpjpe_cm"] = r.r_mpjpe;
  j["mpjve_cm_s"] = r.mpjve;
  j["root_pe_cm"] = r.root_pe;
  j["jitter_ratio"] = r.jitter_ratio;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (int k = 0; k < r.joints; ++k) {
    per[skeleton.name(k)] = {{"mpjpe_cm", r.per_joint_mpjpe[k]},
                             {"r_mpjpe_cm", r.per_joint_r_mpjpe[k]},
                             {"mpjve_cm_s", r.per_joint_mpjve[k]}};
  }
  j["per_joint"] = per;
  return j.dump(2);
}

}  // namespace sparsecap
