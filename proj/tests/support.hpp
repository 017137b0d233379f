#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "sparsecap/geometry.hpp"
#include "sparsecap/skeleton.hpp"

namespace testgen {

using namespace sparsecap;

inline constexpr double kPi = 3.14159265358979323846;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sigma = 1.0) { return std::normal_distribution<double>(0.0, sigma)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  Vec3 vec3(double scale = 1.0) { return Vec3(normal(), normal(), normal()) * scale; }
  Vec3 unit() {
    Vec3 v;
    do v = vec3(); while (v.norm() < 1e-3);
    return v.normalized();
  }
  /// Uniform on SO(3) through a normalized Gaussian quaternion.
  Rotation rotation() {
    Eigen::Vector4d q;
    do q = Eigen::Vector4d(normal(), normal(), normal(), normal()); while (q.norm() < 1e-3);
    q.normalize();
    return Rotation::from_quaternion({q[0], q[1], q[2], q[3]});
  }
  /// Rotation by an angle up to max_angle about a random axis.
  Rotation small_rotation(double max_angle) { return Rotation::from_angle_axis(unit() * uniform(0.0, max_angle)); }
  RigidTransform rigid(double translation = 2.0) { return {rotation(), vec3(translation)}; }
  Pose pose(double joint_angle = 0.6) {
    Pose p;
    p.root_translation = Vec3(uniform(-2, 2), uniform(-2, 2), uniform(0.7, 1.1));
    p.rotations[0] = Rotation::about_z(uniform(-kPi, kPi)) * small_rotation(0.2);
    for (int j = 1; j < kJointCount; ++j) p.rotations[j] = small_rotation(joint_angle);
    return p;
  }
  /// Smooth random motion: sinusoidal joint angles around a random base pose.
  MotionSequence motion(int frames, double amplitude = 0.3) {
    const Pose base = pose(0.4);
    std::vector<Vec3> axis(kJointCount), phase(kJointCount);
    for (int j = 0; j < kJointCount; ++j) {
      axis[j] = unit() * uniform(0.2, 1.0) * amplitude;
      phase[j] = Vec3(uniform(0, 2 * kPi), uniform(0.5, 3.0), 0);
    }
    const Vec3 drift = Vec3(uniform(-1, 1), uniform(-1, 1), 0);
    MotionSequence m;
    for (int t = 0; t < frames; ++t) {
      const double s = t / 30.0;
      Pose p = base;
      p.root_translation += drift * s + Vec3(0, 0, 0.02 * std::sin(4 * s + phase[0].x()));
      for (int j = 0; j < kJointCount; ++j) {
        p.rotations[j] = p.rotations[j] * Rotation::from_angle_axis(axis[j] * std::sin(phase[j].y() * s + phase[j].x()));
      }
      m.frames.push_back(std::move(p));
    }
    return m;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double max_abs_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace testgen
