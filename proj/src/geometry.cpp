#include "sparsecap/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "sparsecap/errors.hpp"

namespace sparsecap {
namespace {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

constexpr double kSmallAngle = 1e-7;

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!m.allFinite()) throw ValidationError("rotation matrix has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6 || m.determinant() < 0.0) {
    throw ValidationError("matrix is not a proper rotation (orthonormality error " + std::to_string(ortho) + ")");
  }
  return Rotation(m, 0);
}

Rotation Rotation::project(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose(), 0);
}

Rotation Rotation::from_angle_axis(const Vec3& aa) {
  if (!aa.allFinite()) throw ValidationError("angle-axis has non-finite entries");
  const double theta = aa.norm();
  const Mat3 k = skew(aa);
  if (theta < kSmallAngle) {
    // Second-order Taylor expansion of the exponential map.
    return Rotation(Mat3::Identity() + k + 0.5 * k * k, 0);
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation(Mat3::Identity() + a * k + b * k * k, 0);
}

Rotation Rotation::from_quaternion(const Quat4& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
    throw ValidationError("quaternion is not unit norm (|q| = " + std::to_string(n) + ")");
  }
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Rotation(m, 0);
}

Rotation Rotation::from_6d(std::span<const double, 6> v) {
  const Vec3 a1(v[0], v[1], v[2]);
  const Vec3 a2(v[3], v[4], v[5]);
  const double n1 = a1.norm();
  if (!(n1 >= 1e-8)) throw ValidationError("degenerate 6D rotation: first column norm below 1e-8");
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double n2 = u.norm();
  if (!(n2 >= 1e-8)) throw ValidationError("degenerate 6D rotation: columns are parallel");
  const Vec3 b2 = u / n2;
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return Rotation(m, 0);
}

Quat4 Rotation::quaternion() const {
  const Mat3& m = m_;
  const double tr = m.trace();
  double w, x, y, z;
  if (tr > 0) {
    const double s = 2.0 * std::sqrt(tr + 1.0);
    w = 0.25 * s;
    x = (m(2, 1) - m(1, 2)) / s;
    y = (m(0, 2) - m(2, 0)) / s;
    z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    w = (m(2, 1) - m(1, 2)) / s;
    x = 0.25 * s;
    y = (m(0, 1) + m(1, 0)) / s;
    z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    w = (m(0, 2) - m(2, 0)) / s;
    x = (m(0, 1) + m(1, 0)) / s;
    y = 0.25 * s;
    z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    w = (m(1, 0) - m(0, 1)) / s;
    x = (m(0, 2) + m(2, 0)) / s;
    y = (m(1, 2) + m(2, 1)) / s;
    z = 0.25 * s;
  }
  if (w < 0) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  return {w / n, x / n, y / n, z / n};
}

Vec3 Rotation::angle_axis() const {
  const Quat4 q = quaternion();
  const Vec3 v(q[1], q[2], q[3]);
  const double s = v.norm();
  if (s < 0.5 * kSmallAngle) {
    // theta ~ 2 s, axis ~ v / s.
    return 2.0 * v / q[0];
  }
  const double theta = 2.0 * std::atan2(s, q[0]);
  return v * (theta / s);
}

Rot6 Rotation::six_d() const {
  return {m_(0, 0), m_(1, 0), m_(2, 0), m_(0, 1), m_(1, 1), m_(2, 1)};
}

double Rotation::angle_to(const Rotation& o) const {
  return (inverse() * o).angle_axis().norm();
}

Rotation slerp(const Rotation& a, const Rotation& b, double t) {
  const Vec3 delta = (a.inverse() * b).angle_axis();
  return a * Rotation::from_angle_axis(delta * t);
}

Rotation chordal_mean(std::span<const Rotation> rotations) {
  if (rotations.empty()) throw ValidationError("chordal_mean of an empty set");
  Mat3 sum = Mat3::Zero();
  for (const auto& r : rotations) sum += r.matrix();
  return Rotation::project(sum / static_cast<double>(rotations.size()));
}

std::vector<double> convert_rotation(std::span<const double> value, RotationRep from, RotationRep to) {
  auto need = [&](std::size_t n) {
    if (value.size() != n) throw ValidationError("rotation value has " + std::to_string(value.size()) + " entries, expected " + std::to_string(n));
  };
  Rotation r;
  switch (from) {
    case RotationRep::kMatrix: {
      need(9);
      Mat3 m;
      for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = value[i];
      r = Rotation::from_matrix(m);
      break;
    }
    case RotationRep::kAngleAxis:
      need(3);
      r = Rotation::from_angle_axis(Vec3(value[0], value[1], value[2]));
      break;
    case RotationRep::kQuaternion:
      need(4);
      r = Rotation::from_quaternion({value[0], value[1], value[2], value[3]});
      break;
    case RotationRep::kSixD:
      need(6);
      r = Rotation::from_6d(value.first<6>());
      break;
  }
  switch (to) {
    case RotationRep::kMatrix: {
      std::vector<double> out(9);
      for (int i = 0; i < 9; ++i) out[i] = r.matrix()(i / 3, i % 3);
      return out;
    }
    case RotationRep::kAngleAxis: {
      const Vec3 aa = r.angle_axis();
      return {aa.x(), aa.y(), aa.z()};
    }
    case RotationRep::kQuaternion: {
      const Quat4 q = r.quaternion();
      return {q.begin(), q.end()};
    }
    case RotationRep::kSixD: {
      const Rot6 s = r.six_d();
      return {s.begin(), s.end()};
    }
  }
  return {};
}

RigidTransform RigidTransform::inverse() const {
  const Rotation inv = rotation.inverse();
  return {inv, -(inv * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& b) const {
  return {rotation * b.rotation, rotation * b.translation + translation};
}

SimilarityTransform SimilarityTransform::inverse() const {
  const Rotation inv = rotation.inverse();
  return {inv, -(inv * translation) / scale, 1.0 / scale};
}

RigidTransform SimilarityTransform::apply(const RigidTransform& pose) const {
  return {rotation * pose.rotation, apply(pose.translation)};
}

}  // namespace sparsecap
