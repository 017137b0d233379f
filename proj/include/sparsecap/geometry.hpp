#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace sparsecap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Quaternion stored w, x, y, z.
using Quat4 = std::array<double, 4>;
// First two columns of the rotation matrix, column-major: c1.x c1.y c1.z c2.x c2.y c2.z.
using Rot6 = std::array<double, 6>;

enum class RotationRep { kMatrix, kAngleAxis, kQuaternion, kSixD };

/// A proper rotation held as an orthonormal 3x3 matrix.
///
/// All factories validate their input; the matrix is guaranteed to have
/// det = +1 and orthonormal columns to round-off.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return {}; }
  /// Rejects matrices that are not orthonormal to 1e-6.
  static Rotation from_matrix(const Mat3& m);
  /// Re-orthonormalizes the closest rotation (polar projection). Used for averaging.
  static Rotation project(const Mat3& m);
  static Rotation from_angle_axis(const Vec3& aa);
  static Rotation from_quaternion(const Quat4& q);
  static Rotation from_6d(std::span<const double, 6> v);
  static Rotation about_x(double angle) { return from_angle_axis(Vec3::UnitX() * angle); }
  static Rotation about_y(double angle) { return from_angle_axis(Vec3::UnitY() * angle); }
  static Rotation about_z(double angle) { return from_angle_axis(Vec3::UnitZ() * angle); }

  const Mat3& matrix() const { return m_; }
  Vec3 angle_axis() const;
  Quat4 quaternion() const;
  Rot6 six_d() const;

  Rotation inverse() const { return Rotation(m_.transpose(), 0); }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, 0); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Geodesic angle to another rotation, radians.
  double angle_to(const Rotation& o) const;

 private:
  Rotation(const Mat3& m, int) : m_(m) {}
  Mat3 m_;
};

/// Spherical interpolation, t in [0, 1].
Rotation slerp(const Rotation& a, const Rotation& b, double t);

/// Chordal L2 mean: the rotation closest in Frobenius norm to the arithmetic mean matrix.
Rotation chordal_mean(std::span<const Rotation> rotations);

/// Converts a flat value between representations. Matrix values are row-major (9 reals).
std::vector<double> convert_rotation(std::span<const double> value, RotationRep from, RotationRep to);

struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (a * b)(p) == a(b(p)).
  RigidTransform operator*(const RigidTransform& b) const;
};

inline Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.apply(p); }
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

/// x -> scale * R x + t.
struct SimilarityTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  SimilarityTransform inverse() const;
  /// Maps a rigid pose expressed in the source frame into the target frame; the
  /// pose translation is scaled, its orientation is rotated.
  RigidTransform apply(const RigidTransform& pose) const;
};

}  // namespace sparsecap
