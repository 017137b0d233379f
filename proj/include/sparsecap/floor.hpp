#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparsecap/geometry.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

/// Immutable scene point cloud with a uniform voxel-grid index for radius queries.
class PointCloud {
 public:
  PointCloud() = default;
  /// `cell` is the voxel edge length; queries with r <= cell touch 27 voxels.
  explicit PointCloud(std::vector<Vec3> points, double cell = 0.15);

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  /// Indices of points with |p - center| < r (strict).
  std::vector<std::size_t> radius_query(const Vec3& center, double r) const;

 private:
  using Key = std::int64_t;
  Key key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const;
  std::int64_t cell_of(double v) const;

  std::vector<Vec3> points_;
  double cell_ = 0.15;
  std::unordered_map<Key, std::vector<std::size_t>> grid_;
};

enum class CloudFormat { kAsciiXyz, kBinaryFloat32 };

PointCloud read_point_cloud(const std::string& path, CloudFormat format, double cell = 0.15);
void write_point_cloud(const std::string& path, const std::vector<Vec3>& points, CloudFormat format);
/// ".bin" selects binary, anything else ASCII.
CloudFormat cloud_format_from_path(const std::string& path);

struct FloorParams {
  double contact_threshold = 0.5;   // lambda
  double search_radius = 0.15;      // m
  int min_points = 10;
  double min_change = 0.1;          // m
  int contact_guard_frames = 5;
  int min_update_interval = 25;     // frames
};

struct FloorUpdate {
  int frame = 0;
  double level = 0.0;
};

struct FloorState {
  double level = 0.0;
  /// -1 before the first update.
  int last_update_frame = -1;
  std::vector<FloorUpdate> history;
};

/// Decides the floor level in effect at frame t.
///
/// Uses contacts/foot positions at indices < t to find the latest contact
/// frame t_m (probability > lambda on either foot; when both feet are in
/// contact the more recently planted foot wins). The candidate is the mean z
/// of cloud points within the search radius of that foot, or the foot height
/// when fewer than min_points are found. The update is skipped when the change
/// is below min_change, when fewer than min_update_interval frames passed since
/// the last update, or when both feet are in contact over [t-5, t-1] and
/// [t, t+5]. That last guard is the only read of data at index >= t; frames
/// beyond the provided contacts count as no contact.
///
/// contacts[i] / feet[i] hold frame i for i < contacts.size(); feet may be
/// shorter than contacts but must cover [0, t).
FloorState update_floor(const FloorState& state, int t, std::span<const ContactPair> contacts,
                        std::span<const std::array<Vec3, 2>> feet, const PointCloud& cloud, const FloorParams& params = {});

/// h_t = H_z - f.
inline double head_height(const RigidTransform& head, const FloorState& state) {
  return head.translation.z() - state.level;
}

/// Runs update_floor for t = 1 .. T-1 over complete contact/foot tracks and
/// returns the level in effect at every frame.
std::vector<double> track_floor(std::span<const ContactPair> contacts, std::span<const std::array<Vec3, 2>> feet,
                                const PointCloud& cloud, FloorState& state, const FloorParams& params = {});

}  // namespace sparsecap
