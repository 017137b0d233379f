#include "sparsecap/floor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sparsecap/errors.hpp"

namespace sparsecap {

PointCloud::PointCloud(std::vector<Vec3> points, double cell) : points_(std::move(points)), cell_(cell) {
  if (!(cell_ > 0)) throw ValidationError("point cloud cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec3& p = points_[i];
    if (!p.allFinite()) throw ValidationError("point cloud has a non-finite point at index " + std::to_string(i));
    grid_[key(cell_of(p.x()), cell_of(p.y()), cell_of(p.z()))].push_back(i);
  }
}

PointCloud::Key PointCloud::key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
  constexpr std::int64_t kBias = 1 << 20;
  constexpr std::int64_t kMask = (1 << 21) - 1;
  return ((ix + kBias) & kMask) << 42 | ((iy + kBias) & kMask) << 21 | ((iz + kBias) & kMask);
}

std::int64_t PointCloud::cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }

std::vector<std::size_t> PointCloud::radius_query(const Vec3& center, double r) const {
  std::vector<std::size_t> out;
  if (points_.empty() || !(r > 0)) return out;
  const double r2 = r * r;
  const std::int64_t x0 = cell_of(center.x() - r), x1 = cell_of(center.x() + r);
  const std::int64_t y0 = cell_of(center.y() - r), y1 = cell_of(center.y() + r);
  const std::int64_t z0 = cell_of(center.z() - r), z1 = cell_of(center.z() + r);
  for (std::int64_t ix = x0; ix <= x1; ++ix) {
    for (std::int64_t iy = y0; iy <= y1; ++iy) {
      for (std::int64_t iz = z0; iz <= z1; ++iz) {
        const auto it = grid_.find(key(ix, iy, iz));
        if (it == grid_.end()) continue;
        for (std::size_t idx : it->second) {
          if ((points_[idx] - center).squaredNorm() < r2) out.push_back(idx);
        }
      }
    }
  }
  return out;
}

CloudFormat cloud_format_from_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0 ? CloudFormat::kBinaryFloat32
                                                                           : CloudFormat::kAsciiXyz;
}

PointCloud read_point_cloud(const std::string& path, CloudFormat format, double cell) {
  std::vector<Vec3> points;
  if (format == CloudFormat::kBinaryFloat32) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open point cloud '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 12 != 0) throw ValidationError("binary point cloud size is not a multiple of 12 bytes");
    for (std::size_t off = 0; off < bytes.size(); off += 12) {
      float v[3];
      for (int k = 0; k < 3; ++k) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 4 * k + b])) << (8 * b);
        std::memcpy(&v[k], &u, 4);
      }
      points.emplace_back(v[0], v[1], v[2]);
    }
  } else {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open point cloud '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ss(line);
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw ValidationError("point cloud line " + std::to_string(line_no) + ": expected 'x y z'");
      points.emplace_back(x, y, z);
    }
  }
  return PointCloud(std::move(points), cell);
}

void write_point_cloud(const std::string& path, const std::vector<Vec3>& points, CloudFormat format) {
  if (format == CloudFormat::kBinaryFloat32) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    for (const auto& p : points) {
      for (int k = 0; k < 3; ++k) {
        const float f = static_cast<float>(p[k]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b) out.put(static_cast<char>((u >> (8 * b)) & 0xff));
      }
    }
  } else {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << std::setprecision(9);
    for (const auto& p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
}

namespace {

bool in_contact(std::span<const ContactPair> contacts, int frame, int foot, double threshold) {
  if (frame < 0 || frame >= static_cast<int>(contacts.size())) return false;
  return contacts[frame][foot] > threshold;
}

}  // namespace

FloorState update_floor(const FloorState& state, int t, std::span<const ContactPair> contacts,
                        std::span<const std::array<Vec3, 2>> feet, const PointCloud& cloud, const FloorParams& params) {
  const double lambda = params.contact_threshold;
  const int past_end = std::min<int>(t, static_cast<int>(contacts.size()));
  int latest = -1;
  for (int i = past_end - 1; i >= 0; --i) {
    if (contacts[i][0] > lambda || contacts[i][1] > lambda) {
      latest = i;
      break;
    }
  }
  if (latest < 0) return state;
  if (latest >= static_cast<int>(feet.size())) throw ValidationError("update_floor: foot positions do not cover the contact frames");

  int foot = contacts[latest][0] > lambda ? 0 : 1;
  if (contacts[latest][0] > lambda && contacts[latest][1] > lambda) {
    std::array<int, 2> onset = {latest, latest};
    for (int k = 0; k < 2; ++k) {
      while (onset[k] > 0 && contacts[onset[k] - 1][k] > lambda) --onset[k];
    }
    foot = onset[1] > onset[0] ? 1 : 0;
  }

  const Vec3& p = feet[latest][foot];
  const auto near = cloud.radius_query(p, params.search_radius);
  double candidate = p.z();
  if (static_cast<int>(near.size()) >= params.min_points) {
    double sum = 0.0;
    for (std::size_t idx : near) sum += cloud.points()[idx].z();
    candidate = sum / static_cast<double>(near.size());
  }

  if (std::abs(candidate - state.level) < params.min_change) return state;
  if (state.last_update_frame >= 0 && t - state.last_update_frame < params.min_update_interval) return state;
  bool both_planted = true;
  for (int i = t - params.contact_guard_frames; i <= t + params.contact_guard_frames && both_planted; ++i) {
    both_planted = in_contact(contacts, i, 0, lambda) && in_contact(contacts, i, 1, lambda);
  }
  if (both_planted) return state;

  FloorState next = state;
  next.level = candidate;
  next.last_update_frame = t;
  next.history.push_back({t, candidate});
  return next;
}

std::vector<double> track_floor(std::span<const ContactPair> contacts, std::span<const std::array<Vec3, 2>> feet,
                                const PointCloud& cloud, FloorState& state, const FloorParams& params) {
  std::vector<double> levels(contacts.size(), state.level);
  for (int t = 1; t < static_cast<int>(contacts.size()); ++t) {
    state = update_floor(state, t, contacts, feet, cloud, params);
    levels[t] = state.level;
  }
  return levels;
}

}  // namespace sparsecap
