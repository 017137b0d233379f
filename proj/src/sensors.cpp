#include "sparsecap/sensors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sparsecap/errors.hpp"

namespace sparsecap {

HeadTrajectory HeadTrajectory::from_poses(std::vector<RigidTransform> poses, double frame_rate) {
  HeadTrajectory h;
  h.frame_rate = frame_rate;
  h.up.reserve(poses.size());
  for (const auto& p : poses) h.up.push_back(p.rotation * kHeadLocalUp);
  h.poses = std::move(poses);
  return h;
}

std::vector<Vec3> second_difference_acceleration(std::span<const Vec3> positions, double frame_rate, int n) {
  const int count = static_cast<int>(positions.size());
  if (n < 1) throw ValidationError("second difference span must be >= 1");
  if (count <= 2 * n) {
    throw ValidationError("motion too short for acceleration synthesis: " + std::to_string(count) + " frames, need > " +
                          std::to_string(2 * n));
  }
  const double h = n / frame_rate;
  const double inv = 1.0 / (h * h);
  std::vector<Vec3> acc(count);
  for (int t = n; t < count - n; ++t) {
    acc[t] = (positions[t - n] + positions[t + n] - 2.0 * positions[t]) * inv;
  }
  for (int t = 0; t < n; ++t) acc[t] = acc[n];
  for (int t = count - n; t < count; ++t) acc[t] = acc[count - n - 1];
  return acc;
}

ImuStream synthesize_imu(const MotionSequence& motion, const SkeletonModel& skeleton, int n) {
  const std::array<int, 2> wrists = {skeleton.named().l_wrist, skeleton.named().r_wrist};
  std::array<std::vector<Vec3>, 2> pos;
  ImuStream out;
  out.frame_rate = motion.frame_rate;
  out.frames.resize(motion.size());
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const GlobalPose g = forward_kinematics(skeleton, motion.frames[t]);
    for (int k = 0; k < 2; ++k) {
      out.frames[t][k].orientation = g.rotations[wrists[k]];
      pos[k].push_back(g.positions[wrists[k]]);
    }
  }
  for (int k = 0; k < 2; ++k) {
    const auto acc = second_difference_acceleration(pos[k], motion.frame_rate, n);
    for (std::size_t t = 0; t < motion.size(); ++t) out.frames[t][k].acceleration = acc[t];
  }
  return out;
}

std::vector<Vec3> average_filter(std::span<const Vec3> signal, int window) {
  if (window < 1 || window % 2 == 0) throw ValidationError("average filter window must be odd and >= 1");
  const int n = static_cast<int>(signal.size());
  const int half = window / 2;
  std::vector<Vec3> out(n);
  for (int t = 0; t < n; ++t) {
    const int lo = std::max(0, t - half);
    const int hi = std::min(n - 1, t + half);
    Vec3 sum = Vec3::Zero();
    for (int k = lo; k <= hi; ++k) sum += signal[k];
    out[t] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

void filter_accelerations(ImuStream& imu, int window) {
  for (int k = 0; k < 2; ++k) {
    std::vector<Vec3> acc;
    acc.reserve(imu.size());
    for (const auto& f : imu.frames) acc.push_back(f[k].acceleration);
    const auto filtered = average_filter(acc, window);
    for (std::size_t t = 0; t < imu.size(); ++t) imu.frames[t][k].acceleration = filtered[t];
  }
}

HeadTrajectory head_from_motion(const MotionSequence& motion, const SkeletonModel& skeleton) {
  const int head = skeleton.named().head;
  std::vector<RigidTransform> poses;
  poses.reserve(motion.size());
  for (const auto& pose : motion.frames) {
    const GlobalPose g = forward_kinematics(skeleton, pose);
    poses.push_back({g.rotations[head], g.positions[head]});
  }
  return HeadTrajectory::from_poses(std::move(poses), motion.frame_rate);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line, const char* column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ValidationError("watch csv line " + std::to_string(line) + ": bad value '" + s + "' in column " + column);
  }
  return v;
}

}  // namespace

WatchRecording parse_watch_csv(std::istream& in, double target_rate) {
  static constexpr std::array<const char*, 8> kColumns = {"time_s", "qw", "qx", "qy", "qz", "ax", "ay", "az"};
  std::string line;
  std::size_t line_no = 0;
  std::array<std::size_t, 8> index{};
  bool have_header = false;
  WatchRecording raw;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (!have_header) {
      for (std::size_t c = 0; c < kColumns.size(); ++c) {
        const auto it = std::find(cells.begin(), cells.end(), kColumns[c]);
        if (it == cells.end()) {
          throw ValidationError("watch csv line " + std::to_string(line_no) + ": missing column '" + kColumns[c] + "'");
        }
        index[c] = static_cast<std::size_t>(it - cells.begin());
      }
      have_header = true;
      continue;
    }
    std::array<double, 8> v{};
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      if (index[c] >= cells.size()) {
        throw ValidationError("watch csv line " + std::to_string(line_no) + ": missing column '" + kColumns[c] + "'");
      }
      v[c] = parse_number(cells[index[c]], line_no, kColumns[c]);
    }
    if (!raw.time.empty() && !(v[0] > raw.time.back())) {
      throw ValidationError("watch csv line " + std::to_string(line_no) + ": timestamps are not strictly increasing");
    }
    raw.time.push_back(v[0]);
    try {
      raw.orientation.push_back(Rotation::from_quaternion({v[1], v[2], v[3], v[4]}));
    } catch (const ValidationError& e) {
      throw ValidationError("watch csv line " + std::to_string(line_no) + ": " + e.what());
    }
    raw.acceleration.emplace_back(v[5], v[6], v[7]);
  }
  if (!have_header) throw ValidationError("watch csv: missing header");
  if (target_rate <= 0.0 || raw.size() < 2) return raw;

  WatchRecording out;
  const double t0 = raw.time.front();
  const double t1 = raw.time.back();
  std::size_t j = 0;
  for (std::size_t k = 0;; ++k) {
    const double target = t0 + static_cast<double>(k) / target_rate;
    if (target > t1 + 1e-9) break;
    while (j + 1 < raw.size() && std::abs(raw.time[j + 1] - target) <= std::abs(raw.time[j] - target)) ++j;
    out.time.push_back(target);
    out.orientation.push_back(raw.orientation[j]);
    out.acceleration.push_back(raw.acceleration[j]);
  }
  return out;
}

WatchRecording parse_watch_csv(const std::string& path, double target_rate) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open watch csv '" + path + "'");
  return parse_watch_csv(in, target_rate);
}

void write_watch_csv(std::ostream& out, const WatchRecording& rec) {
  out << "time_s,qw,qx,qy,qz,ax,ay,az\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < rec.size(); ++t) {
    const Quat4 q = rec.orientation[t].quaternion();
    const Vec3& a = rec.acceleration[t];
    out << rec.time[t] << ',' << q[0] << ',' << q[1] << ',' << q[2] << ',' << q[3] << ',' << a.x() << ',' << a.y()
        << ',' << a.z() << '\n';
  }
}

void write_watch_csv(const std::string& path, const WatchRecording& rec) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_watch_csv(out, rec);
}

WatchRecording extract_wrist(const ImuStream& imu, int side) {
  WatchRecording rec;
  for (std::size_t t = 0; t < imu.size(); ++t) {
    rec.time.push_back(static_cast<double>(t) / imu.frame_rate);
    rec.orientation.push_back(imu.frames[t][side].orientation);
    rec.acceleration.push_back(imu.frames[t][side].acceleration);
  }
  return rec;
}

ImuStream combine_wrists(const WatchRecording& left, const WatchRecording& right, double frame_rate) {
  ImuStream imu;
  imu.frame_rate = frame_rate;
  const std::size_t n = std::min(left.size(), right.size());
  imu.frames.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    imu.frames[t][kLeft] = {left.orientation[t], left.acceleration[t]};
    imu.frames[t][kRight] = {right.orientation[t], right.acceleration[t]};
  }
  return imu;
}

}  // namespace sparsecap
