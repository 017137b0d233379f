#include "sparsecap/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "sparsecap/errors.hpp"
#include "sparsecap/motion_io.hpp"

namespace sparsecap {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSwingLift = 0.10;
constexpr double kPelvisBehindFeet = 0.06;
constexpr int kStandFrames = 15;

double smoothstep(double a, double b, double x) {
  const double u = std::clamp((x - a) / (b - a), 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct LegJoints {
  int hip, knee, ankle, foot;
};

struct Body {
  const SkeletonModel& skel;
  int pelvis, spine1, spine2, spine3, neck, head;
  LegJoints legs[2];
  int collar[2], shoulder[2], elbow[2], wrist[2];
  double thigh, shin;

  explicit Body(const SkeletonModel& s) : skel(s) {
    pelvis = s.index_of("pelvis");
    spine1 = s.index_of("spine1");
    spine2 = s.index_of("spine2");
    spine3 = s.index_of("spine3");
    neck = s.index_of("neck");
    head = s.index_of("head");
    const char* side[2] = {"l_", "r_"};
    for (int k = 0; k < 2; ++k) {
      const std::string p = side[k];
      legs[k] = {s.index_of(p + "hip"), s.index_of(p + "knee"), s.index_of(p + "ankle"), s.index_of(p + "foot")};
      collar[k] = s.index_of(p + "collar");
      shoulder[k] = s.index_of(p + "shoulder");
      elbow[k] = s.index_of(p + "elbow");
      wrist[k] = s.index_of(p + "wrist");
    }
    if (s.parent(legs[0].hip) != pelvis || s.parent(legs[1].hip) != pelvis) {
      throw ValidationError("scenario generation needs hips attached to the pelvis");
    }
    auto straight_down = [](const Vec3& o) { return std::abs(o.x()) < 1e-12 && std::abs(o.y()) < 1e-12 && o.z() < 0; };
    for (const auto& leg : legs) {
      if (!straight_down(s.offset(leg.knee)) || !straight_down(s.offset(leg.ankle))) {
        throw ValidationError("scenario generation needs thigh and shin offsets along -z");
      }
    }
    thigh = -s.offset(legs[0].knee).z();
    shin = -s.offset(legs[0].ankle).z();
  }

  // Sagittal two-bone IK that puts the foot joint at `foot` with a flat foot.
  void solve_leg(Pose& pose, int side, const Vec3& foot) const {
    const LegJoints& leg = legs[side];
    const Vec3 hip = pose.root_translation + pose.rotations[pelvis] * skel.offset(leg.hip);
    const Vec3 ankle = foot - skel.offset(leg.foot);
    const Vec3 d = ankle - hip;
    if (std::abs(d.x()) > 1e-9) throw ValidationError("scenario foot placement leaves the leg plane");
    const double dist = std::hypot(d.y(), d.z());
    const double reach = thigh + shin;
    if (dist > reach + 1e-12) throw ValidationError("scenario foot placement is out of reach");
    const double c = std::clamp((thigh * thigh + shin * shin - dist * dist) / (2 * thigh * shin), -1.0, 1.0);
    const double knee = kPi - std::acos(c);
    const double toward = std::atan2(d.y(), -d.z());
    const double inner = std::asin(std::clamp(shin * std::sin(knee) / std::max(dist, 1e-12), -1.0, 1.0));
    const double hip_angle = toward + inner;
    pose.rotations[leg.hip] = Rotation::about_x(hip_angle);
    pose.rotations[leg.knee] = Rotation::about_x(-knee);
    pose.rotations[leg.ankle] = Rotation::about_x(knee - hip_angle);
    pose.rotations[leg.foot] = Rotation::identity();
  }
};

struct Swing {
  int start;
  Vec3 from, to;
};

// Foot joint position of one foot at frame t given its ordered swings.
Vec3 foot_at(const Vec3& initial, const std::vector<Swing>& swings, int swing_frames, int t) {
  Vec3 p = initial;
  for (const auto& s : swings) {
    if (t <= s.start) break;
    if (t >= s.start + swing_frames) {
      p = s.to;
      continue;
    }
    const double u = static_cast<double>(t - s.start) / swing_frames;
    // Horizontal motion at constant speed; height change eases in so the foot lifts first.
    p = s.from + (s.to - s.from) * u;
    p.z() = s.from.z() + (s.to.z() - s.from.z()) * u * u + kSwingLift * std::sin(kPi * u);
    break;
  }
  return p;
}

struct WalkPlan {
  std::vector<std::array<Vec3, 2>> feet;
};

WalkPlan plan_walk(const ScenarioSpec& spec, int frames, double step_length, const std::function<double(double)>& floor_at,
                   double foot_x) {
  std::array<Vec3, 2> initial = {Vec3(-foot_x, 0, floor_at(0)), Vec3(foot_x, 0, floor_at(0))};
  std::array<std::vector<Swing>, 2> swings;
  std::array<Vec3, 2> current = initial;
  for (int k = 1;; ++k) {
    const int start = kStandFrames + (k - 1) * spec.step_frames;
    if (start >= frames) break;
    const int side = (k % 2 == 1) ? kLeft : kRight;
    const double y = k * step_length;
    const Vec3 to(current[side].x(), y, floor_at(y));
    swings[side].push_back({start, current[side], to});
    current[side] = to;
  }
  WalkPlan plan;
  plan.feet.resize(frames);
  for (int t = 0; t < frames; ++t) {
    for (int s = 0; s < 2; ++s) plan.feet[t][s] = foot_at(initial[s], swings[s], spec.swing_frames, t);
  }
  return plan;
}

void walking_upper_body(const Body& b, Pose& pose, double phase, double t_sec, double arm_amp) {
  pose.rotations[b.spine1] = Rotation::about_x(-0.04) * Rotation::about_z(0.05 * std::sin(phase));
  pose.rotations[b.spine2] = Rotation::about_x(0.02 * std::sin(2 * phase));
  pose.rotations[b.neck] = Rotation::about_x(0.03);
  pose.rotations[b.head] =
      Rotation::about_z(0.15 * std::sin(2 * kPi * t_sec / 5.0)) * Rotation::about_x(-0.12 + 0.04 * std::sin(2 * kPi * t_sec / 3.0));
  pose.rotations[b.shoulder[kLeft]] = Rotation::about_x(arm_amp * std::sin(phase)) * Rotation::about_y(-1.3);
  pose.rotations[b.shoulder[kRight]] = Rotation::about_x(-arm_amp * std::sin(phase)) * Rotation::about_y(1.3);
  pose.rotations[b.elbow[kLeft]] = Rotation::about_z(-0.4 - 0.1 * std::sin(phase));
  pose.rotations[b.elbow[kRight]] = Rotation::about_z(0.4 - 0.1 * std::sin(phase));
  pose.rotations[b.wrist[kLeft]] = Rotation::about_x(0.1 * std::sin(phase));
  pose.rotations[b.wrist[kRight]] = Rotation::about_x(-0.1 * std::sin(phase));
}

MotionSequence walk_motion(const Body& b, const ScenarioSpec& spec, const WalkPlan& plan, double arm_amp) {
  // Pelvis height above the mean foot height; lower on stairs to keep the leading foot in reach.
  const double pelvis_height = spec.kind == ScenarioKind::kStaircase ? 0.80 : 0.86;
  MotionSequence m;
  m.frame_rate = spec.frame_rate;
  for (int t = 0; t < static_cast<int>(plan.feet.size()); ++t) {
    const auto& f = plan.feet[t];
    Pose pose;
    pose.root_translation = Vec3((f[0].x() + f[1].x()) / 2, (f[0].y() + f[1].y()) / 2 - kPelvisBehindFeet,
                                 (f[0].z() + f[1].z()) / 2 + pelvis_height);
    const double phase = kPi * (t - kStandFrames) / spec.step_frames;
    walking_upper_body(b, pose, phase, t / spec.frame_rate, arm_amp);
    for (int s = 0; s < 2; ++s) b.solve_leg(pose, s, f[s]);
    m.frames.push_back(std::move(pose));
  }
  return m;
}

MotionSequence sync_motion(const Body& b, const ScenarioSpec& spec, int frames, std::mt19937_64& rng,
                           std::vector<int>& stops) {
  constexpr int kRise = 15;
  constexpr double kLow = 0.1, kHigh = 1.7;
  std::uniform_int_distribution<int> period(54, 66);
  std::vector<int> starts;
  for (int s = 20; s < frames; s += period(rng)) starts.push_back(s);
  stops.clear();
  for (int s : starts) {
    if (s + kRise < frames) stops.push_back(s + kRise);
  }

  auto arm_angle = [&](int t) {
    double theta = kLow;
    for (std::size_t c = 0; c < starts.size(); ++c) {
      const int s = starts[c];
      if (t < s) break;
      const int next = c + 1 < starts.size() ? starts[c + 1] : s + 60;
      if (t <= s + kRise) {
        const double u = static_cast<double>(t - s) / kRise;
        theta = kLow + (kHigh - kLow) * u * u;
      } else {
        const double v = std::min(1.0, static_cast<double>(t - s - kRise) / (next - s - kRise));
        theta = kLow + (kHigh - kLow) * 0.5 * (1 + std::cos(kPi * v));
      }
    }
    return theta;
  };

  const Vec3 feet[2] = {Vec3(-0.09, 0.06, 0), Vec3(0.09, 0.06, 0)};
  MotionSequence m;
  m.frame_rate = spec.frame_rate;
  for (int t = 0; t < frames; ++t) {
    double bob = 0.0;
    for (int e : stops) bob = std::max(bob, std::exp(-std::pow((t - e) / 8.0, 2)));
    Pose pose;
    pose.root_translation = Vec3(0, 0, 0.90 + 0.02 * bob);
    const double theta = arm_angle(t);
    pose.rotations[b.shoulder[kLeft]] = Rotation::about_x(theta) * Rotation::about_y(-1.35);
    pose.rotations[b.shoulder[kRight]] = Rotation::about_x(theta) * Rotation::about_y(1.35);
    pose.rotations[b.elbow[kLeft]] = Rotation::about_z(-0.2);
    pose.rotations[b.elbow[kRight]] = Rotation::about_z(0.2);
    for (int s = 0; s < 2; ++s) b.solve_leg(pose, s, feet[s]);
    m.frames.push_back(std::move(pose));
  }
  return m;
}

MotionSequence reach_motion(const Body& b, const ScenarioSpec& spec, int frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::uniform_real_distribution<double> spread(-1.0, 1.0);
  const double tilt = -0.35 + 3.0 * jitter(rng);
  const double look = -0.45 + jitter(rng);
  const double azimuth = 1.45 + 0.25 * spread(rng);
  const double onset = 0.15 + 0.05 * spread(rng);
  const Rotation hang = Rotation::about_y(1.3);
  const Rotation reach = Rotation::about_x(tilt) * Rotation::about_z(azimuth);
  const Vec3 feet[2] = {Vec3(-0.09, 0.06, 0), Vec3(0.09, 0.06, 0)};
  MotionSequence m;
  m.frame_rate = spec.frame_rate;
  const double T = frames;
  for (int t = 0; t < frames; ++t) {
    const double s = smoothstep(onset * T, (onset + 0.25) * T, t) * (1.0 - smoothstep(0.60 * T, 0.85 * T, t));
    const double sway = std::sin(2 * kPi * t / 60.0);
    Pose pose;
    pose.root_translation = Vec3(0, 0, 0.92 + 0.01 * std::sin(2 * kPi * t / 45.0));
    pose.rotations[b.spine1] = Rotation::about_x(-0.12 * s) * Rotation::about_z(0.03 * sway);
    pose.rotations[b.neck] = Rotation::about_x(-0.15 * s);
    pose.rotations[b.head] = Rotation::about_x(look * s) * Rotation::about_z(0.05 * sway);
    pose.rotations[b.shoulder[kRight]] = slerp(hang, reach, s);
    pose.rotations[b.elbow[kRight]] = Rotation::about_z(0.6 * (1 - s) + 0.15 * s);
    pose.rotations[b.wrist[kRight]] = Rotation::about_x(0.2 * s);
    pose.rotations[b.shoulder[kLeft]] = Rotation::about_x(0.05 * sway) * Rotation::about_y(-1.3);
    pose.rotations[b.elbow[kLeft]] = Rotation::about_z(-0.3);
    for (int k = 0; k < 2; ++k) b.solve_leg(pose, k, feet[k]);
    m.frames.push_back(std::move(pose));
  }
  return m;
}

std::vector<Vec3> grid_cloud(double x0, double x1, double y0, double y1, double spacing, double noise,
                             const std::function<double(double, double)>& height, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, noise);
  std::vector<Vec3> pts;
  const int nx = static_cast<int>(std::floor((x1 - x0) / spacing)) + 1;
  const int ny = static_cast<int>(std::floor((y1 - y0) / spacing)) + 1;
  pts.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = x0 + i * spacing, y = y0 + j * spacing;
      const double dx = noise > 0 ? n(rng) : 0.0, dy = noise > 0 ? n(rng) : 0.0, dz = noise > 0 ? n(rng) : 0.0;
      pts.emplace_back(x + dx, y + dy, height(x, y) + dz);
    }
  }
  return pts;
}

}  // namespace

std::string scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kFlatWalk:
      return "flat-walk";
    case ScenarioKind::kStaircase:
      return "staircase";
    case ScenarioKind::kArmSwingSync:
      return "arm-swing-sync";
    case ScenarioKind::kReachInteraction:
      return "reach-interaction";
  }
  return "unknown";
}

ScenarioKind parse_scenario_kind(const std::string& name) {
  for (auto k : {ScenarioKind::kFlatWalk, ScenarioKind::kStaircase, ScenarioKind::kArmSwingSync,
                 ScenarioKind::kReachInteraction}) {
    if (scenario_name(k) == name) return k;
  }
  throw ValidationError("unknown scenario kind '" + name +
                        "' (expected flat-walk, staircase, arm-swing-sync or reach-interaction)");
}

ScenarioSpec ScenarioSpec::defaults(ScenarioKind kind) {
  ScenarioSpec s;
  s.kind = kind;
  switch (kind) {
    case ScenarioKind::kStaircase:
      s.duration = 28.0;
      break;
    case ScenarioKind::kReachInteraction:
      s.duration = 128.0 / kDefaultFrameRate;
      break;
    default:
      s.duration = 20.0;
  }
  return s;
}

void ScenarioSpec::validate() const {
  if (!(duration > 0) || !std::isfinite(duration)) throw ValidationError("scenario duration must be positive");
  if (!(frame_rate > 0)) throw ValidationError("scenario frame rate must be positive");
  if (std::lround(duration * frame_rate) < 2) throw ValidationError("scenario must span at least 2 frames");
  if (swing_frames < 2 || step_frames <= swing_frames) {
    throw ValidationError("scenario step timing needs 2 <= swing frames < step frames");
  }
  if (step_length < 0 || step_length > 0.35) throw ValidationError("scenario step length must lie in [0, 0.35] m");
  if (kind == ScenarioKind::kStaircase) {
    if (step_height == 0.0) throw ValidationError("staircase step height must be non-zero");
    if (std::abs(step_height) > 0.2) throw ValidationError("staircase step height must be at most 0.2 m");
    if (tread_depth < 0.2 || tread_depth > 0.35) throw ValidationError("staircase tread depth must lie in [0.2, 0.35] m");
    if (step_count < 1) throw ValidationError("staircase needs at least one step");
  }
  if (!(cloud_spacing > 0) || cloud_noise < 0) throw ValidationError("invalid point cloud spacing or noise");
}

double Scenario::surface_height(double /*x*/, double y) const {
  if (spec.kind != ScenarioKind::kStaircase) return 0.0;
  const double origin = 0.5 * spec.tread_depth;
  if (y < origin) return 0.0;
  const int level = std::min(spec.step_count, static_cast<int>(std::floor((y - origin) / spec.tread_depth)) + 1);
  return level * spec.step_height;
}

std::vector<std::array<Vec3, 2>> foot_positions(const SkeletonModel& skeleton, const MotionSequence& motion) {
  const auto& n = skeleton.named();
  std::vector<std::array<Vec3, 2>> feet;
  feet.reserve(motion.size());
  for (const auto& pose : motion.frames) {
    const auto g = forward_kinematics(skeleton, pose);
    feet.push_back({g.positions[n.l_foot], g.positions[n.r_foot]});
  }
  return feet;
}

std::vector<ContactPair> planted_mask(const SkeletonModel& skeleton, const MotionSequence& motion, double tolerance) {
  const auto feet = foot_positions(skeleton, motion);
  const int T = static_cast<int>(feet.size());
  std::vector<ContactPair> mask(T, {0.0, 0.0});
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < 2; ++s) {
      bool still = true;
      if (t > 0) still = still && (feet[t][s] - feet[t - 1][s]).norm() <= tolerance;
      if (t + 1 < T) still = still && (feet[t][s] - feet[t + 1][s]).norm() <= tolerance;
      mask[t][s] = still ? 1.0 : 0.0;
    }
  }
  return mask;
}

Scenario generate_scenario(const ScenarioSpec& spec, const SkeletonModel& skeleton) {
  spec.validate();
  const Body body(skeleton);
  std::mt19937_64 rng(spec.seed);
  const int frames = static_cast<int>(std::lround(spec.duration * spec.frame_rate));

  Scenario sc;
  sc.spec = spec;
  const double foot_x = std::abs(skeleton.offset(body.legs[kLeft].hip).x());

  switch (spec.kind) {
    case ScenarioKind::kFlatWalk:
    case ScenarioKind::kStaircase: {
      std::uniform_real_distribution<double> length(0.25, 0.28);
      std::uniform_real_distribution<double> arm(0.25, 0.4);
      const double drawn = length(rng);
      const double arm_amp = arm(rng);
      double step = spec.step_length > 0 ? spec.step_length : drawn;
      if (spec.kind == ScenarioKind::kStaircase) step = spec.tread_depth;
      auto floor_at = [&sc](double y) { return sc.surface_height(0.0, y); };
      const WalkPlan plan = plan_walk(spec, frames, step, floor_at, foot_x);
      sc.motion = walk_motion(body, spec, plan, arm_amp);
      sc.levels.push_back(0.0);
      if (spec.kind == ScenarioKind::kStaircase) {
        for (int i = 1; i <= spec.step_count; ++i) sc.levels.push_back(i * spec.step_height);
      }
      double y_max = 0.0;
      for (const auto& f : plan.feet) y_max = std::max({y_max, f[0].y(), f[1].y()});
      sc.cloud = grid_cloud(-0.6, 0.6, -0.6, y_max + 0.6, spec.cloud_spacing, spec.cloud_noise,
                            [&sc](double x, double y) { return sc.surface_height(x, y); }, rng);
      break;
    }
    case ScenarioKind::kArmSwingSync:
      sc.motion = sync_motion(body, spec, frames, rng, sc.events);
      sc.levels.push_back(0.0);
      sc.cloud = grid_cloud(-0.6, 0.6, -0.6, 0.8, spec.cloud_spacing, spec.cloud_noise,
                            [](double, double) { return 0.0; }, rng);
      break;
    case ScenarioKind::kReachInteraction:
      sc.motion = reach_motion(body, spec, frames, rng);
      sc.levels.push_back(0.0);
      sc.cloud = grid_cloud(-0.6, 0.6, -0.6, 0.8, spec.cloud_spacing, spec.cloud_noise,
                            [](double, double) { return 0.0; }, rng);
      break;
  }

  sc.motion.contacts = planted_mask(skeleton, sc.motion);
  sc.head = head_from_motion(sc.motion, skeleton);
  sc.imu = synthesize_imu(sc.motion, skeleton);

  const PointCloud cloud(sc.cloud);
  const auto feet = foot_positions(skeleton, sc.motion);
  FloorState state;
  sc.floor_levels = track_floor(sc.motion.contacts, feet, cloud, state);
  sc.head.heights.resize(sc.head.size());
  for (std::size_t t = 0; t < sc.head.size(); ++t) sc.head.heights[t] = sc.head.poses[t].translation.z() - sc.floor_levels[t];
  return sc;
}

void write_scenario(const std::string& dir, const Scenario& sc) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path d(dir);
  write_motion_jsonl((d / "motion.jsonl").string(), sc.motion);
  std::vector<TimedPose> head;
  for (std::size_t t = 0; t < sc.head.size(); ++t) head.push_back({static_cast<double>(t) / sc.head.frame_rate, sc.head.poses[t]});
  write_pose_jsonl((d / "head.jsonl").string(), head);
  write_watch_csv((d / "imu_left.csv").string(), extract_wrist(sc.imu, kLeft));
  write_watch_csv((d / "imu_right.csv").string(), extract_wrist(sc.imu, kRight));
  write_point_cloud((d / "cloud.xyz").string(), sc.cloud, CloudFormat::kAsciiXyz);

  nlohmann::json j;
  j["kind"] = scenario_name(sc.spec.kind);
  j["duration"] = sc.spec.duration;
  j["frame_rate"] = sc.spec.frame_rate;
  j["seed"] = sc.spec.seed;
  j["frames"] = sc.motion.size();
  j["levels"] = sc.levels;
  j["events"] = sc.events;
  if (sc.spec.kind == ScenarioKind::kStaircase) {
    j["step_height"] = sc.spec.step_height;
    j["tread_depth"] = sc.spec.tread_depth;
    j["step_count"] = sc.spec.step_count;
  }
  std::ofstream out(d / "scenario.json");
  if (!out) throw ValidationError("cannot write scenario.json in '" + dir + "'");
  out << j.dump(2) << '\n';
}

}  // namespace sparsecap
