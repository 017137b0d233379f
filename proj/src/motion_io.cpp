#include "sparsecap/motion_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sparsecap/errors.hpp"

namespace sparsecap {
namespace {

using nlohmann::json;

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

Vec3 vec3_from(const json& j, std::size_t line, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(at_line(line) + what + " must be an array of 3 numbers");
  Vec3 v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!v.allFinite()) throw ValidationError(at_line(line) + what + " is not finite");
  return v;
}

Rotation quat_from(const json& j, std::size_t line) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(at_line(line) + "quaternion must have 4 entries");
  try {
    return Rotation::from_quaternion({j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()});
  } catch (const ValidationError& e) {
    throw ValidationError(at_line(line) + e.what());
  }
}

json quat_json(const Rotation& r) {
  const Quat4 q = r.quaternion();
  return json::array({q[0], q[1], q[2], q[3]});
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(at_line(line_no) + "malformed JSON: " + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const json::exception& e) {
      throw ValidationError(at_line(line_no) + e.what());
    }
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  return out;
}

}  // namespace

MotionSequence read_motion_jsonl(std::istream& in) {
  MotionSequence m;
  std::vector<double> times;
  bool any_contact = false;
  for_each_json_line(in, [&](const json& j, std::size_t line) {
    Pose pose;
    times.push_back(j.at("t").get<double>());
    pose.root_translation = vec3_from(j.at("p0"), line, "p0");
    const json& q = j.at("q");
    if (!q.is_array() || q.size() != kJointCount) {
      throw ValidationError(at_line(line) + "\"q\" must hold " + std::to_string(kJointCount) + " quaternions");
    }
    for (int k = 0; k < kJointCount; ++k) pose.rotations[k] = quat_from(q[k], line);
    m.frames.push_back(std::move(pose));
    if (j.contains("contact")) {
      if (m.contacts.size() + 1 != m.frames.size()) throw ValidationError(at_line(line) + "contact present on some frames only");
      const json& c = j.at("contact");
      if (!c.is_array() || c.size() != 2) throw ValidationError(at_line(line) + "contact must have 2 entries");
      m.contacts.push_back({c[0].get<double>(), c[1].get<double>()});
      any_contact = true;
    } else if (any_contact) {
      throw ValidationError(at_line(line) + "contact present on some frames only");
    }
  });
  if (m.frames.empty()) throw ValidationError("motion file has no frames");
  if (times.size() >= 2) {
    const double dt = times[1] - times[0];
    if (!(dt > 0)) throw ValidationError("motion timestamps must increase");
    m.frame_rate = std::round(1.0 / dt * 1e6) / 1e6;
  }
  return m;
}

MotionSequence read_motion_jsonl(const std::string& path) {
  auto in = open_in(path);
  return read_motion_jsonl(in);
}

void write_motion_jsonl(std::ostream& out, const MotionSequence& motion) {
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const Pose& p = motion.frames[t];
    json j;
    j["t"] = static_cast<double>(t) / motion.frame_rate;
    j["p0"] = vec_json(p.root_translation);
    json q = json::array();
    for (const auto& r : p.rotations) q.push_back(quat_json(r));
    j["q"] = std::move(q);
    if (!motion.contacts.empty()) j["contact"] = json::array({motion.contacts[t][0], motion.contacts[t][1]});
    out << j.dump() << '\n';
  }
}

void write_motion_jsonl(const std::string& path, const MotionSequence& motion) {
  auto out = open_out(path);
  write_motion_jsonl(out, motion);
}

SkeletonModel read_skeleton_json(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
    std::vector<std::string> names = j.at("names").get<std::vector<std::string>>();
    std::vector<int> parents = j.at("parents").get<std::vector<int>>();
    std::vector<Vec3> offsets;
    for (const auto& o : j.at("offsets")) offsets.push_back(vec3_from(o, 0, "offset"));
    const json& nj = j.at("joints");
    NamedJoints named{nj.at("head").get<int>(), nj.at("l_wrist").get<int>(), nj.at("r_wrist").get<int>(),
                      nj.at("l_foot").get<int>(), nj.at("r_foot").get<int>()};
    return SkeletonModel(std::move(names), std::move(parents), std::move(offsets), named);
  } catch (const json::exception& e) {
    throw ValidationError("skeleton '" + path + "': " + e.what());
  }
}

void write_skeleton_json(const std::string& path, const SkeletonModel& skeleton) {
  json j;
  j["names"] = skeleton.names();
  j["parents"] = skeleton.parents();
  json offsets = json::array();
  for (const auto& o : skeleton.offsets()) offsets.push_back(vec_json(o));
  j["offsets"] = std::move(offsets);
  const NamedJoints& n = skeleton.named();
  j["joints"] = {{"head", n.head}, {"l_wrist", n.l_wrist}, {"r_wrist", n.r_wrist}, {"l_foot", n.l_foot}, {"r_foot", n.r_foot}};
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::string default_skeleton_path() { return std::string(SPARSECAP_DATA_DIR) + "/mean_skeleton.json"; }

std::vector<TimedPose> read_pose_jsonl(std::istream& in) {
  std::vector<TimedPose> out;
  for_each_json_line(in, [&](const json& j, std::size_t line) {
    TimedPose p;
    p.t = j.at("t").get<double>();
    p.pose.translation = vec3_from(j.at("p"), line, "p");
    p.pose.rotation = quat_from(j.at("q"), line);
    out.push_back(p);
  });
  return out;
}

std::vector<TimedPose> read_pose_jsonl(const std::string& path) {
  auto in = open_in(path);
  return read_pose_jsonl(in);
}

void write_pose_jsonl(std::ostream& out, const std::vector<TimedPose>& poses) {
  for (const auto& p : poses) {
    json j;
    j["t"] = p.t;
    j["p"] = vec_json(p.pose.translation);
    j["q"] = quat_json(p.pose.rotation);
    out << j.dump() << '\n';
  }
}

void write_pose_jsonl(const std::string& path, const std::vector<TimedPose>& poses) {
  auto out = open_out(path);
  write_pose_jsonl(out, poses);
}

}  // namespace sparsecap
