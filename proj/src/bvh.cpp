#include "sparsecap/bvh.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sparsecap/errors.hpp"

namespace sparsecap {
namespace {

constexpr double kCm = 100.0;
constexpr double kDeg = 180.0 / 3.14159265358979323846;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

void write_joint(std::ostream& out, const SkeletonModel& sk, int j, int depth) {
  const std::string pad(2 * depth, ' ');
  out << pad << (j == 0 ? "ROOT " : "JOINT ") << sk.name(j) << "\n" << pad << "{\n";
  const Vec3 o = j == 0 ? Vec3::Zero() : Vec3(sk.offset(j) * kCm);
  out << pad << "  OFFSET " << fmt(o.x()) << " " << fmt(o.y()) << " " << fmt(o.z()) << "\n";
  out << pad << "  CHANNELS " << (j == 0 ? "6 Xposition Yposition Zposition " : "3 ") << "Zrotation Xrotation Yrotation\n";
  bool leaf = true;
  for (int c = j + 1; c < sk.joint_count(); ++c) {
    if (sk.parent(c) == j) {
      leaf = false;
      write_joint(out, sk, c, depth + 1);
    }
  }
  if (leaf) out << pad << "  End Site\n" << pad << "  {\n" << pad << "    OFFSET 0 0 0\n" << pad << "  }\n";
  out << pad << "}\n";
}

/// Depth-first order in which the hierarchy (and so the channel data) lists joints.
std::vector<int> traversal_order(const SkeletonModel& sk) {
  std::vector<int> order;
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    order.push_back(j);
    for (int c = sk.joint_count() - 1; c > j; --c) {
      if (sk.parent(c) == j) stack.push_back(c);
    }
  }
  return order;
}

Vec3 zxy_degrees(const Rotation& r) {
  const Vec3 a = r.matrix().eulerAngles(2, 0, 1);
  return a * kDeg;
}

Rotation axis_rotation(char axis, double degrees) {
  const double a = degrees / kDeg;
  switch (axis) {
    case 'X': return Rotation::about_x(a);
    case 'Y': return Rotation::about_y(a);
    default: return Rotation::about_z(a);
  }
}

struct Channel {
  int joint;
  bool position;
  char axis;
};

class Tokens {
 public:
  explicit Tokens(std::istream& in) : in_(in) {}
  std::string next(const char* what) {
    std::string s;
    if (!(in_ >> s)) throw ValidationError(std::string("BVH ended early while reading ") + what);
    return s;
  }
  double number(const char* what) {
    const std::string s = next(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("BVH expected a number for " + std::string(what) + ", got '" + s + "'");
    }
  }
  void expect(const std::string& word) {
    const std::string s = next(word.c_str());
    if (s != word) throw ValidationError("BVH expected '" + word + "', got '" + s + "'");
  }

 private:
  std::istream& in_;
};

}  // namespace

void export_bvh(std::ostream& out, const MotionSequence& motion, const SkeletonModel& skeleton) {
  if (motion.size() == 0) throw ValidationError("cannot export an empty motion");
  out << "HIERARCHY\n";
  write_joint(out, skeleton, 0, 0);
  const std::vector<int> order = traversal_order(skeleton);
  out << "MOTION\nFrames: " << motion.size() << "\nFrame Time: " << fmt(motion.dt()) << "\n";
  for (const Pose& p : motion.frames) {
    const Vec3 t = p.root_translation * kCm;
    out << fmt(t.x()) << " " << fmt(t.y()) << " " << fmt(t.z());
    for (int j : order) {
      const Vec3 e = zxy_degrees(p.rotations[j]);
      out << " " << fmt(e.x()) << " " << fmt(e.y()) << " " << fmt(e.z());
    }
    out << "\n";
  }
  if (!out) throw ValidationError("failed to write BVH");
}

void export_bvh(const std::string& path, const MotionSequence& motion, const SkeletonModel& skeleton) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  export_bvh(f, motion, skeleton);
}

MotionSequence import_bvh(std::istream& in, const SkeletonModel& skeleton) {
  Tokens tok(in);
  tok.expect("HIERARCHY");
  std::vector<Channel> channels;
  std::vector<int> stack;
  int seen = 0;
  std::vector<bool> listed(skeleton.joint_count(), false);
  std::string word = tok.next("ROOT");
  if (word != "ROOT") throw ValidationError("BVH hierarchy must start with ROOT");
  while (true) {
    if (word == "ROOT" || word == "JOINT") {
      const std::string name = tok.next("joint name");
      const int j = skeleton.index_of(name);
      if (listed[j]) throw ValidationError("BVH joint '" + name + "' is listed twice");
      listed[j] = true;
      const int parent = stack.empty() ? -1 : stack.back();
      if (parent != skeleton.parent(j)) throw ValidationError("BVH joint '" + name + "' has the wrong parent");
      ++seen;
      tok.expect("{");
      tok.expect("OFFSET");
      Vec3 o;
      for (int k = 0; k < 3; ++k) o[k] = tok.number("OFFSET") / kCm;
      if (j > 0 && (o - skeleton.offset(j)).norm() > 1e-6) {
        throw ValidationError("BVH offset of '" + name + "' does not match the skeleton");
      }
      tok.expect("CHANNELS");
      const int n = static_cast<int>(tok.number("CHANNELS"));
      for (int k = 0; k < n; ++k) {
        const std::string c = tok.next("channel");
        if (c.size() != 9 || (c.substr(1) != "position" && c.substr(1) != "rotation") || c[0] < 'X' || c[0] > 'Z') {
          throw ValidationError("unknown BVH channel '" + c + "'");
        }
        channels.push_back({j, c.substr(1) == "position", c[0]});
      }
      stack.push_back(j);
    } else if (word == "End") {
      tok.expect("Site");
      tok.expect("{");
      tok.expect("OFFSET");
      for (int k = 0; k < 3; ++k) tok.number("End Site OFFSET");
      tok.expect("}");
    } else if (word == "}") {
      if (stack.empty()) throw ValidationError("unbalanced braces in BVH hierarchy");
      stack.pop_back();
      if (stack.empty()) break;
    } else {
      throw ValidationError("unexpected BVH token '" + word + "'");
    }
    word = tok.next("hierarchy");
  }
  if (seen != skeleton.joint_count()) throw ValidationError("BVH hierarchy has " + std::to_string(seen) + " joints");

  tok.expect("MOTION");
  tok.expect("Frames:");
  const double frames = tok.number("Frames");
  if (frames < 1 || frames != std::floor(frames)) throw ValidationError("BVH frame count must be a positive integer");
  tok.expect("Frame");
  tok.expect("Time:");
  const double dt = tok.number("Frame Time");
  if (!(dt > 0)) throw ValidationError("BVH frame time must be positive");

  MotionSequence m;
  m.frame_rate = 1.0 / dt;
  for (int t = 0; t < static_cast<int>(frames); ++t) {
    Pose p;
    for (const Channel& c : channels) {
      const double v = tok.number("frame data");
      if (c.position) {
        if (c.joint == 0) p.root_translation[c.axis - 'X'] = v / kCm;
      } else {
        p.rotations[c.joint] = p.rotations[c.joint] * axis_rotation(c.axis, v);
      }
    }
    m.frames.push_back(std::move(p));
  }
  return m;
}

MotionSequence import_bvh(const std::string& path, const SkeletonModel& skeleton) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path);
  return import_bvh(f, skeleton);
}

}  // namespace sparsecap
