#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "sparsecap/errors.hpp"
#include "sparsecap/motion_io.hpp"
#include "support.hpp"

using namespace sparsecap;
using testgen::Gen;
using testgen::kPi;

namespace {

const SkeletonModel& body() {
  static const SkeletonModel sk = SkeletonModel::mean_body();
  return sk;
}

// Independent chain walk: sum of rotated offsets from the root.
Vec3 chain_position(const SkeletonModel& sk, const Pose& pose, int joint) {
  std::vector<int> chain;
  for (int j = joint; j >= 0; j = sk.parent(j)) chain.insert(chain.begin(), j);
  Vec3 p = pose.root_translation;
  Mat3 r = pose.rotations[0].matrix();
  for (std::size_t i = 1; i < chain.size(); ++i) {
    p += r * sk.offset(chain[i]);
    r = r * pose.rotations[chain[i]].matrix();
  }
  return p;
}

MotionSequence standing(int frames, const Vec3& root = Vec3(0, 0, SkeletonModel::kRestRootHeight)) {
  MotionSequence m;
  for (int t = 0; t < frames; ++t) m.frames.push_back(Pose::rest(root));
  return m;
}

}  // namespace

TEST_SUITE("skeleton") {
  TEST_CASE("rest pose joints sit at summed offsets; feet on the ground; head at 1.60 m") {
    const Pose rest = Pose::rest(Vec3::Zero());
    const GlobalPose g = forward_kinematics(body(), rest);
    for (int j = 0; j < kJointCount; ++j) {
      Vec3 sum = Vec3::Zero();
      for (int k = j; k > 0; k = body().parent(k)) sum += body().offset(k);
      CHECK((g.positions[j] - sum).norm() < 1e-15);
    }
    const GlobalPose s = forward_kinematics(body(), Pose::rest());
    CHECK(s.positions[body().named().l_foot].z() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.positions[body().named().head].z() == doctest::Approx(1.60).epsilon(1e-12));
  }

  TEST_CASE("two-joint chain analytic case") {
    const SkeletonModel chain({"a", "b"}, {-1, 0}, {Vec3::Zero(), Vec3(0, 1, 0)}, NamedJoints{1, 1, 1, 1, 1});
    Pose p;
    p.rotations.assign(2, Rotation());
    p.rotations[0] = Rotation::about_z(kPi / 2);
    const GlobalPose g = forward_kinematics(chain, p);
    CHECK((g.positions[1] - Vec3(-1, 0, 0)).norm() < 1e-15);
    p.rotations.assign(3, Rotation());
    CHECK_THROWS_AS(forward_kinematics(chain, p), ValidationError);
  }

  TEST_CASE("skeleton construction validates topology") {
    CHECK_THROWS_AS(SkeletonModel({"a", "b"}, {-1, 1}, {Vec3::Zero(), Vec3::Zero()}, NamedJoints{0, 0, 0, 0, 0}),
                    ValidationError);
    CHECK_THROWS_AS(SkeletonModel({"a"}, {-1}, {Vec3::Zero()}, NamedJoints{}), ValidationError);
    CHECK(body().index_of("r_wrist") == 21);
    CHECK_THROWS_AS(body().index_of("tail"), ValidationError);
    CHECK(body().in_subtree(body().index_of("r_wrist"), body().index_of("r_collar")));
    CHECK_FALSE(body().in_subtree(body().index_of("l_wrist"), body().index_of("r_collar")));
  }

  TEST_CASE("FK matches an independent chain walk and is rigidly equivariant") {
    Gen g(11);
    for (int i = 0; i < 100; ++i) {
      const Pose p = g.pose();
      const GlobalPose fk = forward_kinematics(body(), p);
      for (int j = 0; j < kJointCount; ++j) CHECK((fk.positions[j] - chain_position(body(), p, j)).norm() < 1e-12);

      const RigidTransform t = g.rigid();
      const GlobalPose moved = forward_kinematics(body(), transform_pose(t, p));
      for (int j = 0; j < kJointCount; ++j) {
        CHECK((moved.positions[j] - t.apply(fk.positions[j])).norm() < 1e-9);
        CHECK(moved.rotations[j].angle_to(t.rotation * fk.rotations[j]) < 1e-9);
      }
      Pose shifted = p;
      shifted.root_translation += Vec3(0.3, -0.2, 0.1);
      const GlobalPose sg = forward_kinematics(body(), shifted);
      for (int j = 0; j < kJointCount; ++j) CHECK((sg.positions[j] - fk.positions[j] - Vec3(0.3, -0.2, 0.1)).norm() < 1e-12);
    }
  }

  TEST_CASE("joint velocities") {
    const JointTrack still = joint_velocities(body(), standing(10));
    for (const auto& f : still)
      for (const Vec3& v : f) CHECK(v.norm() == 0.0);

    MotionSequence moving;
    Gen g(12);
    const Pose base = g.pose();
    for (int t = 0; t < 12; ++t) {
      Pose p = base;
      p.root_translation += Vec3(1, 0, 0) * (t / 30.0);
      moving.frames.push_back(p);
    }
    for (const auto& f : joint_velocities(body(), moving))
      for (const Vec3& v : f) CHECK((v - Vec3(1, 0, 0)).norm() < 1e-9);

    // Linear joint trajectory with slope v: central differences are exact.
    JointTrack line;
    const Vec3 v(0.4, -1.2, 2.0);
    for (int t = 0; t < 8; ++t) line.push_back({Vec3(1, 2, 3) + v * (t / 30.0)});
    for (const auto& f : finite_difference(line, 30.0)) CHECK((f[0] - v).norm() < 1e-9);
    CHECK_THROWS_AS(joint_velocities(body(), standing(1)), ValidationError);
  }

  TEST_CASE("contact labels") {
    const auto planted = label_contacts(body(), standing(20), 0.0);
    for (const auto& c : planted) CHECK((c[0] == 1.0 && c[1] == 1.0));
    const auto raised = label_contacts(body(), standing(20, Vec3(0, 0, SkeletonModel::kRestRootHeight + 0.5)), 0.0);
    for (const auto& c : raised) CHECK((c[0] == 0.0 && c[1] == 0.0));

    // Stance schedule: the left foot slides during frames [10, 20), otherwise still.
    MotionSequence m = standing(30);
    double x = 0.0;
    std::vector<int> stance(30, 1);
    for (int t = 0; t < 30; ++t) {
      if (t >= 10 && t < 20) x += 0.05;
      m.frames[t].root_translation.x() = x;
    }
    for (int t = 0; t < 30; ++t) {
      // x changes between frames 9 and 19; the central difference at 9 already sees it.
      stance[t] = (t >= 9 && t <= 19) ? 0 : 1;
    }
    const auto labels = label_contacts(body(), m, 0.0);
    for (int t = 0; t < 30; ++t) CHECK(labels[t][0] == stance[t]);
  }

  TEST_CASE("contact labels are invariant to horizontal translation") {
    Gen g(13);
    for (int i = 0; i < 10; ++i) {
      MotionSequence m = g.motion(40, 0.5);
      for (auto& f : m.frames) f.root_translation.z() = 0.9;
      const auto a = label_contacts(body(), m, 0.0, {0.2, 0.8});
      const Vec3 d(g.uniform(-5, 5), g.uniform(-5, 5), 0);
      for (auto& f : m.frames) f.root_translation += d;
      const auto b = label_contacts(body(), m, 0.0, {0.2, 0.8});
      for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t] == b[t]);
    }
  }

  TEST_CASE("window normalization") {
    Gen g(14);
    const MotionSequence m = g.motion(40);
    std::vector<RigidTransform> head(40);
    CHECK_THROWS_AS(normalize_window(m.frames, std::span<const RigidTransform>(head.data(), 39)), ValidationError);
    const NormalizedWindow same = normalize_window(m.frames, head);
    for (int t = 0; t < 40; ++t) CHECK((same.frames[t].root_translation - m.frames[t].root_translation).norm() == 0.0);

    for (int t = 0; t < 40; ++t) head[t] = g.rigid();
    const NormalizedWindow n = normalize_window(m.frames, head);
    CHECK(n.head[0].translation.norm() < 1e-12);
    CHECK(n.head[0].rotation.angle_to(Rotation()) < 1e-12);
    const auto back = denormalize_frames(n.frames, n.world_to_head);
    for (int t = 0; t < 40; ++t) {
      CHECK((back[t].root_translation - m.frames[t].root_translation).norm() < 1e-9);
      for (int j = 0; j < kJointCount; ++j) CHECK(back[t].rotations[j].angle_to(m.frames[t].rotations[j]) < 1e-9);
    }

    head[0] = {Rotation::about_z(kPi / 2), Vec3(2, 3, 0)};
    const NormalizedWindow yaw = normalize_window(m.frames, head);
    CHECK(yaw.head[0].translation.norm() < 1e-15);
  }

  TEST_CASE("motion and skeleton files round trip") {
    Gen g(15);
    MotionSequence m = g.motion(5);
    for (int t = 0; t < 5; ++t) m.contacts.push_back({t % 2 * 1.0, 0.25});
    std::stringstream ss;
    write_motion_jsonl(ss, m);
    const MotionSequence r = read_motion_jsonl(ss);
    REQUIRE(r.size() == m.size());
    REQUIRE(r.contacts.size() == 5);
    for (int t = 0; t < 5; ++t) {
      CHECK((r.frames[t].root_translation - m.frames[t].root_translation).norm() < 1e-12);
      for (int j = 0; j < kJointCount; ++j) CHECK(r.frames[t].rotations[j].angle_to(m.frames[t].rotations[j]) < 1e-9);
      CHECK(r.contacts[t] == m.contacts[t]);
    }

    const std::string path = (std::filesystem::temp_directory_path() / "sparsecap_skeleton_test.json").string();
    write_skeleton_json(path, body());
    const SkeletonModel back = read_skeleton_json(path);
    CHECK(back.names() == body().names());
    CHECK(back.parents() == body().parents());
    for (int j = 0; j < kJointCount; ++j) CHECK((back.offset(j) - body().offset(j)).norm() == 0.0);
    const SkeletonModel shipped = read_skeleton_json(default_skeleton_path());
    CHECK(shipped.names() == body().names());

    std::stringstream bad("{\"t\": 0}\n");
    CHECK_THROWS_AS(read_motion_jsonl(bad), ValidationError);
  }
}
