#include <doctest.h>

#include <sstream>

#include "sparsecap/errors.hpp"
#include "sparsecap/sensors.hpp"
#include "support.hpp"

using namespace sparsecap;
using testgen::Gen;
using testgen::kPi;

namespace {

const SkeletonModel& body() {
  static const SkeletonModel sk = SkeletonModel::mean_body();
  return sk;
}

// Root follows a quadratic in time; joint rotations are fixed, so every joint does too.
MotionSequence quadratic_motion(const Pose& base, const Vec3& v0, const Vec3& acc, int frames) {
  MotionSequence m;
  for (int k = 0; k < frames; ++k) {
    const double t = k / 30.0;
    Pose p = base;
    p.root_translation += v0 * t + 0.5 * acc * t * t;
    m.frames.push_back(p);
  }
  return m;
}

}  // namespace

TEST_SUITE("sensors") {
  TEST_CASE("default second-difference span") { CHECK(kDefaultSecondDifferenceSpan == 4); }

  TEST_CASE("static pose has zero acceleration") {
    MotionSequence m;
    for (int t = 0; t < 20; ++t) m.frames.push_back(Pose::rest());
    const ImuStream imu = synthesize_imu(m, body());
    for (const auto& f : imu.frames)
      for (const auto& s : f) CHECK(s.acceleration.norm() == 0.0);
  }

  TEST_CASE("falling body: quadratic trajectory gives the exact acceleration") {
    const MotionSequence m = quadratic_motion(Pose::rest(), Vec3::Zero(), Vec3(0, 0, -2), 30);
    const ImuStream imu = synthesize_imu(m, body(), 4);
    for (const auto& f : imu.frames)
      for (const auto& s : f) CHECK((s.acceleration - Vec3(0, 0, -2)).norm() < 1e-9);
  }

  TEST_CASE("synthesis is exact on random quadratics and orientation equals FK") {
    Gen g(21);
    for (int i = 0; i < 20; ++i) {
      const Vec3 acc = g.vec3(3.0);
      const MotionSequence m = quadratic_motion(g.pose(), g.vec3(), acc, 25);
      for (int n : {1, 2, 4}) {
        const ImuStream imu = synthesize_imu(m, body(), n);
        for (std::size_t t = 0; t < m.size(); ++t) {
          const GlobalPose fk = forward_kinematics(body(), m.frames[t]);
          CHECK((imu.frames[t][kLeft].acceleration - acc).norm() < 1e-9);
          CHECK((imu.frames[t][kRight].acceleration - acc).norm() < 1e-9);
          CHECK(imu.frames[t][kLeft].orientation.angle_to(fk.rotations[body().named().l_wrist]) < 1e-9);
          CHECK(imu.frames[t][kRight].orientation.angle_to(fk.rotations[body().named().r_wrist]) < 1e-9);
        }
        ImuStream filtered = imu;
        filter_accelerations(filtered);
        for (std::size_t t = 0; t < m.size(); ++t) CHECK((filtered.frames[t][kLeft].acceleration - acc).norm() < 1e-9);
      }
    }
    MotionSequence tiny;
    for (int t = 0; t < 8; ++t) tiny.frames.push_back(Pose::rest());
    CHECK_THROWS_AS(synthesize_imu(tiny, body(), 4), ValidationError);
  }

  TEST_CASE("moving average filter") {
    std::vector<Vec3> constant(15, Vec3(1, -2, 3));
    for (const Vec3& v : average_filter(constant)) CHECK((v - Vec3(1, -2, 3)).norm() < 1e-15);

    Gen g(22);
    std::vector<Vec3> noise;
    for (int i = 0; i < 12; ++i) noise.push_back(g.vec3());
    const auto same = average_filter(noise, 1);
    for (int i = 0; i < 12; ++i) CHECK((same[i] - noise[i]).norm() == 0.0);

    std::vector<Vec3> impulse(21, Vec3::Zero());
    impulse[10] = Vec3(1, 1, 1);
    const auto r = average_filter(impulse, 7);
    for (int i = 0; i < 21; ++i) {
      const double expected = (i >= 7 && i <= 13) ? 1.0 / 7.0 : 0.0;
      CHECK(r[i].x() == expected);
    }
    CHECK_THROWS_AS(average_filter(impulse, 4), ValidationError);
  }

  TEST_CASE("head trajectory from motion") {
    MotionSequence m;
    m.frames.push_back(Pose::rest());
    Pose pitched = Pose::rest();
    pitched.rotations[body().named().head] = Rotation::about_x(-kPi / 2);
    m.frames.push_back(pitched);
    const HeadTrajectory h = head_from_motion(m, body());
    CHECK((h.up[0] - Vec3(0, 0, 1)).norm() < 1e-15);
    CHECK((h.up[1] - Vec3(0, 1, 0)).norm() < 1e-12);
    CHECK(h.poses[0].translation.z() == doctest::Approx(1.60).epsilon(1e-12));
  }

  TEST_CASE("watch csv parsing") {
    std::stringstream two("time_s,qw,qx,qy,qz,ax,ay,az\n0,1,0,0,0,0,0,0\n0.0333,1,0,0,0,1,2,3\n");
    const WatchRecording rec = parse_watch_csv(two, 0.0);
    REQUIRE(rec.size() == 2);
    CHECK(rec.orientation[0].angle_to(Rotation()) == 0.0);
    CHECK((rec.acceleration[1] - Vec3(1, 2, 3)).norm() == 0.0);

    std::stringstream shuffled("time_s,qw,qx,qy,qz,ax,ay,az\n0,1,0,0,0,0,0,0\n0.1,1,0,0,0,0,0,0\n0.05,1,0,0,0,0,0,0\n");
    try {
      parse_watch_csv(shuffled);
      FAIL("expected a timestamp error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }

    // 60 Hz source; ax carries the source timestamp so the chosen sample is visible.
    std::stringstream hz60;
    hz60 << "time_s,qw,qx,qy,qz,ax,ay,az\n";
    for (int k = 0; k < 120; ++k) {
      const double t = 0.5 + k / 60.0 + (k % 3 == 1 ? 0.002 : 0.0);
      hz60 << t << ",1,0,0,0," << t << ",0,0\n";
    }
    const WatchRecording r30 = parse_watch_csv(hz60, 30.0);
    CHECK(r30.size() == 60);
    for (std::size_t k = 0; k < r30.size(); ++k) {
      CHECK(r30.time[k] == doctest::Approx(0.5 + k / 30.0).epsilon(1e-12));
      CHECK(std::abs(r30.acceleration[k].x() - r30.time[k]) <= 0.5 / 60.0);
    }
    std::stringstream missing("time_s,qw,qx\n");
    CHECK_THROWS_AS(parse_watch_csv(missing), ValidationError);
  }

  TEST_CASE("wrist extraction round trip") {
    Gen g(23);
    const MotionSequence m = g.motion(30);
    const ImuStream imu = synthesize_imu(m, body());
    const ImuStream back = combine_wrists(extract_wrist(imu, kLeft), extract_wrist(imu, kRight), 30.0);
    REQUIRE(back.size() == imu.size());
    for (std::size_t t = 0; t < imu.size(); ++t) {
      CHECK((back.frames[t][kRight].acceleration - imu.frames[t][kRight].acceleration).norm() == 0.0);
      CHECK(back.frames[t][kLeft].orientation.angle_to(imu.frames[t][kLeft].orientation) < 1e-12);
    }
  }
}
