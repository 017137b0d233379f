#include <doctest.h>

#include <json.hpp>

#include "sparsecap/errors.hpp"
#include "sparsecap/metrics.hpp"
#include "support.hpp"

using namespace sparsecap;
using testgen::Gen;

namespace {

// Independent recomputation: own FK walk, own differences, meters -> cm.
using Track = std::vector<std::vector<Vec3>>;

Track fk_track(const SkeletonModel& sk, const MotionSequence& m) {
  Track out;
  for (const auto& pose : m.frames) {
    std::vector<Mat3> rot(sk.joint_count());
    std::vector<Vec3> pos(sk.joint_count());
    for (int j = 0; j < sk.joint_count(); ++j) {
      const int p = sk.parent(j);
      if (p < 0) {
        rot[j] = pose.rotations[j].matrix();
        pos[j] = pose.root_translation;
      } else {
        rot[j] = rot[p] * pose.rotations[j].matrix();
        pos[j] = pos[p] + rot[p] * sk.offset(j);
      }
    }
    out.push_back(pos);
  }
  return out;
}

Track velocity(const Track& p, double rate) {
  const std::size_t T = p.size();
  Track v(T, std::vector<Vec3>(p[0].size()));
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t a = t == 0 ? 0 : t - 1;
    const std::size_t b = t + 1 == T ? t : t + 1;
    for (std::size_t j = 0; j < p[0].size(); ++j) v[t][j] = (p[b][j] - p[a][j]) * rate / static_cast<double>(b - a);
  }
  return v;
}

double mean_dist(const Track& a, const Track& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t j = 0; j < a[t].size(); ++j, ++n) s += (a[t][j] - b[t][j]).norm();
  }
  return 100.0 * s / static_cast<double>(n);
}

double jerk(const Track& p, double rate) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 3; t < p.size(); ++t) {
    for (std::size_t j = 0; j < p[t].size(); ++j, ++n) {
      s += (p[t][j] - 3.0 * p[t - 1][j] + 3.0 * p[t - 2][j] - p[t - 3][j]).norm() * rate * rate * rate;
    }
  }
  return s / static_cast<double>(n);
}

MotionSequence shifted(MotionSequence m, const Vec3& d) {
  for (auto& f : m.frames) f.root_translation += d;
  return m;
}

MotionSequence transformed(MotionSequence m, const RigidTransform& t) {
  for (auto& f : m.frames) f = transform_pose(t, f);
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("identical motions") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(101);
    const MotionSequence m = g.motion(30);
    const MetricReport r = evaluate_motion(sk, m, m);
    CHECK(r.mpjpe == 0.0);
    CHECK(r.r_mpjpe == 0.0);
    CHECK(r.root_pe == 0.0);
    CHECK(r.mpjve == 0.0);
    CHECK(r.jitter_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.frames == 30);
    CHECK(r.joints == 22);
  }

  TEST_CASE("rigid shift") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(102);
    const MotionSequence gt = g.motion(20);
    const MotionSequence pred = shifted(gt, Vec3(0.05, 0, 0));
    CHECK(mpjpe(sk, pred, gt) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(root_pe(pred, gt) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(r_mpjpe(sk, pred, gt) < 1e-12);
    CHECK(mpjve(sk, pred, gt) < 1e-10);
  }

  TEST_CASE("brute force agreement") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(103);
    for (int trial = 0; trial < 100; ++trial) {
      const int T = g.integer(4, 30);
      const MotionSequence gt = g.motion(T, 1.0);
      const MotionSequence pred = g.motion(T, 1.0);
      const Track pg = fk_track(sk, gt), pp = fk_track(sk, pred);
      Track rg = pg, rp = pp;
      for (std::size_t t = 0; t < rg.size(); ++t) {
        for (auto& p : rg[t]) p -= pg[t][0];
        for (auto& p : rp[t]) p -= pp[t][0];
      }
      double root = 0.0;
      for (int t = 0; t < T; ++t) root += (pred.frames[t].root_translation - gt.frames[t].root_translation).norm();
      root *= 100.0 / T;

      const MetricReport r = evaluate_motion(sk, pred, gt);
      CHECK(std::abs(r.mpjpe - mean_dist(pp, pg)) < 1e-9);
      CHECK(std::abs(r.r_mpjpe - mean_dist(rp, rg)) < 1e-9);
      CHECK(std::abs(r.root_pe - root) < 1e-9);
      CHECK(std::abs(r.mpjve - mean_dist(velocity(pp, 30.0), velocity(pg, 30.0))) < 1e-9);
      CHECK(std::abs(r.jitter_ratio - jerk(pp, 30.0) / jerk(pg, 30.0)) < 1e-9 * r.jitter_ratio);
      CHECK(r.r_mpjpe <= r.mpjpe + r.root_pe + 1e-12);
      CHECK(r.per_joint_mpjpe.size() == 22);
      double mean = 0.0;
      for (double v : r.per_joint_mpjpe) mean += v / 22.0;
      CHECK(mean == doctest::Approx(r.mpjpe).epsilon(1e-12));
      CHECK(r.per_joint_r_mpjpe[0] < 1e-12);
    }
  }

  TEST_CASE("velocity error cases") {
    const auto sk = SkeletonModel::mean_body();
    MotionSequence still;
    still.frames.assign(12, Pose::rest());
    MotionSequence drift = still;
    for (int t = 0; t < 12; ++t) drift.frames[t].root_translation.y() += 0.1 * t / 30.0;
    // 0.1 m/s extra drift -> 10 cm/s on every joint.
    CHECK(mpjve(sk, drift, still) == doctest::Approx(10.0).epsilon(1e-12));

    MotionSequence moving = still;
    const Vec3 v(0.3, -0.4, 0.0);
    for (int t = 0; t < 12; ++t) moving.frames[t].root_translation += v * (t / 30.0);
    CHECK(mpjve(sk, still, moving) == doctest::Approx(50.0).epsilon(1e-12));

    MotionSequence single = still;
    single.frames.resize(1);
    CHECK_THROWS_AS(mpjve(sk, single, single), ValidationError);
  }

  TEST_CASE("jitter cases") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(104);
    const MotionSequence gt = g.motion(40);
    MotionSequence noisy = gt;
    for (int t = 0; t < 40; ++t) noisy.frames[t].root_translation.x() += (t % 2 ? 1e-3 : -1e-3);
    CHECK(jitter_ratio(sk, noisy, gt) > 1.0);

    MotionSequence linear;
    linear.frames.assign(10, Pose::rest());
    for (int t = 0; t < 10; ++t) linear.frames[t].root_translation.x() = 0.02 * t;
    CHECK_THROWS_AS(jitter_ratio(sk, noisy, linear), ValidationError);  // length mismatch
    CHECK_THROWS_AS(jitter_ratio(sk, linear, linear), NumericalError);

    MotionSequence three = gt;
    three.frames.resize(3);
    CHECK_THROWS_AS(jitter_ratio(sk, three, three), ValidationError);
    CHECK(evaluate_motion(sk, three, three).jitter_ratio == 0.0);
  }

  TEST_CASE("invariance to a shared rigid transform") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(105);
    for (int trial = 0; trial < 20; ++trial) {
      const MotionSequence gt = g.motion(16), pred = g.motion(16);
      const RigidTransform t = g.rigid(5.0);
      const MetricReport a = evaluate_motion(sk, pred, gt);
      const MetricReport b = evaluate_motion(sk, transformed(pred, t), transformed(gt, t));
      CHECK(b.mpjpe == doctest::Approx(a.mpjpe).epsilon(1e-9));
      CHECK(b.r_mpjpe == doctest::Approx(a.r_mpjpe).epsilon(1e-9));
      CHECK(b.root_pe == doctest::Approx(a.root_pe).epsilon(1e-9));
      CHECK(b.mpjve == doctest::Approx(a.mpjve).epsilon(1e-9));
      CHECK(b.jitter_ratio == doctest::Approx(a.jitter_ratio).epsilon(1e-9));
    }
  }

  TEST_CASE("input validation") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(106);
    const MotionSequence a = g.motion(10), b = g.motion(11);
    CHECK_THROWS_AS(mpjpe(sk, a, b), ValidationError);
    CHECK_THROWS_AS(root_pe(a, b), ValidationError);
    CHECK_THROWS_AS(mpjpe(sk, MotionSequence{}, MotionSequence{}), ValidationError);
    MotionSequence c = g.motion(10);
    c.frame_rate = 60.0;
    CHECK_THROWS_AS(evaluate_motion(sk, a, c), ValidationError);
  }

  TEST_CASE("report json") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(107);
    const MetricReport r = evaluate_motion(sk, g.motion(12), g.motion(12));
    const auto j = nlohmann::json::parse(metric_report_json(r, sk));
    CHECK(j.at("mpjpe_cm").get<double>() == doctest::Approx(r.mpjpe));
    CHECK(j.at("jitter_ratio").get<double>() == doctest::Approx(r.jitter_ratio));
    CHECK(j.at("per_joint").size() == 22);
    CHECK(j.at("per_joint").at("l_wrist").at("mpjpe_cm").get<double>() == doctest::Approx(r.per_joint_mpjpe[20]));
  }
}
