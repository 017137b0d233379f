#include <doctest.h>

#include <filesystem>

#include "sparsecap/errors.hpp"
#include "sparsecap/estimator.hpp"
#include "sparsecap/nn/gradcheck.hpp"
#include "sparsecap/scenario.hpp"
#include "support.hpp"

using namespace sparsecap;
using nn::Matrix;
using nn::Var;
using testgen::Gen;

namespace {

EstimatorConfig tiny_config(int window = 8) {
  EstimatorConfig c;
  c.window = window;
  c.end_width = 8;
  c.body_input_width = 8;
  c.body_mid_width = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_multiplier = 2;
  c.mlp_hidden = 16;
  return c;
}

Scenario flat_walk(double seconds = 4.0, std::uint64_t seed = 3) {
  ScenarioSpec spec = ScenarioSpec::defaults(ScenarioKind::kFlatWalk);
  spec.duration = seconds;
  spec.seed = seed;
  return generate_scenario(spec, SkeletonModel::mean_body());
}

Matrix random_features(Gen& g, int rows) {
  Matrix m(rows, kInputWidth);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g.uniform(-1, 1);
  return m;
}

WindowTargets targets_for(const SkeletonModel& sk, const std::vector<Pose>& frames, const std::vector<ContactPair>& contacts) {
  WindowTargets t;
  t.motion = encode_motion_rows(frames);
  t.mid = end_effector_rows(sk, frames);
  t.contacts.resize(static_cast<Eigen::Index>(contacts.size()), 2);
  for (std::size_t i = 0; i < contacts.size(); ++i) t.contacts.row(static_cast<Eigen::Index>(i)) << contacts[i][0], contacts[i][1];
  return t;
}

MotionEstimator::Output as_output(const WindowTargets& t) {
  return {Var::constant(t.mid), Var::constant(t.contacts), Var::constant(t.motion)};
}

void translate(HeadTrajectory& head, const Vec3& d) {
  for (auto& p : head.poses) p.translation += d;
}

std::vector<double> zeros(int n) { return std::vector<double>(static_cast<std::size_t>(n), 0.0); }

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("window assembly shape and normalization") {
    const Scenario sc = flat_walk();
    const WindowInput in = assemble_window(sc.head, sc.imu, 17, kWindowLength, zeros(kWindowLength));
    REQUIRE(in.features.rows() == 40);
    REQUIRE(in.features.cols() == 31);
    Matrix first(1, 9);
    first << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    CHECK((in.features.block(0, 0, 1, 9) - first).cwiseAbs().maxCoeff() < 1e-12);
    const RigidTransform h0 = sc.head.poses[17];
    CHECK(((in.world_to_head * h0).translation).norm() < 1e-12);

    // Height and up-vector stay absolute.
    for (int i = 0; i < kWindowLength; ++i) {
      CHECK(in.features(i, input_cols::kHeight) == doctest::Approx(sc.head.poses[17 + i].translation.z()));
      for (int c = 0; c < 3; ++c) CHECK(in.features(i, input_cols::kUp + c) == doctest::Approx(sc.head.up[17 + i](c)));
    }
    std::vector<double> floor(kWindowLength, -0.36);
    const WindowInput lowered = assemble_window(sc.head, sc.imu, 17, kWindowLength, floor);
    CHECK(lowered.features(5, input_cols::kHeight) == doctest::Approx(in.features(5, input_cols::kHeight) + 0.36));
  }

  TEST_CASE("window assembly is invariant to where the motion happens") {
    Gen g(81);
    const Scenario sc = flat_walk();
    for (int trial = 0; trial < 10; ++trial) {
      HeadTrajectory moved = sc.head;
      translate(moved, Vec3(g.uniform(-20, 20), g.uniform(-20, 20), 0.0));
      const int start = g.integer(0, static_cast<int>(sc.head.size()) - kWindowLength);
      const Matrix a = assemble_window(sc.head, sc.imu, start, kWindowLength, zeros(kWindowLength)).features;
      const Matrix b = assemble_window(moved, sc.imu, start, kWindowLength, zeros(kWindowLength)).features;
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("window assembly rejects misaligned inputs") {
    const Scenario sc = flat_walk();
    ImuStream short_imu = sc.imu;
    short_imu.frames.resize(30);
    CHECK_THROWS_AS(assemble_window(sc.head, short_imu, 0, kWindowLength, zeros(kWindowLength)), ValidationError);
    CHECK_THROWS_AS(assemble_window(sc.head, sc.imu, 0, kWindowLength, zeros(39)), ValidationError);
    CHECK_THROWS_AS(assemble_window(sc.head, sc.imu, static_cast<int>(sc.head.size()) - 10, kWindowLength,
                                    zeros(kWindowLength)),
                    ValidationError);
    CHECK_THROWS_AS(assemble_window(sc.head, sc.imu, -1, kWindowLength, zeros(kWindowLength)), ValidationError);
  }

  TEST_CASE("motion rows round trip") {
    Gen g(82);
    std::vector<Pose> frames;
    for (int i = 0; i < 5; ++i) frames.push_back(g.pose(2.0));
    const Matrix rows = encode_motion_rows(frames);
    REQUIRE(rows.cols() == 135);
    const auto back = decode_motion_rows(rows);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      CHECK((back[i].root_translation - frames[i].root_translation).norm() < 1e-15);
      for (int j = 0; j < kJointCount; ++j) CHECK(back[i].rotations[j].angle_to(frames[i].rotations[j]) < 1e-9);
    }
    Matrix bad = rows;
    bad(2, 40) = std::nan("");
    CHECK_THROWS_AS(decode_motion_rows(bad), NumericalError);
    CHECK_THROWS_AS(decode_motion_rows(Matrix::Zero(1, 134)), ValidationError);
  }

  TEST_CASE("network output shapes") {
    MotionEstimator model(EstimatorConfig::toy(), 1);
    Gen g(83);
    const Var x = Var::constant(random_features(g, 2 * kWindowLength));
    const Var mid = model.f_end(x);
    CHECK(mid.rows() == 80);
    CHECK(mid.cols() == 12);
    const auto out = model.f_body(x, mid);
    CHECK(out.motion.cols() == 135);
    CHECK(out.contacts.cols() == 2);
    CHECK(out.contacts.value().minCoeff() >= 0.0);
    CHECK(out.contacts.value().maxCoeff() <= 1.0);

    model.zero_output_layers();
    const auto zeroed = model.forward(x);
    CHECK(zeroed.mid.value().cwiseAbs().maxCoeff() == 0.0);
    CHECK((zeroed.contacts.value().array() - 0.5).abs().maxCoeff() == 0.0);
    CHECK(zeroed.motion.value().cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(model.f_end(Var::constant(Matrix::Zero(40, 30))), ValidationError);
  }

  TEST_CASE("windows are processed independently") {
    MotionEstimator model(tiny_config(), 2);
    Gen g(84);
    const Matrix x = random_features(g, 16);
    const Matrix both = model.forward(Var::constant(x)).motion.value();
    const Matrix second = model.forward(Var::constant(Matrix(x.bottomRows(8)))).motion.value();
    CHECK((both.bottomRows(8) - second).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("parameter table matches the model") {
    for (const auto& cfg : {EstimatorConfig::toy(), tiny_config()}) {
      const MotionEstimator model(cfg, 3);
      const auto params = model.parameters();
      const auto shapes = estimator_parameter_shapes(cfg);
      REQUIRE(shapes.size() == params.size());
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        CHECK(shapes[i].name == params.items()[i].name);
        CHECK(shapes[i].rows == params.items()[i].var.rows());
        CHECK(shapes[i].cols == params.items()[i].var.cols());
      }
    }
    const auto full = estimator_parameter_shapes(EstimatorConfig::full());
    CHECK(full.front().rows == kInputWidth);
    CHECK(full.front().cols == 1280);
    CHECK(EstimatorConfig::full().heads == 10);
    CHECK(EstimatorConfig::full().layers == 4);
    CHECK(EstimatorConfig::full().body_width() == 1280);
    EstimatorConfig bad = EstimatorConfig::toy();
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("config from key-value text") {
    const KeyValueConfig cfg = KeyValueConfig::parse("end_width = 16\nheads = 2\nlayers = 1\n");
    const EstimatorConfig c = EstimatorConfig::from(cfg);
    CHECK(c.end_width == 16);
    CHECK(c.heads == 2);
    CHECK(c.layers == 1);
    CHECK(c.body_input_width == EstimatorConfig::toy().body_input_width);
  }

  TEST_CASE("mid loss gradient through the first embedding") {
    const MotionEstimator model(tiny_config(), 4);
    Gen g(85);
    const Var x = Var::constant(random_features(g, 8));
    Matrix target(8, kMidWidth);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = g.uniform(-2, 2);
    nn::ParameterSet first;
    first.add("end.embed.weight", model.parameters().at("end.embed.weight"));
    auto loss = [&] { return nn::l1_loss(model.f_end(x), Var::constant(target), 8.0); };
    const auto r = nn::gradient_check_parameters(loss, first, 1e-5, 64);
    CHECK_MESSAGE(r.max_relative_error < 1e-3, r.worst);
  }

  TEST_CASE("full training loss gradient") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk();
    const int N = 8;
    const MotionEstimator model(tiny_config(N), 5);
    const WindowInput in = assemble_window(sc.head, sc.imu, 30, N, zeros(N));
    std::vector<Pose> frames;
    std::vector<ContactPair> contacts;
    for (int i = 0; i < N; ++i) {
      frames.push_back(transform_pose(in.world_to_head, sc.motion.frames[30 + i]));
      contacts.push_back(sc.motion.contacts[30 + i]);
    }
    const WindowTargets t = targets_for(sk, frames, contacts);
    const Var x = Var::constant(in.features);
    auto loss = [&] { return training_loss(model.forward(x), t, sk, LossWeights{}, N, 30.0); };

    const nn::ParameterSet all = model.parameters();
    nn::ParameterSet probed;
    all.zero_grad();
    nn::backward(loss());
    for (const auto& p : all.items()) {
      if (p.name.ends_with(".k.bias")) {
        CHECK(p.var.grad().cwiseAbs().maxCoeff() < 1e-10);
      } else {
        probed.add(p.name, p.var);
      }
    }
    const auto r = nn::gradient_check_parameters(loss, probed, 1e-6, 12);
    CHECK_MESSAGE(r.max_relative_error < 1e-3, r.worst);
  }

  TEST_CASE("loss of the ground truth is zero") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk();
    std::vector<Pose> frames(sc.motion.frames.begin(), sc.motion.frames.begin() + 80);
    std::vector<ContactPair> contacts(sc.motion.contacts.begin(), sc.motion.contacts.begin() + 80);
    const WindowTargets t = targets_for(sk, frames, contacts);
    LossBreakdown b;
    const double total = training_loss(as_output(t), t, sk, LossWeights{}, 40, 30.0, &b).item();
    CHECK(total < 1e-9);
    CHECK(b.contact < 1e-9);
    CHECK(b.pos == 0.0);
    CHECK(b.cons < 1e-12);

    WindowTargets missing = t;
    missing.contacts.resize(0, 2);
    CHECK_THROWS_AS(training_loss(as_output(t), missing, sk, LossWeights{}, 40, 30.0), ValidationError);
    CHECK_THROWS_AS(training_loss(as_output(t), t, sk, LossWeights{}, 30, 30.0), ValidationError);
  }

  TEST_CASE("perturbing one joint moves only its subtree") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(86);
    std::vector<Pose> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(g.pose(0.5));
    std::vector<ContactPair> contacts(4, {1.0, 0.0});
    const WindowTargets t = targets_for(sk, frames, contacts);
    for (int joint : {4, 18, 9}) {
      std::vector<Pose> bent = frames;
      for (auto& p : bent) p.rotations[joint] = p.rotations[joint] * Rotation::from_angle_axis(Vec3(0.2, 0.3, 0.1));
      WindowTargets out = t;
      out.motion = encode_motion_rows(bent);
      LossBreakdown b;
      training_loss(as_output(out), t, sk, LossWeights{}, 4, 30.0, &b);
      CHECK(b.rot > 0.0);
      CHECK(b.pos > 0.0);
      CHECK(b.root == 0.0);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto a = forward_kinematics(sk, frames[f]).positions;
        const auto c = forward_kinematics(sk, bent[f]).positions;
        for (int j = 0; j < sk.joint_count(); ++j) {
          const bool below = sk.in_subtree(j, joint) && j != joint;
          if (!below) CHECK((a[j] - c[j]).norm() < 1e-12);
        }
      }
    }
  }

  TEST_CASE("consistency loss measures the mid offset") {
    const auto sk = SkeletonModel::mean_body();
    Gen g(87);
    std::vector<Pose> frames;
    for (int i = 0; i < 6; ++i) frames.push_back(g.pose(0.5));
    const WindowTargets t = targets_for(sk, frames, std::vector<ContactPair>(6, {0.0, 1.0}));
    for (double d : {0.01, 0.25, 1.5}) {
      MotionEstimator::Output out = as_output(t);
      Matrix mid = t.mid;
      mid.col(3) = mid.col(3).array() + d;  // right wrist x
      out.mid = Var::constant(mid);
      LossBreakdown b;
      training_loss(out, t, sk, LossWeights{}, 6, 30.0, &b);
      CHECK(b.cons == doctest::Approx(d).epsilon(1e-12));
      CHECK(b.mid == doctest::Approx(d).epsilon(1e-12));
      CHECK(b.pos < 1e-12);
    }
  }

  TEST_CASE("window dataset") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk(4.0);
    TrainingSequence seq{sc.motion, sc.head, sc.imu, sc.floor_levels};
    const WindowDataset d = build_window_dataset({seq}, sk, 40, 20);
    CHECK(d.count() == (120 - 40) / 20 + 1);
    CHECK(d.inputs.cols() == 31);
    CHECK(d.targets.motion.rows() == d.inputs.rows());
    // First frame of every window is the head origin.
    for (int w = 0; w < d.count(); ++w) CHECK(d.inputs.block(40 * w, 0, 1, 3).norm() < 1e-12);

    TrainingSequence unlabeled = seq;
    unlabeled.motion.contacts.clear();
    CHECK_THROWS_AS(build_window_dataset({unlabeled}, sk, 40, 20), ValidationError);
    CHECK_THROWS_AS(build_window_dataset({seq}, sk, 200, 20), ValidationError);
  }

  TEST_CASE("short training run reduces the loss deterministically") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk(4.0);
    const WindowDataset d = build_window_dataset({{sc.motion, sc.head, sc.imu, sc.floor_levels}}, sk, 8, 8);
    EstimatorTrainingOptions opt;
    opt.steps = 60;
    opt.batch_windows = 4;
    opt.lr = 3e-3;
    opt.seed = 9;
    MotionEstimator a(tiny_config(), 6), b(tiny_config(), 6);
    const auto ra = train_estimator(a, d, sk, opt);
    const auto rb = train_estimator(b, d, sk, opt);
    REQUIRE(ra.losses.size() == 60);
    CHECK(ra.losses == rb.losses);
    CHECK(ra.final.total < ra.initial.total);

    const auto path = (std::filesystem::temp_directory_path() / "sparsecap_est.ckpt").string();
    save_estimator(path, a);
    const MotionEstimator loaded = load_estimator(path);
    CHECK(loaded.config().end_width == 8);
    const Var x = Var::constant(Matrix(d.inputs.topRows(8)));
    CHECK(a.forward(x).motion.value() == loaded.forward(x).motion.value());
    std::filesystem::remove(path);

    MotionEstimator wrong(EstimatorConfig::toy(), 1);
    CHECK_THROWS_AS(train_estimator(wrong, d, sk, opt), ValidationError);
  }

  TEST_CASE("oracle inference reproduces a flat walk") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk(6.0);
    const OracleRegressor oracle(sc.motion);
    const InferenceResult r = infer_sequence(sc.head, sc.imu, PointCloud(sc.cloud), oracle, sk);
    REQUIRE(r.motion.size() == sc.motion.size());
    double err = 0.0;
    for (std::size_t t = 0; t < r.motion.size(); ++t) {
      err = std::max(err, (r.motion.frames[t].root_translation - sc.motion.frames[t].root_translation).norm());
      for (int j = 0; j < kJointCount; ++j) err = std::max(err, r.motion.frames[t].rotations[j].angle_to(sc.motion.frames[t].rotations[j]));
      for (int s = 0; s < 2; ++s) CHECK(r.motion.contacts[t][s] == doctest::Approx(sc.motion.contacts[t][s]));
    }
    CHECK(err < 1e-9);
    CHECK(r.floor.history.empty());
    for (double l : r.floor_levels) CHECK(l == 0.0);
  }

  TEST_CASE("single window inference") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk(6.0);
    HeadTrajectory head = sc.head;
    head.poses.resize(40);
    head.up.resize(40);
    ImuStream imu = sc.imu;
    imu.frames.resize(40);
    const InferenceResult r = infer_sequence(head, imu, PointCloud(), OracleRegressor(sc.motion), sk, {.stride = 40});
    CHECK(r.motion.size() == 40);
    head.poses.resize(39);
    head.up.resize(39);
    imu.frames.resize(39);
    CHECK_THROWS_AS(infer_sequence(head, imu, PointCloud(), OracleRegressor(sc.motion), sk), ValidationError);
  }

  TEST_CASE("crossfade keeps constant predictions constant") {
    const auto sk = SkeletonModel::mean_body();
    Scenario sc = flat_walk(3.0);
    const Pose still = Pose::rest();
    for (auto& f : sc.motion.frames) f = still;
    for (auto& c : sc.motion.contacts) c = {1.0, 1.0};
    for (int stride : {1, 7, 20, 40}) {
      const InferenceResult r = infer_sequence(sc.head, sc.imu, PointCloud(), OracleRegressor(sc.motion), sk, {.stride = stride});
      for (const auto& f : r.motion.frames) {
        CHECK((f.root_translation - still.root_translation).norm() < 1e-9);
        CHECK(f.rotations[18].angle_to(still.rotations[18]) < 1e-9);
      }
    }
  }

  TEST_CASE("oracle inference tracks the staircase") {
    const auto sk = SkeletonModel::mean_body();
    const ScenarioSpec spec = ScenarioSpec::defaults(ScenarioKind::kStaircase);
    const Scenario sc = generate_scenario(spec, sk);
    const InferenceResult r = infer_sequence(sc.head, sc.imu, PointCloud(sc.cloud), OracleRegressor(sc.motion), sk);
    REQUIRE(r.floor.history.size() == static_cast<std::size_t>(spec.step_count));
    for (std::size_t k = 0; k < r.floor.history.size(); ++k) {
      CHECK(std::abs(r.floor.history[k].level - spec.step_height * static_cast<double>(k + 1)) < 0.02);
    }
  }

  TEST_CASE("neural inference is translation equivariant") {
    const auto sk = SkeletonModel::mean_body();
    const Scenario sc = flat_walk(3.0);
    const auto model = std::make_shared<const MotionEstimator>(EstimatorConfig::toy(), 7);
    const NeuralRegressor net(model);
    const Vec3 offset(3.5, -7.25, 0.0);
    HeadTrajectory moved = sc.head;
    translate(moved, offset);
    std::vector<Vec3> cloud = sc.cloud;
    for (auto& p : cloud) p += offset;
    const InferenceResult a = infer_sequence(sc.head, sc.imu, PointCloud(sc.cloud), net, sk);
    const InferenceResult b = infer_sequence(moved, sc.imu, PointCloud(cloud), net, sk);
    REQUIRE(a.motion.size() == b.motion.size());
    for (std::size_t t = 0; t < a.motion.size(); ++t) {
      CHECK((b.motion.frames[t].root_translation - a.motion.frames[t].root_translation - offset).norm() < 1e-6);
      CHECK(b.motion.frames[t].rotations[0].angle_to(a.motion.frames[t].rotations[0]) < 1e-6);
      for (int s = 0; s < 2; ++s) {
        CHECK(a.motion.contacts[t][s] >= 0.0);
        CHECK(a.motion.contacts[t][s] <= 1.0);
      }
    }
  }
}
