#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sparsecap/errors.hpp"
#include "sparsecap/nn/checkpoint.hpp"
#include "sparsecap/nn/gradcheck.hpp"
#include "sparsecap/nn/kernels.hpp"
#include "sparsecap/nn/layers.hpp"
#include "sparsecap/nn/optim.hpp"
#include "sparsecap/skeleton.hpp"
#include "support.hpp"

using namespace sparsecap;
using namespace sparsecap::nn;
using testgen::Gen;

namespace {

Matrix random_matrix(Gen& g, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g.uniform(lo, hi);
  return m;
}

// Reduces any op output to a scalar through fixed random weights so every
// output entry carries a distinct sensitivity.
Var weighted_sum(const Var& y, std::uint64_t seed) {
  Gen g(seed);
  return sum_all(mul(y, Var::constant(random_matrix(g, y.rows(), y.cols()))));
}

using Fn = std::function<Var(const std::vector<Var>&)>;

double check(const Fn& f, const std::vector<Matrix>& inputs) {
  return gradient_check([&](const std::vector<Var>& v) { return weighted_sum(f(v), 99); }, inputs).max_relative_error;
}

// Entries bounded away from zero (for |.| kinks) with random sign.
Matrix away_from_zero(Gen& g, Eigen::Index r, Eigen::Index c) {
  Matrix m = random_matrix(g, r, c, 0.2, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (g.uniform(0, 1) < 0.5) m.data()[i] = -m.data()[i];
  }
  return m;
}

Matrix naive_gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb) {
  const Matrix A = ta == Trans::kYes ? Matrix(a.transpose()) : a;
  const Matrix B = tb == Trans::kYes ? Matrix(b.transpose()) : b;
  Matrix c = Matrix::Zero(A.rows(), B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index p = 0; p < A.cols(); ++p) s += A(i, p) * B(p, j);
      c(i, j) = s;
    }
  }
  return c;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("softmax of uniform logits") {
    for (int k : {1, 2, 7, 64}) {
      const Var y = softmax_rows(Var::constant(Matrix::Constant(3, k, 2.5)));
      CHECK((y.value().array() - 1.0 / k).abs().maxCoeff() < 1e-15);
    }
    // Large logits stay finite.
    Matrix big(1, 3);
    big << 1000.0, 1000.0, -1000.0;
    const Var y = softmax_rows(Var::constant(big));
    CHECK(y.value()(0, 0) == doctest::Approx(0.5));
    CHECK(y.value()(0, 2) == 0.0);
  }

  TEST_CASE("linear layer gradient is y x^T") {
    Gen g(51);
    const Matrix x = random_matrix(g, 1, 5);
    Var w = Var::parameter(random_matrix(g, 5, 3));
    const Var y = matmul(Var::constant(x), w);
    backward(scale(sum_all(mul(y, y)), 0.5));
    // With row vectors y = x W, so dL/dW = x^T y.
    const Matrix expected = x.transpose() * y.value();
    CHECK((w.grad() - expected).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("elementwise and reduction op gradients") {
    Gen g(52);
    const Matrix a = random_matrix(g, 4, 5), b = random_matrix(g, 4, 5), row = random_matrix(g, 1, 5);
    CHECK(check([](auto& v) { return add(v[0], v[1]); }, {a, b}) < 1e-4);
    CHECK(check([](auto& v) { return sub(v[0], v[1]); }, {a, b}) < 1e-4);
    CHECK(check([](auto& v) { return mul(v[0], v[1]); }, {a, b}) < 1e-4);
    CHECK(check([](auto& v) { return scale(v[0], -1.7); }, {a}) < 1e-4);
    CHECK(check([](auto& v) { return add_row(v[0], v[1]); }, {a, row}) < 1e-4);
    CHECK(check([](auto& v) { return mul(sum_all(v[0]), sum_all(v[0])); }, {a}) < 1e-4);
    CHECK(check([](auto& v) { return mean_all(mul(v[0], v[0])); }, {a}) < 1e-4);
    CHECK(check([](auto& v) { return gelu(v[0]); }, {random_matrix(g, 4, 5, -3, 3)}) < 1e-4);
    CHECK(check([](auto& v) { return sigmoid(v[0]); }, {random_matrix(g, 4, 5, -4, 4)}) < 1e-4);
    CHECK(check([](auto& v) { return softmax_rows(v[0]); }, {random_matrix(g, 4, 5, -3, 3)}) < 1e-4);
    CHECK(check([](auto& v) { return group_norms(v[0], 3); }, {away_from_zero(g, 4, 9)}) < 1e-4);
  }

  TEST_CASE("clamp passes gradient only inside the interval") {
    Matrix x(1, 4);
    x << -2.0, -0.5, 0.5, 2.0;
    Var v = Var::parameter(x);
    const Var y = clamp(v, -1.0, 1.0);
    CHECK(y.value()(0, 0) == -1.0);
    CHECK(y.value()(0, 3) == 1.0);
    backward(sum_all(y));
    CHECK(v.grad()(0, 0) == 0.0);
    CHECK(v.grad()(0, 1) == 1.0);
    CHECK(v.grad()(0, 2) == 1.0);
    CHECK(v.grad()(0, 3) == 0.0);
    CHECK(check([](auto& v) { return clamp(v[0], -1.0, 1.0); }, {x}) < 1e-4);
  }

  TEST_CASE("matrix op gradients") {
    Gen g(53);
    CHECK(check([](auto& v) { return matmul(v[0], v[1]); }, {random_matrix(g, 3, 4), random_matrix(g, 4, 6)}) < 1e-4);
    CHECK(check([](auto& v) { return linear(v[0], v[1], v[2]); },
                {random_matrix(g, 5, 4), random_matrix(g, 4, 3), random_matrix(g, 1, 3)}) < 1e-4);
    CHECK(check([](auto& v) { return linear(v[0], v[1], Var()); }, {random_matrix(g, 5, 4), random_matrix(g, 4, 3)}) <
          1e-4);
    CHECK(check([](auto& v) { return layer_norm(v[0], v[1], v[2]); },
                {random_matrix(g, 4, 6), random_matrix(g, 1, 6), random_matrix(g, 1, 6)}) < 1e-4);
    CHECK(check([](auto& v) { return concat_cols({v[0], v[1], v[0]}); }, {random_matrix(g, 3, 2), random_matrix(g, 3, 4)}) <
          1e-4);
    CHECK(check([](auto& v) { return slice_cols(v[0], 1, 3); }, {random_matrix(g, 3, 5)}) < 1e-4);
    CHECK(check([](auto& v) { return slice_rows(v[0], 2, 2); }, {random_matrix(g, 5, 3)}) < 1e-4);
    CHECK(check([](auto& v) { return gather_cols(v[0], {4, 0, 0, 2}); }, {random_matrix(g, 3, 5)}) < 1e-4);
    CHECK(check([](auto& v) { return time_derivative(v[0], 4, 30.0); }, {random_matrix(g, 8, 3)}) < 1e-4);
  }

  TEST_CASE("attention gradients") {
    Gen g(54);
    for (int heads : {1, 2}) {
      const double err = check([heads](auto& v) { return attention(v[0], v[1], v[2], heads, 3); },
                               {random_matrix(g, 6, 4), random_matrix(g, 6, 4), random_matrix(g, 6, 4)});
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("convolution gradients") {
    Gen g(55);
    const int cin = 2, cout = 3, k = 5;
    CHECK(check([&](auto& v) { return conv1d(v[0], v[1], v[2], k, 2, 2); },
                {random_matrix(g, 8, cin), random_matrix(g, cout, k * cin), random_matrix(g, 1, cout)}) < 1e-4);
    CHECK(check([&](auto& v) { return conv1d(v[0], v[1], v[2], 3, 1, 1); },
                {random_matrix(g, 7, cin), random_matrix(g, cout, 3 * cin), random_matrix(g, 1, cout)}) < 1e-4);
    CHECK(check([&](auto& v) { return conv_transpose1d(v[0], v[1], v[2], k, 2, 2, 1); },
                {random_matrix(g, 4, cin), random_matrix(g, cin, k * cout), random_matrix(g, 1, cout)}) < 1e-4);
  }

  TEST_CASE("conv1d forward matches direct summation") {
    Gen g(56);
    const int T = 9, cin = 2, cout = 3, K = 5, stride = 2, pad = 2;
    const Matrix x = random_matrix(g, T, cin), w = random_matrix(g, cout, K * cin), b = random_matrix(g, 1, cout);
    const Matrix y = conv1d(Var::constant(x), Var::constant(w), Var::constant(b), K, stride, pad).value();
    const int out_len = (T + 2 * pad - K) / stride + 1;
    REQUIRE(y.rows() == out_len);
    for (int t = 0; t < out_len; ++t) {
      for (int o = 0; o < cout; ++o) {
        double s = b(0, o);
        for (int kk = 0; kk < K; ++kk) {
          const int src = t * stride + kk - pad;
          if (src < 0 || src >= T) continue;
          for (int c = 0; c < cin; ++c) s += w(o, kk * cin + c) * x(src, c);
        }
        CHECK(std::abs(y(t, o) - s) < 1e-13);
      }
    }
  }

  TEST_CASE("transposed convolution is the adjoint of convolution") {
    Gen g(57);
    const int T = 16, cin = 3, cout = 4, K = 5;
    const Matrix w = random_matrix(g, cout, K * cin);
    // Transposed weights are laid out Cin x (K * Cout), so the adjoint of a
    // cin -> cout convolution reuses the same cout x (K * cin) matrix.
    const Matrix& wt = w;
    const Matrix x = random_matrix(g, T, cin);
    const Matrix y = random_matrix(g, T / 2, cout);
    const Matrix cx = conv1d(Var::constant(x), Var::constant(w), Var::constant(Matrix::Zero(1, cout)), K, 2, 2).value();
    const Matrix ty =
        conv_transpose1d(Var::constant(y), Var::constant(wt), Var::constant(Matrix::Zero(1, cin)), K, 2, 2, 1).value();
    REQUIRE(cx.rows() == T / 2);
    REQUIRE(ty.rows() == T);
    CHECK(cx.cwiseProduct(y).sum() == doctest::Approx(x.cwiseProduct(ty).sum()).epsilon(1e-12));
  }

  TEST_CASE("rotation and kinematics op gradients") {
    Gen g(58);
    CHECK(check([](auto& v) { return rot6d_to_matrix(v[0]); }, {random_matrix(g, 3, 12)}) < 1e-4);

    const auto sk = SkeletonModel::mean_body();
    const int J = sk.joint_count();
    const Matrix six = random_matrix(g, 2, 6 * J);
    const Matrix root = random_matrix(g, 2, 3);
    const double err = check([&](auto& v) { return fk_positions(v[0], rot6d_to_matrix(v[1]), sk); }, {root, six});
    CHECK(err < 1e-4);
  }

  TEST_CASE("differentiable ops agree with geometry") {
    Gen g(59);
    const auto sk = SkeletonModel::mean_body();
    const int J = sk.joint_count();
    Pose pose;
    pose.root_translation = g.vec3();
    for (auto& r : pose.rotations) r = g.rotation();
    Matrix six(1, 6 * J), root(1, 3);
    for (int j = 0; j < J; ++j) {
      const Rot6 r6 = pose.rotations[j].six_d();
      for (int c = 0; c < 6; ++c) six(0, 6 * j + c) = r6[c];
    }
    root.row(0) = pose.root_translation.transpose();
    const Var mats = rot6d_to_matrix(Var::constant(six));
    for (int j = 0; j < J; ++j) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) CHECK(std::abs(mats.value()(0, 9 * j + 3 * r + c) - pose.rotations[j].matrix()(r, c)) < 1e-12);
      }
    }
    const Matrix fk = fk_positions(Var::constant(root), mats, sk).value();
    const auto ref = forward_kinematics(sk, pose).positions;
    for (int j = 0; j < J; ++j) {
      CHECK((fk.block(0, 3 * j, 1, 3).transpose() - ref[j]).norm() < 1e-12);
    }
  }

  TEST_CASE("loss values and gradients") {
    Gen g(60);
    Matrix p(2, 2), t(2, 2);
    p << 1.0, -2.0, 0.5, 3.0;
    t << 0.0, 0.0, 1.0, 1.0;
    CHECK(l1_loss(Var::constant(p), Var::constant(t), 1.0).item() == doctest::Approx(1 + 2 + 0.5 + 2));
    CHECK(l1_loss(Var::constant(p), Var::constant(t), 2.0, {1.0, 0.0}).item() == doctest::Approx((1 + 0.5) / 2.0));
    CHECK(mse_loss(Var::constant(p), Var::constant(t)).item() == doctest::Approx((1 + 4 + 0.25 + 4) / 4.0));

    Matrix prob(1, 4), label(1, 4);
    prob << 0.9, 0.2, 0.0, 1.0;
    label << 1.0, 0.0, 1.0, 1.0;
    const double expected = -(std::log(0.9) + std::log(0.8) + std::log(kBceFloor) + std::log(1.0)) / 4.0;
    CHECK(bce_loss(Var::constant(prob), Var::constant(label), 4.0).item() == doctest::Approx(expected));

    const Matrix target = random_matrix(g, 3, 4);
    Matrix offset = away_from_zero(g, 3, 4);
    CHECK(check([&](auto& v) { return l1_loss(v[0], Var::constant(target), 3.0, {1, 2, 3, 4}); }, {Matrix(target + offset)}) <
          1e-4);
    CHECK(check([&](auto& v) { return mse_loss(v[0], v[1]); }, {random_matrix(g, 3, 4), random_matrix(g, 3, 4)}) < 1e-4);
    const Matrix labels = random_matrix(g, 3, 4, 0, 1);
    CHECK(check([&](auto& v) { return bce_loss(v[0], Var::constant(labels), 5.0); },
                {random_matrix(g, 3, 4, 0.05, 0.95)}) < 1e-4);
  }

  TEST_CASE("shape mismatches name the operator") {
    const Var a = Var::constant(Matrix::Zero(2, 3));
    const Var b = Var::constant(Matrix::Zero(3, 2));
    auto message = [](auto&& f) -> std::string {
      try {
        f();
      } catch (const ValidationError& e) {
        return e.what();
      }
      return "";
    };
    CHECK(message([&] { add(a, b); }).find("add") != std::string::npos);
    CHECK(message([&] { matmul(a, a); }).find("matmul") != std::string::npos);
    CHECK(message([&] { mse_loss(a, b); }).find("mse") != std::string::npos);
    CHECK(message([&] { attention(a, a, a, 2, 2); }).find("attention") != std::string::npos);
    CHECK(message([&] { layer_norm(a, Var::constant(Matrix::Ones(1, 2)), Var::constant(Matrix::Zero(1, 3))); })
              .find("layer_norm") != std::string::npos);
  }

  TEST_CASE("layer parameter gradients") {
    Rng rng(61);
    Gen g(61);
    const TransformerEncoder enc(8, 2, 16, 2, rng);
    const Linear head(8, 3, rng);
    const Conv1d conv(3, 4, 5, 2, 2, rng);
    const ConvTranspose1d deconv(4, 3, 5, 2, 2, 1, rng);
    ParameterSet params;
    enc.collect("enc", params);
    head.collect("head", params);
    conv.collect("conv", params);
    deconv.collect("deconv", params);
    const Var x = Var::constant(random_matrix(g, 8, 8));
    auto loss = [&] {
      const Var h = head(enc(add_positional_encoding(x, 4), 4));
      return weighted_sum(deconv(conv(h)), 7);
    };
    // Softmax is shift invariant per query, so key biases get exactly zero gradient.
    ParameterSet probed;
    params.zero_grad();
    backward(loss());
    for (const auto& p : params.items()) {
      if (p.name.ends_with(".k.bias")) {
        CHECK(p.var.grad().cwiseAbs().maxCoeff() < 1e-12);
      } else {
        probed.add(p.name, p.var);
      }
    }
    const GradCheckResult r = gradient_check_parameters(loss, probed);
    CHECK_MESSAGE(r.max_relative_error < 1e-4, r.worst);
  }

  TEST_CASE("attention is permutation equivariant without positions") {
    Rng rng(62);
    Gen g(62);
    const TransformerEncoder enc(8, 2, 16, 2, rng);
    const int T = 6;
    const Matrix x = random_matrix(g, T, 8);
    std::vector<int> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.engine());
    Matrix xp(T, 8);
    for (int t = 0; t < T; ++t) xp.row(t) = x.row(perm[t]);
    const Matrix y = enc(Var::constant(x), T).value();
    const Matrix yp = enc(Var::constant(xp), T).value();
    for (int t = 0; t < T; ++t) CHECK((yp.row(t) - y.row(perm[t])).cwiseAbs().maxCoeff() < 1e-12);

    const Matrix enc_y = enc(add_positional_encoding(Var::constant(x), T), T).value();
    const Matrix enc_yp = enc(add_positional_encoding(Var::constant(xp), T), T).value();
    double diff = 0.0;
    for (int t = 0; t < T; ++t) diff = std::max(diff, (enc_yp.row(t) - enc_y.row(perm[t])).cwiseAbs().maxCoeff());
    CHECK(diff > 1e-6);
  }

  TEST_CASE("attention blocks are independent") {
    Gen g(63);
    const Matrix q = random_matrix(g, 8, 4), k = random_matrix(g, 8, 4), v = random_matrix(g, 8, 4);
    const Matrix joint = attention(Var::constant(q), Var::constant(k), Var::constant(v), 2, 4).value();
    const Matrix first = attention(Var::constant(q.topRows(4)), Var::constant(k.topRows(4)), Var::constant(v.topRows(4)), 2, 4).value();
    CHECK((joint.topRows(4) - first).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("sinusoidal encoding") {
    const Matrix pe = sinusoidal_encoding(5, 4);
    CHECK(pe(0, 0) == 0.0);
    CHECK(pe(0, 1) == 1.0);
    CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(pe(3, 1) == doctest::Approx(std::cos(3.0)));
    CHECK(pe(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)));
  }

  TEST_CASE("gemm backends agree") {
    Gen g(64);
    std::vector<KernelBackend> backends = {KernelBackend::kScalar};
    for (auto b : {KernelBackend::kAvx2, KernelBackend::kNeon}) {
      if (backend_available(b)) backends.push_back(b);
    }
    MESSAGE("gemm backends compared: ", backends.size());
    for (int trial = 0; trial < 200; ++trial) {
      const int m = g.integer(1, 37), n = g.integer(1, 37), k = g.integer(1, 37);
      const Trans ta = g.integer(0, 1) ? Trans::kYes : Trans::kNo;
      const Trans tb = g.integer(0, 1) ? Trans::kYes : Trans::kNo;
      const Matrix a = ta == Trans::kYes ? random_matrix(g, k, m) : random_matrix(g, m, k);
      const Matrix b = tb == Trans::kYes ? random_matrix(g, n, k) : random_matrix(g, k, n);
      const Matrix c0 = random_matrix(g, m, n);
      const double alpha = g.uniform(-2, 2);
      const double beta = trial % 3 == 0 ? 0.0 : g.uniform(-1, 1);
      const Matrix oracle = alpha * naive_gemm(a, ta, b, tb) + (beta == 0.0 ? Matrix::Zero(m, n) : Matrix(beta * c0));
      for (auto backend : backends) {
        Matrix c = beta == 0.0 ? Matrix::Constant(m, n, std::nan("")) : c0;
        gemm_with(backend, ta, tb, m, n, k, alpha, a.data(), static_cast<int>(a.cols()), b.data(),
                  static_cast<int>(b.cols()), beta, c.data(), n);
        INFO("backend ", backend_name(backend), " m=", m, " n=", n, " k=", k);
        REQUIRE((c - oracle).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }

  TEST_CASE("backend selection") {
    CHECK(backend_available(KernelBackend::kScalar));
    CHECK(parse_backend("scalar") == KernelBackend::kScalar);
    CHECK(parse_backend("avx2") == KernelBackend::kAvx2);
    CHECK_THROWS_AS(parse_backend("sse9"), ValidationError);
    const KernelBackend before = active_backend();
    set_backend(KernelBackend::kScalar);
    CHECK(active_backend() == KernelBackend::kScalar);
    set_backend(before);
    for (auto b : {KernelBackend::kAvx2, KernelBackend::kNeon}) {
      if (!backend_available(b)) CHECK_THROWS_AS(set_backend(b), ValidationError);
    }
  }

  TEST_CASE("forward pass is bit stable") {
    auto run = [] {
      Rng rng(65);
      const TransformerEncoder enc(8, 2, 16, 2, rng);
      Gen g(65);
      return enc(add_positional_encoding(Var::constant(random_matrix(g, 8, 8)), 8), 8).value();
    };
    const Matrix a = run(), b = run();
    CHECK(std::equal(a.data(), a.data() + a.size(), b.data()));
  }

  TEST_CASE("adamw with zero gradient and no decay is a no-op") {
    Gen g(66);
    Var w = Var::parameter(random_matrix(g, 3, 3));
    const Matrix before = w.value();
    ParameterSet ps;
    ps.add("w", w);
    AdamW opt(ps, {.lr = 1e-2});
    for (int i = 0; i < 10; ++i) {
      opt.zero_grad();
      backward(scale(sum_all(w), 0.0));
      opt.step();
    }
    CHECK(w.value() == before);
    CHECK(opt.step_count() == 10);
  }

  TEST_CASE("adamw decreases a quadratic bowl") {
    Gen g(67);
    Var w = Var::parameter(random_matrix(g, 4, 2, -3, 3));
    ParameterSet ps;
    ps.add("w", w);
    AdamW opt(ps, {.lr = 1e-2});
    double prev = 1e300;
    for (int i = 0; i < 100; ++i) {
      opt.zero_grad();
      const Var loss = scale(sum_all(mul(w, w)), 0.5);
      REQUIRE(loss.item() < prev);
      prev = loss.item();
      backward(loss);
      opt.step();
    }
  }

  TEST_CASE("adamw weight decay shrinks geometrically") {
    Gen g(68);
    const Matrix init = random_matrix(g, 2, 3);
    Var w = Var::parameter(init);
    ParameterSet ps;
    ps.add("w", w);
    const double lr = 0.05, wd = 0.3;
    AdamW opt(ps, {.lr = lr, .weight_decay = wd});
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      opt.step();
    }
    CHECK((w.value() - init * std::pow(1.0 - lr * wd, 20)).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("adamw matches a hand-rolled update") {
    Gen g(69);
    const Matrix init = random_matrix(g, 1, 3);
    Var w = Var::parameter(init);
    ParameterSet ps;
    ps.add("w", w);
    const AdamWOptions o{.lr = 0.1, .beta1 = 0.8, .beta2 = 0.9, .eps = 1e-8, .weight_decay = 0.01};
    AdamW opt(ps, o);
    Eigen::ArrayXXd p = init.array(), m = Eigen::ArrayXXd::Zero(1, 3), v = Eigen::ArrayXXd::Zero(1, 3);
    for (int step = 1; step <= 5; ++step) {
      opt.zero_grad();
      backward(sum_all(mul(mul(w, w), w)));
      const Eigen::ArrayXXd grad = 3.0 * p * p;
      opt.step();
      p *= 1.0 - o.lr * o.weight_decay;
      m = o.beta1 * m + (1 - o.beta1) * grad;
      v = o.beta2 * v + (1 - o.beta2) * grad * grad;
      const Eigen::ArrayXXd mh = m / (1 - std::pow(o.beta1, step));
      const Eigen::ArrayXXd vh = v / (1 - std::pow(o.beta2, step));
      p -= o.lr * mh / (vh.sqrt() + o.eps);
      CHECK((w.value().array() - p).abs().maxCoeff() < 1e-13);
    }
    CHECK(opt.first_moment(0).rows() == 1);
    CHECK(opt.second_moment(0).cols() == 3);
  }

  TEST_CASE("adamw rejects non-finite gradients untouched") {
    Var w = Var::parameter(Matrix::Ones(1, 2));
    ParameterSet ps;
    ps.add("w", w);
    AdamW opt(ps);
    Matrix bad(1, 2);
    bad << 1.0, std::nan("");
    w.accumulate(bad);
    CHECK_THROWS_AS(opt.step(), NumericalError);
    CHECK(w.value() == Matrix::Ones(1, 2));
  }

  TEST_CASE("parameter set") {
    ParameterSet ps;
    ps.add("a", Var::parameter(Matrix::Zero(2, 2)));
    CHECK_THROWS_AS(ps.add("a", Var::parameter(Matrix::Zero(1, 1))), ValidationError);
    CHECK_THROWS_AS(ps.add("c", Var::constant(Matrix::Zero(1, 1))), ValidationError);
    CHECK_THROWS_AS(ps.at("zz"), ValidationError);
    CHECK(ps.scalar_count() == 4);
  }

  TEST_CASE("checkpoint round trip") {
    Rng rng(70);
    const TransformerEncoder enc(8, 2, 16, 1, rng);
    ParameterSet ps;
    enc.collect("enc", ps);
    const auto path = (std::filesystem::temp_directory_path() / "sparsecap_nn_ckpt.bin").string();
    save_checkpoint(path, snapshot(ps, {{"kind", "encoder"}, {"width", "8"}}));

    Rng other(71);
    const TransformerEncoder fresh(8, 2, 16, 1, other);
    ParameterSet ps2;
    fresh.collect("enc", ps2);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.meta_value("kind") == "encoder");
    CHECK_THROWS_AS(loaded.meta_value("missing"), ValidationError);
    restore(loaded, ps2);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(ps.items()[i].name == ps2.items()[i].name);
      CHECK(ps.items()[i].var.value() == ps2.items()[i].var.value());
    }

    ParameterSet wrong;
    wrong.add("enc.other", Var::parameter(Matrix::Zero(1, 1)));
    CHECK_THROWS_AS(restore(loaded, wrong), ValidationError);

    {
      std::ofstream trunc(path, std::ios::binary | std::ios::trunc);
      trunc << "SCAPCKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
    {
      std::ofstream junk(path, std::ios::binary | std::ios::trunc);
      junk << "NOTACKPTxxxxxxxx";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
  }
}
