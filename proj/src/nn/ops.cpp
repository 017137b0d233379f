#include "sparsecap/nn/ops.hpp"

#include <cmath>
#include <string>

#include "sparsecap/errors.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap::nn {
namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

bool same_shape(const Matrix& a, const Matrix& b) { return a.rows() == b.rows() && a.cols() == b.cols(); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Matrix matmul_values(const Matrix& a, Trans ta, const Matrix& b, Trans tb) {
  const int m = static_cast<int>(ta == Trans::kNo ? a.rows() : a.cols());
  const int k = static_cast<int>(ta == Trans::kNo ? a.cols() : a.rows());
  const int kb = static_cast<int>(tb == Trans::kNo ? b.rows() : b.cols());
  const int n = static_cast<int>(tb == Trans::kNo ? b.cols() : b.rows());
  require_shape(k == kb, "matmul", "inner dimensions differ (" + dims(a) + " and " + dims(b) + ")");
  Matrix c(m, n);
  if (m > 0 && n > 0) {
    gemm(ta, tb, m, n, k, 1.0, a.data(), static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, c.data(),
         n);
  }
  return c;
}

Var matmul(const Var& a, const Var& b) {
  require_shape(a.cols() == b.rows(), "matmul", "cannot multiply " + dims(a.value()) + " by " + dims(b.value()));
  return make_op(matmul_values(a.value(), Trans::kNo, b.value(), Trans::kNo), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) a.accumulate(matmul_values(g, Trans::kNo, b.value(), Trans::kYes));
    if (b.requires_grad()) b.accumulate(matmul_values(a.value(), Trans::kYes, g, Trans::kNo));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_shape(x.cols() == w.rows(), "linear", "input " + dims(x.value()) + " does not match weight " + dims(w.value()));
  Matrix y = matmul_values(x.value(), Trans::kNo, w.value(), Trans::kNo);
  if (b.defined()) {
    require_shape(b.rows() == 1 && b.cols() == w.cols(), "linear", "bias must be 1x" + std::to_string(w.cols()));
    y.rowwise() += b.value().row(0);
  }
  std::vector<Var> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), inputs, [x, w, b](const Matrix& g) {
    if (x.requires_grad()) x.accumulate(matmul_values(g, Trans::kNo, w.value(), Trans::kYes));
    if (w.requires_grad()) w.accumulate(matmul_values(x.value(), Trans::kYes, g, Trans::kNo));
    if (b.defined() && b.requires_grad()) b.accumulate(g.colwise().sum());
  });
}

Var add_row(const Var& x, const Var& row) {
  require_shape(row.rows() == 1 && row.cols() == x.cols(), "add_row", "row " + dims(row.value()) + " vs " + dims(x.value()));
  Matrix y = x.value();
  y.rowwise() += row.value().row(0);
  return make_op(std::move(y), {x, row}, [x, row](const Matrix& g) {
    x.accumulate(g);
    if (row.requires_grad()) row.accumulate(g.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  require_shape(same_shape(a.value(), b.value()), "add", dims(a.value()) + " vs " + dims(b.value()));
  return make_op(a.value() + b.value(), {a, b}, [a, b](const Matrix& g) {
    a.accumulate(g);
    b.accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_shape(same_shape(a.value(), b.value()), "sub", dims(a.value()) + " vs " + dims(b.value()));
  return make_op(a.value() - b.value(), {a, b}, [a, b](const Matrix& g) {
    a.accumulate(g);
    if (b.requires_grad()) b.accumulate(-g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_shape(same_shape(a.value(), b.value()), "mul", dims(a.value()) + " vs " + dims(b.value()));
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) a.accumulate(g.cwiseProduct(b.value()));
    if (b.requires_grad()) b.accumulate(g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [a, s](const Matrix& g) { a.accumulate(g * s); });
}

Var sum_all(const Var& a) {
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return make_op(std::move(y), {a}, [a](const Matrix& g) {
    a.accumulate(Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_all(const Var& a) {
  require_shape(a.value().size() > 0, "mean_all", "empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var gelu(const Var& x) {
  Matrix y = x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return make_op(std::move(y), {x}, [x](const Matrix& g) {
    Matrix d = x.value().unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    x.accumulate(g.cwiseProduct(d));
  });
}

Var sigmoid(const Var& x) {
  Matrix y = x.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Matrix yv = y;
  return make_op(std::move(y), {x}, [x, yv](const Matrix& g) {
    x.accumulate(g.cwiseProduct(yv.cwiseProduct((1.0 - yv.array()).matrix())));
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Matrix y = x.value().cwiseMax(lo).cwiseMin(hi);
  return make_op(std::move(y), {x}, [x, lo, hi](const Matrix& g) {
    Matrix d = g;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double v = x.value().data()[i];
      if (!(v > lo && v < hi)) d.data()[i] = 0.0;
    }
    x.accumulate(d);
  });
}

Var softmax_rows(const Var& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.value().row(r).maxCoeff();
    y.row(r) = (x.value().row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Matrix yv = y;
  return make_op(std::move(y), {x}, [x, yv](const Matrix& g) {
    Matrix d(yv.rows(), yv.cols());
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const double dot = g.row(r).dot(yv.row(r));
      d.row(r) = yv.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    x.accumulate(d);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.cols();
  require_shape(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n, "layer_norm",
                "gamma/beta must be 1x" + std::to_string(n));
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mean).matrix() * inv_std(r);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return make_op(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](const Matrix& g) {
    if (gamma.requires_grad()) gamma.accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (beta.requires_grad()) beta.accumulate(g.colwise().sum());
    if (x.requires_grad()) {
      Matrix dxhat = g;
      dxhat.array().rowwise() *= gamma.value().row(0).array();
      Matrix dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(g.cols());
        dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
      }
      x.accumulate(dx);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, int seq_len) {
  const Eigen::Index rows = q.rows(), d = q.cols();
  require_shape(same_shape(q.value(), k.value()) && same_shape(q.value(), v.value()), "attention",
                "q, k, v shapes differ");
  require_shape(heads > 0 && d % heads == 0, "attention", "width " + std::to_string(d) + " not divisible by heads");
  require_shape(seq_len > 0 && rows % seq_len == 0, "attention", "rows not a multiple of the sequence length");
  const int dh = static_cast<int>(d / heads);
  const int blocks = static_cast<int>(rows / seq_len);
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out(rows, d);
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(blocks) * heads);
  for (int b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto Q = q.value().block(b * seq_len, h * dh, seq_len, dh);
      const auto K = k.value().block(b * seq_len, h * dh, seq_len, dh);
      const auto V = v.value().block(b * seq_len, h * dh, seq_len, dh);
      Matrix S = (Q * K.transpose()) * s;
      for (int r = 0; r < seq_len; ++r) {
        const double mx = S.row(r).maxCoeff();
        S.row(r) = (S.row(r).array() - mx).exp().matrix();
        S.row(r) /= S.row(r).sum();
      }
      out.block(b * seq_len, h * dh, seq_len, dh) = S * V;
      (*probs)[static_cast<std::size_t>(b) * heads + h] = std::move(S);
    }
  }
  return make_op(std::move(out), {q, k, v}, [q, k, v, probs, heads, seq_len, dh, blocks, s](const Matrix& g) {
    Matrix dq = Matrix::Zero(q.rows(), q.cols());
    Matrix dk = dq, dv = dq;
    for (int b = 0; b < blocks; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix& P = (*probs)[static_cast<std::size_t>(b) * heads + h];
        const auto Q = q.value().block(b * seq_len, h * dh, seq_len, dh);
        const auto K = k.value().block(b * seq_len, h * dh, seq_len, dh);
        const auto V = v.value().block(b * seq_len, h * dh, seq_len, dh);
        const auto G = g.block(b * seq_len, h * dh, seq_len, dh);
        dv.block(b * seq_len, h * dh, seq_len, dh) = P.transpose() * G;
        Matrix dP = G * V.transpose();
        Matrix dS(seq_len, seq_len);
        for (int r = 0; r < seq_len; ++r) {
          const double dot = dP.row(r).dot(P.row(r));
          dS.row(r) = P.row(r).cwiseProduct((dP.row(r).array() - dot).matrix());
        }
        dS *= s;
        dq.block(b * seq_len, h * dh, seq_len, dh) = dS * K;
        dk.block(b * seq_len, h * dh, seq_len, dh) = dS.transpose() * Q;
      }
    }
    q.accumulate(dq);
    k.accumulate(dk);
    v.accumulate(dv);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require_shape(!parts.empty(), "concat_cols", "no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require_shape(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op(std::move(y), parts, [parts](const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.accumulate(g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_cols(const Var& x, int start, int count) {
  require_shape(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols",
                "range [" + std::to_string(start) + ", " + std::to_string(start + count) + ") outside " + dims(x.value()));
  return make_op(x.value().middleCols(start, count), {x}, [x, start, count](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    d.middleCols(start, count) = g;
    x.accumulate(d);
  });
}

Var slice_rows(const Var& x, int start, int count) {
  require_shape(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows",
                "range [" + std::to_string(start) + ", " + std::to_string(start + count) + ") outside " + dims(x.value()));
  return make_op(x.value().middleRows(start, count), {x}, [x, start, count](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    d.middleRows(start, count) = g;
    x.accumulate(d);
  });
}

Var gather_cols(const Var& x, const std::vector<int>& columns) {
  Matrix y(x.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    require_shape(columns[i] >= 0 && columns[i] < x.cols(), "gather_cols", "column index out of range");
    y.col(static_cast<Eigen::Index>(i)) = x.value().col(columns[i]);
  }
  return make_op(std::move(y), {x}, [x, columns](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < columns.size(); ++i) d.col(columns[i]) += g.col(static_cast<Eigen::Index>(i));
    x.accumulate(d);
  });
}

Var time_derivative(const Var& x, int seq_len, double rate) {
  require_shape(seq_len >= 2 && x.rows() % seq_len == 0, "time_derivative", "rows must be blocks of at least 2 frames");
  const Eigen::Index blocks = x.rows() / seq_len;
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const Eigen::Index o = b * seq_len;
    for (int t = 0; t < seq_len; ++t) {
      if (t == 0) {
        y.row(o) = (x.value().row(o + 1) - x.value().row(o)) * rate;
      } else if (t == seq_len - 1) {
        y.row(o + t) = (x.value().row(o + t) - x.value().row(o + t - 1)) * rate;
      } else {
        y.row(o + t) = (x.value().row(o + t + 1) - x.value().row(o + t - 1)) * (0.5 * rate);
      }
    }
  }
  return make_op(std::move(y), {x}, [x, seq_len, rate, blocks](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const Eigen::Index o = b * seq_len;
      for (int t = 0; t < seq_len; ++t) {
        const auto gr = g.row(o + t);
        if (t == 0) {
          d.row(o + 1) += gr * rate;
          d.row(o) -= gr * rate;
        } else if (t == seq_len - 1) {
          d.row(o + t) += gr * rate;
          d.row(o + t - 1) -= gr * rate;
        } else {
          d.row(o + t + 1) += gr * (0.5 * rate);
          d.row(o + t - 1) -= gr * (0.5 * rate);
        }
      }
    }
    x.accumulate(d);
  });
}

namespace {

// rows_out x (K * C) patch matrix: patch[t][k * C + c] = x[t * stride + k - pad][c] (zero outside).
Matrix im2col(const Matrix& x, int rows_out, int kernel, int stride, int pad) {
  const Eigen::Index C = x.cols();
  Matrix cols = Matrix::Zero(rows_out, kernel * C);
  for (int t = 0; t < rows_out; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const int src = t * stride + k - pad;
      if (src < 0 || src >= x.rows()) continue;
      cols.block(t, k * C, 1, C) = x.row(src);
    }
  }
  return cols;
}

Eigen::Matrix3d rotation_block(const Matrix& rot, Eigen::Index r, int j) {
  Eigen::Matrix3d m;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) m(a, b) = rot(r, 9 * j + 3 * a + b);
  return m;
}

// Adjoint of im2col: scatters patches back onto a rows_in x C matrix.
Matrix col2im(const Matrix& cols, Eigen::Index rows_in, Eigen::Index C, int kernel, int stride, int pad) {
  Matrix x = Matrix::Zero(rows_in, C);
  for (Eigen::Index t = 0; t < cols.rows(); ++t) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index dst = t * stride + k - pad;
      if (dst < 0 || dst >= rows_in) continue;
      x.row(dst) += cols.block(t, k * C, 1, C);
    }
  }
  return x;
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad) {
  const Eigen::Index cin = x.cols();
  require_shape(kernel > 0 && stride > 0 && pad >= 0, "conv1d", "invalid kernel/stride/padding");
  require_shape(w.cols() == kernel * cin, "conv1d",
                "weight " + dims(w.value()) + " does not match kernel " + std::to_string(kernel) + " x " +
                    std::to_string(cin) + " input channels");
  const Eigen::Index span = x.rows() + 2 * pad - kernel;
  require_shape(span >= 0, "conv1d", "input of " + std::to_string(x.rows()) + " frames is shorter than the kernel");
  const int rows_out = static_cast<int>(span / stride + 1);
  Matrix cols = im2col(x.value(), rows_out, kernel, stride, pad);
  Matrix y = matmul_values(cols, Trans::kNo, w.value(), Trans::kYes);
  if (b.defined()) {
    require_shape(b.rows() == 1 && b.cols() == w.rows(), "conv1d", "bias must be 1x" + std::to_string(w.rows()));
    y.rowwise() += b.value().row(0);
  }
  std::vector<Var> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), inputs, [x, w, b, cols = std::move(cols), kernel, stride, pad](const Matrix& g) {
    if (w.requires_grad()) w.accumulate(matmul_values(g, Trans::kYes, cols, Trans::kNo));
    if (b.defined() && b.requires_grad()) b.accumulate(g.colwise().sum());
    if (x.requires_grad()) {
      const Matrix dcols = matmul_values(g, Trans::kNo, w.value(), Trans::kNo);
      x.accumulate(col2im(dcols, x.rows(), x.cols(), kernel, stride, pad));
    }
  });
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad, int output_padding) {
  require_shape(kernel > 0 && stride > 0 && pad >= 0 && output_padding >= 0 && output_padding < stride,
                "conv_transpose1d", "invalid kernel/stride/padding");
  require_shape(w.rows() == x.cols() && w.cols() % kernel == 0, "conv_transpose1d",
                "weight " + dims(w.value()) + " does not match input " + dims(x.value()));
  const Eigen::Index cout = w.cols() / kernel;
  const Eigen::Index rows_out = (x.rows() - 1) * stride - 2 * pad + kernel + output_padding;
  require_shape(rows_out > 0, "conv_transpose1d", "non-positive output length");
  const Matrix cols = matmul_values(x.value(), Trans::kNo, w.value(), Trans::kNo);
  Matrix y = col2im(cols, rows_out, cout, kernel, stride, pad);
  if (b.defined()) {
    require_shape(b.rows() == 1 && b.cols() == cout, "conv_transpose1d", "bias must be 1x" + std::to_string(cout));
    y.rowwise() += b.value().row(0);
  }
  std::vector<Var> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), inputs, [x, w, b, kernel, stride, pad](const Matrix& g) {
    if (b.defined() && b.requires_grad()) b.accumulate(g.colwise().sum());
    const Matrix dcols = im2col(g, static_cast<int>(x.rows()), kernel, stride, pad);
    if (w.requires_grad()) w.accumulate(matmul_values(x.value(), Trans::kYes, dcols, Trans::kNo));
    if (x.requires_grad()) x.accumulate(matmul_values(dcols, Trans::kNo, w.value(), Trans::kYes));
  });
}

Var rot6d_to_matrix(const Var& x) {
  require_shape(x.cols() % 6 == 0, "rot6d_to_matrix", "column count must be a multiple of 6");
  const Eigen::Index n = x.cols() / 6;
  Matrix y(x.rows(), 9 * n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Vector3d a1(x.value()(r, 6 * j), x.value()(r, 6 * j + 1), x.value()(r, 6 * j + 2));
      const Eigen::Vector3d a2(x.value()(r, 6 * j + 3), x.value()(r, 6 * j + 4), x.value()(r, 6 * j + 5));
      const double n1 = a1.norm();
      if (!(n1 > 1e-12)) throw NumericalError("rot6d_to_matrix: degenerate first column");
      const Eigen::Vector3d b1 = a1 / n1;
      const Eigen::Vector3d u = a2 - b1.dot(a2) * b1;
      const double nu = u.norm();
      if (!(nu > 1e-12)) throw NumericalError("rot6d_to_matrix: parallel columns");
      const Eigen::Vector3d b2 = u / nu;
      const Eigen::Vector3d b3 = b1.cross(b2);
      for (int row = 0; row < 3; ++row) {
        y(r, 9 * j + 3 * row + 0) = b1(row);
        y(r, 9 * j + 3 * row + 1) = b2(row);
        y(r, 9 * j + 3 * row + 2) = b3(row);
      }
    }
  }
  return make_op(std::move(y), {x}, [x, n](const Matrix& g) {
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Vector3d a1(x.value()(r, 6 * j), x.value()(r, 6 * j + 1), x.value()(r, 6 * j + 2));
        const Eigen::Vector3d a2(x.value()(r, 6 * j + 3), x.value()(r, 6 * j + 4), x.value()(r, 6 * j + 5));
        const double n1 = a1.norm();
        const Eigen::Vector3d b1 = a1 / n1;
        const double c = b1.dot(a2);
        const Eigen::Vector3d u = a2 - c * b1;
        const double nu = u.norm();
        const Eigen::Vector3d b2 = u / nu;
        Eigen::Vector3d g1, g2, g3;
        for (int row = 0; row < 3; ++row) {
          g1(row) = g(r, 9 * j + 3 * row + 0);
          g2(row) = g(r, 9 * j + 3 * row + 1);
          g3(row) = g(r, 9 * j + 3 * row + 2);
        }
        // b3 = b1 x b2
        g1 += b2.cross(g3);
        g2 += g3.cross(b1);
        // b2 = u / |u|
        const Eigen::Vector3d gu = (g2 - b2 * b2.dot(g2)) / nu;
        // u = a2 - (b1 . a2) b1
        const Eigen::Vector3d ga2 = gu - b1 * b1.dot(gu);
        g1 -= c * gu + a2 * b1.dot(gu);
        // b1 = a1 / |a1|
        const Eigen::Vector3d ga1 = (g1 - b1 * b1.dot(g1)) / n1;
        d.block(r, 6 * j, 1, 3) = ga1.transpose();
        d.block(r, 6 * j + 3, 1, 3) = ga2.transpose();
      }
    }
    x.accumulate(d);
  });
}

Var fk_positions(const Var& root, const Var& rotations, const SkeletonModel& skeleton) {
  const int J = skeleton.joint_count();
  require_shape(root.cols() == 3 && rotations.cols() == 9 * J && root.rows() == rotations.rows(), "fk_positions",
                "expected Rx3 root and Rx" + std::to_string(9 * J) + " rotations, got " + dims(root.value()) + " and " +
                    dims(rotations.value()));
  const Eigen::Index R = root.rows();
  std::vector<int> parents = skeleton.parents();
  std::vector<Eigen::Vector3d> offsets = skeleton.offsets();

  // Global rotations are kept for the reverse pass.
  auto globals = std::make_shared<std::vector<Eigen::Matrix3d>>(static_cast<std::size_t>(R) * J);
  Matrix y(R, 3 * J);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::Matrix3d* G = globals->data() + r * J;
    std::vector<Eigen::Vector3d> p(J);
    for (int j = 0; j < J; ++j) {
      if (parents[j] < 0) {
        G[j] = rotation_block(rotations.value(), r, j);
        p[j] = root.value().row(r).transpose();
      } else {
        const int pa = parents[j];
        G[j] = G[pa] * rotation_block(rotations.value(), r, j);
        p[j] = p[pa] + G[pa] * offsets[j];
      }
      y.block(r, 3 * j, 1, 3) = p[j].transpose();
    }
  }
  return make_op(std::move(y), {root, rotations}, [root, rotations, globals, parents, offsets, J](const Matrix& g) {
    const Eigen::Index R = root.rows();
    Matrix droot = Matrix::Zero(R, 3);
    Matrix drot = Matrix::Zero(R, 9 * J);
    std::vector<Eigen::Vector3d> gp(J);
    std::vector<Eigen::Matrix3d> gG(J);
    for (Eigen::Index r = 0; r < R; ++r) {
      const Eigen::Matrix3d* G = globals->data() + r * J;
      for (int j = 0; j < J; ++j) {
        gp[j] = g.block(r, 3 * j, 1, 3).transpose();
        gG[j].setZero();
      }
      for (int j = J - 1; j >= 0; --j) {
        const int pa = parents[j];
        Eigen::Matrix3d gR;
        if (pa < 0) {
          gR = gG[j];
          droot.row(r) += gp[j].transpose();
        } else {
          gp[pa] += gp[j];
          gG[pa] += gp[j] * offsets[j].transpose() + gG[j] * rotation_block(rotations.value(), r, j).transpose();
          gR = G[pa].transpose() * gG[j];
        }
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) drot(r, 9 * j + 3 * a + b) = gR(a, b);
      }
    }
    root.accumulate(droot);
    rotations.accumulate(drot);
  });
}

Var group_norms(const Var& x, int dim) {
  require_shape(dim > 0 && x.cols() % dim == 0, "group_norms", "column count must be a multiple of the group size");
  const Eigen::Index n = x.cols() / dim;
  Matrix y(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index k = 0; k < n; ++k) y(r, k) = x.value().block(r, k * dim, 1, dim).norm();
  Matrix yv = y;
  return make_op(std::move(y), {x}, [x, yv, dim, n](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index k = 0; k < n; ++k)
        if (yv(r, k) > 0) d.block(r, k * dim, 1, dim) = x.value().block(r, k * dim, 1, dim) * (g(r, k) / yv(r, k));
    x.accumulate(d);
  });
}

Var l1_loss(const Var& pred, const Var& target, double divisor, const std::vector<double>& col_weights) {
  require_shape(same_shape(pred.value(), target.value()), "l1_loss", dims(pred.value()) + " vs " + dims(target.value()));
  require_shape(col_weights.empty() || static_cast<Eigen::Index>(col_weights.size()) == pred.cols(), "l1_loss",
                "weight count does not match the column count");
  require_shape(divisor > 0, "l1_loss", "divisor must be positive");
  Matrix w = Matrix::Ones(1, pred.cols());
  for (std::size_t i = 0; i < col_weights.size(); ++i) w(0, static_cast<Eigen::Index>(i)) = col_weights[i];
  const Matrix diff = pred.value() - target.value();
  Matrix y(1, 1);
  y(0, 0) = (diff.cwiseAbs().array().rowwise() * w.row(0).array()).sum() / divisor;
  return make_op(std::move(y), {pred, target}, [pred, target, diff, w, divisor](const Matrix& g) {
    Matrix d = diff.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
    d.array().rowwise() *= w.row(0).array();
    d *= g(0, 0) / divisor;
    if (pred.requires_grad()) pred.accumulate(d);
    if (target.requires_grad()) target.accumulate(-d);
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  require_shape(same_shape(pred.value(), target.value()), "mse_loss", dims(pred.value()) + " vs " + dims(target.value()));
  require_shape(pred.value().size() > 0, "mse_loss", "empty tensors");
  const Matrix diff = pred.value() - target.value();
  const double n = static_cast<double>(diff.size());
  Matrix y(1, 1);
  y(0, 0) = diff.squaredNorm() / n;
  return make_op(std::move(y), {pred, target}, [pred, target, diff, n](const Matrix& g) {
    const Matrix d = diff * (2.0 * g(0, 0) / n);
    if (pred.requires_grad()) pred.accumulate(d);
    if (target.requires_grad()) target.accumulate(-d);
  });
}

Var bce_loss(const Var& prob, const Var& target, double divisor) {
  require_shape(same_shape(prob.value(), target.value()), "bce_loss", dims(prob.value()) + " vs " + dims(target.value()));
  require_shape(divisor > 0, "bce_loss", "divisor must be positive");
  double total = 0.0;
  for (Eigen::Index i = 0; i < prob.value().size(); ++i) {
    const double p = prob.value().data()[i], t = target.value().data()[i];
    if (t != 0.0) total -= t * std::log(std::max(p, kBceFloor));
    if (t != 1.0) total -= (1.0 - t) * std::log(std::max(1.0 - p, kBceFloor));
  }
  Matrix y(1, 1);
  y(0, 0) = total / divisor;
  return make_op(std::move(y), {prob, target}, [prob, target, divisor](const Matrix& g) {
    Matrix dp = Matrix::Zero(prob.rows(), prob.cols());
    Matrix dt = dp;
    for (Eigen::Index i = 0; i < dp.size(); ++i) {
      const double p = prob.value().data()[i], t = target.value().data()[i];
      const double lp = std::max(p, kBceFloor), lq = std::max(1.0 - p, kBceFloor);
      if (p > kBceFloor) dp.data()[i] -= t / p;
      if (1.0 - p > kBceFloor) dp.data()[i] += (1.0 - t) / (1.0 - p);
      dt.data()[i] = -std::log(lp) + std::log(lq);
    }
    const double s = g(0, 0) / divisor;
    if (prob.requires_grad()) prob.accumulate(dp * s);
    if (target.requires_grad()) target.accumulate(dt * s);
  });
}

}  // namespace sparsecap::nn
