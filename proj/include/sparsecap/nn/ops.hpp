#pragma once

#include <vector>

#include "sparsecap/nn/kernels.hpp"
#include "sparsecap/nn/tensor.hpp"

namespace sparsecap {
class SkeletonModel;
}

namespace sparsecap::nn {

/// op(a) * op(b) through the active GEMM backend.
Matrix matmul_values(const Matrix& a, Trans ta, const Matrix& b, Trans tb);

Var matmul(const Var& a, const Var& b);
/// x W + b with W of shape in x out and b of shape 1 x out (b may be undefined).
Var linear(const Var& x, const Var& w, const Var& b);
/// Adds a 1 x cols row to every row.
Var add_row(const Var& x, const Var& row);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Element-wise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

/// 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(const Var& x);
Var sigmoid(const Var& x);
/// Gradient passes only where lo < x < hi.
Var clamp(const Var& x, double lo, double hi);
Var softmax_rows(const Var& x);
/// Per-row normalization over the columns, then gamma * xhat + beta (1 x cols each).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Scaled dot-product attention. q, k, v are (blocks * seq_len) x d; each
/// block of seq_len rows attends only within itself; d splits into `heads`.
Var attention(const Var& q, const Var& k, const Var& v, int heads, int seq_len);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, int start, int count);
Var slice_rows(const Var& x, int start, int count);
Var gather_cols(const Var& x, const std::vector<int>& columns);

/// Per-block time derivative (rows are frames, blocks of seq_len rows):
/// central differences inside, one-sided at both ends, times the rate.
Var time_derivative(const Var& x, int seq_len, double rate);

/// Temporal convolution over rows. x is T x Cin, w is Cout x (K * Cin) with
/// column index k * Cin + c, b is 1 x Cout. Output length (T + 2 pad - K) / stride + 1.
Var conv1d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad);
/// Adjoint of conv1d in the input. x is Tin x Cin, w is Cin x (K * Cout), b is
/// 1 x Cout. Output length (Tin - 1) stride - 2 pad + K + output_padding.
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad, int output_padding);

/// Each group of 6 columns (two matrix columns) becomes 9 columns holding the
/// Gram-Schmidt rotation matrix in row-major order.
Var rot6d_to_matrix(const Var& x);
/// Global joint positions. root is R x 3, rotations R x 9J (row-major 3x3,
/// joint 0 global, others parent-local). Output R x 3J.
Var fk_positions(const Var& root, const Var& rotations, const SkeletonModel& skeleton);
/// Euclidean norm of each consecutive group of `dim` columns.
Var group_norms(const Var& x, int dim);

/// sum_ij w_j |a - b| / divisor; empty weights mean 1.
Var l1_loss(const Var& pred, const Var& target, double divisor, const std::vector<double>& col_weights = {});
/// Mean squared error over all entries.
Var mse_loss(const Var& pred, const Var& target);
/// -sum [y log(max(p, 1e-7)) + (1 - y) log(max(1 - p, 1e-7))] / divisor.
Var bce_loss(const Var& prob, const Var& target, double divisor);

inline constexpr double kBceFloor = 1e-7;

}  // namespace sparsecap::nn
