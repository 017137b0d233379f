#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sparsecap::nn {

/// All tensors are 2D, row-major, double precision. Sequences are laid out as
/// rows (time or batch*time) by columns (features/channels).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  /// Same shape as value once allocated; empty until something flows into it.
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  /// Receives d(loss)/d(value) and accumulates into the inputs' gradients.
  std::function<void(const Matrix&)> backward;

  void accumulate(const Matrix& g);
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  static Var constant(Matrix value) { return Var(std::move(value), false); }
  static Var parameter(Matrix value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers and checkpoint loading.
  Matrix& mutable_value() { return node_->value; }
  /// Gradient buffer; a zero matrix of the value's shape when nothing accumulated.
  const Matrix& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  void zero_grad();
  /// Adds g to this node's gradient if it takes part in differentiation.
  void accumulate(const Matrix& g) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an op result. The backward closure is kept only when some input
/// requires a gradient, so inference builds no tape.
Var make_op(Matrix value, const std::vector<Var>& inputs, std::function<void(const Matrix&)> backward);

/// Reverse sweep from a 1 x 1 loss; gradients accumulate into every reachable
/// node that requires one.
void backward(const Var& loss);

/// Throws ValidationError naming `op` when the condition fails.
void require_shape(bool ok, const char* op, const std::string& detail);

}  // namespace sparsecap::nn
