#include <unordered_set>

#include "sparsecap/errors.hpp"
#include "sparsecap/nn/tensor.hpp"

namespace sparsecap::nn {

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Matrix& Var::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

double Var::item() const {
  if (node_->value.size() != 1) throw ValidationError("item(): tensor is not 1 x 1");
  return node_->value(0, 0);
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Var::accumulate(const Matrix& g) const {
  if (node_ && node_->requires_grad) node_->accumulate(g);
}

Var make_op(Matrix value, const std::vector<Var>& inputs, std::function<void(const Matrix&)> backward) {
  Var out(std::move(value), false);
  bool needs = false;
  for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    const auto& node = out.node();
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.requires_grad()) node->inputs.push_back(v.node());
    }
  }
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) throw ValidationError("backward: loss must be a 1 x 1 tensor");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad);
  }
}

void require_shape(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ValidationError(std::string(op) + ": " + detail);
}

}  // namespace sparsecap::nn
