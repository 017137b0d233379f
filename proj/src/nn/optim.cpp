#include "sparsecap/nn/optim.hpp"

#include <cmath>

#include "sparsecap/errors.hpp"

namespace sparsecap::nn {

AdamW::AdamW(ParameterSet params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_.items()) {
    m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void AdamW::step() {
  const auto& items = params_.items();
  for (const auto& p : items) {
    if (!p.var.grad().allFinite()) throw NumericalError("non-finite gradient for parameter '" + p.name + "'");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, steps_);
  const double c2 = 1.0 - std::pow(options_.beta2, steps_);
  const double decay = 1.0 - options_.lr * options_.weight_decay;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var var = items[i].var;
    const Matrix& g = var.grad();
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    Matrix& w = var.mutable_value();
    if (options_.weight_decay != 0.0) w *= decay;
    w.array() -= options_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

}  // namespace sparsecap::nn
