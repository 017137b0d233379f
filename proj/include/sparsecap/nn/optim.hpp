#pragma once

#include <vector>

#include "sparsecap/nn/layers.hpp"

namespace sparsecap::nn {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd), then the bias-corrected Adam step.
class AdamW {
 public:
  explicit AdamW(ParameterSet params, AdamWOptions options = {});

  /// Applies one update from the accumulated gradients. Throws NumericalError
  /// (before touching any parameter) if a gradient is not finite.
  void step();
  void zero_grad() { params_.zero_grad(); }

  int step_count() const { return steps_; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  const ParameterSet& params() const { return params_; }
  const Matrix& first_moment(std::size_t i) const { return m_[i]; }
  const Matrix& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParameterSet params_;
  AdamWOptions options_;
  std::vector<Matrix> m_, v_;
  int steps_ = 0;
};

}  // namespace sparsecap::nn
