#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sparsecap/nn/layers.hpp"

namespace sparsecap::nn {

/// |a - n| / max(|a|, |n|, floor) with Euclidean norms.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// Input index or parameter name with the largest error.
  std::string worst;
};

/// Compares reverse-mode gradients of a scalar function of the inputs with
/// central finite differences of step eps.
GradCheckResult gradient_check(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Matrix>& inputs,
                               double eps = 1e-5);

/// Same for the parameters of a model; loss() rebuilds the graph each call.
/// Parameters with more than max_entries entries are probed at evenly spaced
/// entries.
GradCheckResult gradient_check_parameters(const std::function<Var()>& loss, const ParameterSet& params,
                                          double eps = 1e-5, int max_entries = 24);

}  // namespace sparsecap::nn
