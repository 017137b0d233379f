#include "sparsecap/nn/gradcheck.hpp"

#include <algorithm>

namespace sparsecap::nn {

double relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  const double denom = std::max({analytic.norm(), numeric.norm(), floor});
  return (analytic - numeric).norm() / denom;
}

GradCheckResult gradient_check(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Matrix>& inputs,
                               double eps) {
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(Var::parameter(m));
  backward(f(vars));

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix numeric(inputs[i].rows(), inputs[i].cols());
    for (Eigen::Index e = 0; e < inputs[i].size(); ++e) {
      auto eval = [&](double delta) {
        std::vector<Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Matrix m = inputs[j];
          if (j == i) m.data()[e] += delta;
          probe.push_back(Var::constant(std::move(m)));
        }
        return f(probe).item();
      };
      numeric.data()[e] = (eval(eps) - eval(-eps)) / (2 * eps);
    }
    const double err = relative_error(vars[i].grad(), numeric);
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = "input " + std::to_string(i);
    }
  }
  return result;
}

GradCheckResult gradient_check_parameters(const std::function<Var()>& loss, const ParameterSet& params, double eps,
                                          int max_entries) {
  params.zero_grad();
  backward(loss());

  GradCheckResult result;
  for (const auto& p : params.items()) {
    Var var = p.var;
    const Eigen::Index n = var.value().size();
    const Eigen::Index count = std::min<Eigen::Index>(n, max_entries);
    Matrix analytic(1, count), numeric(1, count);
    for (Eigen::Index s = 0; s < count; ++s) {
      const Eigen::Index e = count == n ? s : (s * n) / count + (n / count) / 2;
      analytic(0, s) = var.grad().data()[e];
      double* x = var.mutable_value().data() + e;
      const double orig = *x;
      *x = orig + eps;
      const double up = loss().item();
      *x = orig - eps;
      const double down = loss().item();
      *x = orig;
      numeric(0, s) = (up - down) / (2 * eps);
    }
    const double err = relative_error(analytic, numeric);
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = p.name;
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace sparsecap::nn
