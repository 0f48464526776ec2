#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sarpf/tensor.hpp"

namespace sarpf {

/// A scalar function of a list of parameter tensors together with its
/// analytic gradient (one tensor per parameter, same shapes).
struct DifferentiableFn {
  std::function<double(std::span<const Tensor4>)> value;
  std::function<std::vector<Tensor4>(std::span<const Tensor4>)> gradient;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t param = 0;  // parameter tensor holding the worst entry
  std::size_t index = 0;  // flat index of the worst entry
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
};

/// Error of one gradient entry relative to the largest magnitude in its
/// tensor (analytic or numeric); absolute when that scale is below 1e-8.
inline double gradient_error(double analytic, double numeric, double scale) {
  const double diff = std::abs(analytic - numeric);
  if (scale < 1e-8) return diff;
  return diff / scale;
}

/// Compares the analytic gradient with central differences
/// (f(p + eps) - f(p - eps)) / 2eps for every entry of every parameter.
inline GradCheckResult grad_check_detailed(const DifferentiableFn& f, std::vector<Tensor4> params, double eps) {
  if (!(eps > 0)) throw ContractError("grad_check: epsilon must be positive");
  auto eval = [&](std::span<const Tensor4> p) {
    const double v = f.value(p);
    if (!std::isfinite(v)) throw EvaluationError("grad_check: objective is not finite");
    return v;
  };
  eval(params);
  const std::vector<Tensor4> analytic = f.gradient(params);
  if (analytic.size() != params.size()) throw ShapeError("grad_check: gradient count differs from parameter count");

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!(analytic[p].shape() == params[p].shape())) {
      throw ShapeError("grad_check: gradient " + std::to_string(p) + " has shape " + analytic[p].shape().str());
    }
    Tensor4 numeric(params[p].shape());
    double scale = 0.0;
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = eval(params);
      params[p][i] = saved - eps;
      const double down = eval(params);
      params[p][i] = saved;
      numeric[i] = (up - down) / (2.0 * eps);
      scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[p][i])});
    }
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double err = gradient_error(analytic[p][i], numeric[i], scale);
      ++result.entries;
      if (err > result.max_error || result.entries == 1) {
        result.max_error = err;
        result.param = p;
        result.index = i;
        result.analytic = analytic[p][i];
        result.numeric = numeric[i];
      }
    }
  }
  return result;
}

inline double grad_check(const DifferentiableFn& f, std::vector<Tensor4> params, double eps) {
  return grad_check_detailed(f, std::move(params), eps).max_error;
}

}  // namespace sarpf
