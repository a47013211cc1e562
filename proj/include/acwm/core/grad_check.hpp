// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "acwm/core/error.hpp"
#include "acwm/core/tensor.hpp"

namespace acwm {

/// Largest relative disagreement between reverse-mode gradients of a scalar
/// function and a fourth-order five-point central difference:
///   max_i |analytic_i - numeric_i| / max(floor, |analytic_i| + |numeric_i|)
/// Raising the floor keeps entries that are zero up to round-off from dominating.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                         double eps = 1e-4, double floor = 1e-12) {
  auto eval = [&](const std::vector<double>& values) {
    auto leaf = Tensor<double>::constant(x.shape(), values);
    const double y = f(leaf).item();
    if (!std::isfinite(y)) throw NumericError("grad_check: function returned a non-finite value");
    return y;
  };

  auto leaf = Tensor<double>::parameter(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  auto y = f(leaf);
  if (!std::isfinite(y.item())) throw NumericError("grad_check: function returned a non-finite value");
  y.backward();
  const auto analytic = leaf.grad();

  std::vector<double> probe(x.values().begin(), x.values().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    auto at = [&](double h) {
      probe[i] = orig + h;
      return eval(probe);
    };
    const double d1 = at(eps) - at(-eps), d2 = at(2 * eps) - at(-2 * eps);
    probe[i] = orig;
    const double numeric = (8.0 * d1 - d2) / (12.0 * eps);
    if (!std::isfinite(analytic[i])) throw NumericError("grad_check: non-finite analytic gradient");
    const double denom = std::max(floor, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace acwm
