#pragma once

// Central finite-difference gradient checking. The numeric side never touches
// the tape, so it stays an independent oracle for the analytic path.

#include <limits>

#include "padl/ops.hpp"

namespace padl {

// Maximum over entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// A non-finite function value anywhere reports infinity.
template <typename Fn>
double grad_check(Fn&& f, Tensor& x, float eps = 1e-3f) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor loss = f(x);
  if (loss.numel() != 1) throw std::logic_error("grad_check: f must return a scalar");
  if (!std::isfinite(loss.item())) return std::numeric_limits<double>::infinity();
  backward(loss);
  std::vector<float> analytic = x.grad();
  if (analytic.size() != x.numel()) analytic.assign(x.numel(), 0.0f);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float saved = x.data()[i];
    NoGradGuard off;
    x.data()[i] = saved + eps;
    const double up = f(x).item();
    x.data()[i] = saved - eps;
    const double down = f(x).item();
    x.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      return std::numeric_limits<double>::infinity();
    const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
    const double denom = std::max({std::abs(static_cast<double>(analytic[i])),
                                   std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace padl
