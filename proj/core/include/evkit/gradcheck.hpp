#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace evkit {

inline constexpr double kGradCheckStep = 1e-6;

/*
 * Relative error of a gradient tensor in the max norm:
 *   max_i |a_i - n_i| / max_i max(|a_i|, |n_i|)
 * Judging each entry against the tensor's own scale keeps entries near zero
 * from being swamped by finite-difference roundoff (about eps * |f| / h).
 */
struct GradCheck
{
  double max_abs_diff = 0.0;
  double scale = 0.0;
  std::size_t worst = 0;
  std::size_t checked = 0;

  double rel_error() const { return scale > 0.0 ? max_abs_diff / scale : max_abs_diff; }
};

/// (f(x + h) - f(x - h)) / 2h, restoring x afterwards.
template <class F>
double central_difference(F&& f, double& x, double h = kGradCheckStep)
{
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline GradCheck compare_gradients(std::span<const double> analytic, std::span<const double> numeric)
{
  GradCheck r;
  const std::size_t n = std::min(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    if (d > r.max_abs_diff) {
      r.max_abs_diff = d;
      r.worst = i;
    }
    r.scale = std::max({r.scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  r.checked = n;
  return r;
}

} // namespace evkit
