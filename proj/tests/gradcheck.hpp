#pragma once

// Central finite-difference oracle for the autodiff core. Independent of the
// backward closures: it only ever calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fast/rng.hpp"
#include "fast/tensor.hpp"

namespace fast::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8),
/// worst case over all inputs.
inline double gradcheck(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Tensor loss = f(inputs);
  backward(loss);

  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.size());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      double up, down;
      {
        NoGradGuard ng;
        d[i] = saved + h;
        up = f(inputs).item();
        d[i] = saved - h;
        down = f(inputs).item();
      }
      d[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(r, c, std::move(v));
}

}  // namespace fast::testing
