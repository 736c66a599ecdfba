#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unik/tensor.hpp"

namespace unik {

// Central-finite-difference verification of reverse-mode gradients.
//
// f must be scalar-valued and rebuild its graph on every call (it is invoked
// 2*numel(x) + 1 times with x mutated in place). Returns the max over elements
// of |analytic - cd| / max(|analytic|, |cd|, 1e-12).
template <typename T>
T grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T>& x,
             T eps = T(1e-5)) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = f(x);
  y.backward();
  std::vector<T> analytic = x.grad();

  T worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    T saved = x.data()[i];
    x.data()[i] = saved + eps;
    T up = f(x).item();
    x.data()[i] = saved - eps;
    T down = f(x).item();
    x.data()[i] = saved;
    T cd = (up - down) / (2 * eps);
    T denom = std::max({std::abs(analytic[i]), std::abs(cd), T(1e-12)});
    worst = std::max(worst, std::abs(analytic[i] - cd) / denom);
  }
  return worst;
}

}  // namespace unik
