#pragma once

#include <cstddef>
#include <vector>

#include "unik/rng.hpp"
#include "unik/tensor.hpp"

namespace testutil {

template <typename T>
unik::Tensor<T> random_tensor(unik::Shape shape, unik::Rng& rng, T lo = T(-1), T hi = T(1)) {
  unik::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

// Keeps values away from zero so relu kinks do not poison finite differences.
template <typename T>
unik::Tensor<T> random_tensor_offset(unik::Shape shape, unik::Rng& rng, T margin = T(0.2)) {
  unik::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    double u = rng.uniform(static_cast<double>(margin), 1.0);
    t.data()[i] = static_cast<T>(rng.uniform() < 0.5 ? -u : u);
  }
  return t;
}

// Reference oracles, independent of the library's compute path.
template <typename T>
std::vector<T> naive_matmul(const std::vector<T>& a, const std::vector<T>& b, std::size_t m,
                            std::size_t k, std::size_t n) {
  std::vector<T> c(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Direct same-padded dilated 1-D convolution along T for a single channel.
template <typename T>
std::vector<T> naive_conv1d(const std::vector<T>& x, const std::vector<T>& kernel,
                            std::size_t dilation, std::size_t stride) {
  std::size_t t = kernel.size();
  std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((t - 1) * dilation / 2);
  std::size_t tout = (x.size() + stride - 1) / stride;
  std::vector<T> y(tout, T(0));
  for (std::size_t to = 0; to < tout; ++to)
    for (std::size_t k = 0; k < t; ++k) {
      std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride) - pad +
                          static_cast<std::ptrdiff_t>(k * dilation);
      if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(x.size()))
        y[to] += kernel[k] * x[static_cast<std::size_t>(ti)];
    }
  return y;
}

}  // namespace testutil
