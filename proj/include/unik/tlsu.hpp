#pragma once

#include <cstddef>

#include "unik/error.hpp"
#include "unik/ops.hpp"
#include "unik/tensor.hpp"

namespace unik {

// Temporal Long-short Dependency Unit: one dilated (t x 1) convolution along
// the frame axis, channels preserved. The dilation coefficient varies per
// block to cover multi-scale temporal dependencies.
struct TlsuConfig {
  std::size_t channels = 0;
  std::size_t kernel_t = 9;
  std::size_t dilation = 1;
  std::size_t stride = 1;

  void validate() const {
    if (channels < 1) throw config_error("tlsu: channels must be >= 1");
    if (kernel_t % 2 == 0)
      throw config_error("tlsu: kernel size must be odd, got " + std::to_string(kernel_t));
    if (dilation < 1) throw config_error("tlsu: dilation must be >= 1");
    if (stride != 1 && stride != 2) throw config_error("tlsu: stride must be 1 or 2");
  }

  std::size_t receptive_field() const { return (kernel_t - 1) * dilation + 1; }
};

// x [(N,)C,T,V] -> [(N,)C,ceil(T/stride),V].
template <typename T>
Tensor<T> tlsu_forward(const Tensor<T>& x, const TlsuConfig& cfg, const Tensor<T>& w) {
  cfg.validate();
  if (w.rank() != 4 || w.extent(0) != cfg.channels || w.extent(1) != cfg.channels ||
      w.extent(2) != cfg.kernel_t || w.extent(3) != 1)
    throw dim_error("tlsu: weight " + shape_str(w.shape()) + " does not match config");
  return temporal_conv(x, w, cfg.dilation, cfg.stride);
}

}  // namespace unik
