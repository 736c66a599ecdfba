#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "unik/error.hpp"
#include "unik/tensor.hpp"

namespace unik {

// SGD with classical (coupled) L2 weight decay:
//   g <- grad + weight_decay * w;  v <- momentum * v + g;  w <- w - lr * v
// Momentum buffers are created zero-initialized on the first step. The step
// schedule multiplies the base rate once per passed boundary, so the rate
// after k schedule steps is lr0 * (product of the first k multipliers).
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, T lr, T momentum = T(0), T weight_decay = T(0),
      std::vector<std::pair<std::size_t, T>> schedule = {})
      : params_(std::move(params)),
        lr0_(lr),
        lr_(lr),
        momentum_(momentum),
        weight_decay_(weight_decay),
        schedule_(std::move(schedule)) {
    velocity_.resize(params_.size());
  }

  T lr() const { return lr_; }

  // Applies the step schedule for a (0-based) epoch index.
  void set_epoch(std::size_t epoch) {
    T m = T(1);
    for (const auto& [boundary, mult] : schedule_)
      if (boundary <= epoch) m *= mult;
    lr_ = lr0_ * m;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      if (!p.has_grad())
        throw config_error("sgd_step: parameter " + std::to_string(i) + " has no gradient");
      const std::vector<T>& g = p.grad();
      T* w = p.data();
      if (momentum_ != T(0)) {
        if (velocity_[i].size() != p.size()) velocity_[i].assign(p.size(), T(0));
        T* v = velocity_[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
          T gk = g[k] + weight_decay_ * w[k];
          v[k] = momentum_ * v[k] + gk;
          w[k] -= lr_ * v[k];
        }
      } else {
        for (std::size_t k = 0; k < p.size(); ++k) w[k] -= lr_ * (g[k] + weight_decay_ * w[k]);
      }
    }
  }

  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  T lr0_, lr_, momentum_, weight_decay_;
  std::vector<std::pair<std::size_t, T>> schedule_;
};

// Closed form used by the trainer and verified against Sgd::set_epoch.
template <typename T>
T step_decay_lr(T lr0, T factor, const std::vector<std::size_t>& decay_epochs, std::size_t epoch) {
  T lr = lr0;
  for (std::size_t d : decay_epochs)
    if (d <= epoch) lr *= factor;
  return lr;
}

}  // namespace unik
