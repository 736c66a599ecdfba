#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "unik/error.hpp"
#include "unik/ops.hpp"
#include "unik/rng.hpp"
#include "unik/tensor.hpp"

namespace unik {

// Spatial Long-short Dependency Unit: per head, the unfolded input is mixed
// along the joint axis by (W + A) where W is a learnable, uniformly
// initialized dependency matrix and A an input-conditioned attention map,
// then embedded from C_in to C_out channels. Head outputs are summed and an
// identity/projection residual is added inside the unit.
struct SlsuConfig {
  std::size_t heads = 3;  // N
  std::size_t tau = 1;    // temporal window size
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t c_embed = 0;              // attention embedding width; 0 = max(c_out/4, 4)
  double neg_slope = 2.2360679774997896;  // a = sqrt(5) in the init bound
  bool with_attention = true;
  bool with_residual = true;

  std::size_t embed_channels() const {
    return c_embed ? c_embed : std::max<std::size_t>(c_out / 4, 4);
  }

  void validate() const {
    if (heads < 1) throw config_error("slsu: head count must be >= 1");
    if (tau < 1) throw config_error("slsu: window size must be >= 1");
    if (c_in < 1 || c_out < 1) throw config_error("slsu: channel extents must be >= 1");
  }
};

// Uniform fan-in initialization, bound = sqrt(6 / ((1 + a^2) * fan_in)).
// With a = sqrt(5) the bound reduces to 1/sqrt(fan_in).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, double a, Rng& rng) {
  if (fan_in == 0) throw config_error("init: zero fan-in");
  double bound = std::sqrt(6.0 / ((1.0 + a * a) * static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// Dependency matrix init: tauV x tauV entries i.i.d. uniform within the
// fan-in bound computed from V (not tauV).
template <typename T>
Tensor<T> init_dependency(std::size_t V, std::size_t tau, double a, Rng& rng) {
  if (V == 0) throw config_error("init_dependency: joint count must be >= 1");
  if (tau == 0) throw config_error("init_dependency: window size must be >= 1");
  return uniform_fan_in<T>({tau * V, tau * V}, V, a, rng);
}

template <typename T>
struct SlsuHead {
  Tensor<T> W;        // [tauV, tauV]
  Tensor<T> E;        // [c_out, c_in]
  Tensor<T> E_theta;  // [c_e, c_in]
  Tensor<T> E_phi;    // [c_e, c_in]
};

template <typename T>
struct SlsuParams {
  std::vector<SlsuHead<T>> heads;
  std::optional<Tensor<T>> residual_proj;  // [c_out, c_in] when c_in != c_out
};

template <typename T>
SlsuParams<T> init_slsu(const SlsuConfig& cfg, std::size_t V, Rng& rng) {
  cfg.validate();
  SlsuParams<T> p;
  std::size_t ce = cfg.embed_channels();
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    SlsuHead<T> h;
    h.W = init_dependency<T>(V, cfg.tau, cfg.neg_slope, rng);
    h.E = uniform_fan_in<T>({cfg.c_out, cfg.c_in}, cfg.c_in, cfg.neg_slope, rng);
    h.E_theta = uniform_fan_in<T>({ce, cfg.c_in}, cfg.c_in, cfg.neg_slope, rng);
    h.E_phi = uniform_fan_in<T>({ce, cfg.c_in}, cfg.c_in, cfg.neg_slope, rng);
    p.heads.push_back(std::move(h));
  }
  if (cfg.c_in != cfg.c_out && cfg.with_residual)
    p.residual_proj = uniform_fan_in<T>({cfg.c_out, cfg.c_in}, cfg.c_in, cfg.neg_slope, rng);
  return p;
}

// Sliding temporal window: for each frame t the V-joint slices of frames
// t + o, o = -floor((tau-1)/2) .. +ceil((tau-1)/2), are concatenated along the
// joint axis (stride 1, zero padding at the boundaries). tau = 1 is identity.
template <typename T>
Tensor<T> window_unfold(const Tensor<T>& x, std::size_t tau) {
  if (tau == 0) throw config_error("window_unfold: window size must be >= 1");
  if (tau == 1) return x;
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "window_unfold");
  std::size_t C = s[0], Tn = s[1], V = s[2];
  std::ptrdiff_t off0 = -static_cast<std::ptrdiff_t>((tau - 1) / 2);
  Shape os = x.shape();
  os.back() = tau * V;
  std::vector<T> out(N * C * Tn * tau * V, T(0));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* xs = x.data() + (n * C + c) * Tn * V;
      T* ys = out.data() + (n * C + c) * Tn * tau * V;
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t k = 0; k < tau; ++k) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + off0 +
                               static_cast<std::ptrdiff_t>(k);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
          const T* from = xs + static_cast<std::size_t>(src) * V;
          T* to = ys + t * tau * V + k * V;
          std::copy(from, from + V, to);
        }
    }
  auto px = x.node();
  return Tensor<T>::from_op(std::move(os), std::move(out), {px},
                            [px, N, C, Tn, V, tau, off0](auto& self) {
                              if (!px->requires_grad) return;
                              px->ensure_grad();
                              for (std::size_t n = 0; n < N; ++n)
                                for (std::size_t c = 0; c < C; ++c) {
                                  T* dxs = px->grad.data() + (n * C + c) * Tn * V;
                                  const T* gs = self.grad.data() + (n * C + c) * Tn * tau * V;
                                  for (std::size_t t = 0; t < Tn; ++t)
                                    for (std::size_t k = 0; k < tau; ++k) {
                                      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + off0 +
                                                           static_cast<std::ptrdiff_t>(k);
                                      if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn))
                                        continue;
                                      T* to = dxs + static_cast<std::size_t>(src) * V;
                                      const T* from = gs + t * tau * V + k * V;
                                      for (std::size_t v = 0; v < V; ++v) to[v] += from[v];
                                    }
                                }
                            });
}

// Reduces the windowed joint axis back to V joints by summing the tau
// per-offset blocks.
template <typename T>
Tensor<T> window_fold_sum(const Tensor<T>& x, std::size_t tau) {
  if (tau == 0) throw config_error("window_fold_sum: window size must be >= 1");
  if (tau == 1) return x;
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "window_fold_sum");
  if (s[2] % tau != 0)
    throw dim_error("window_fold_sum: joint extent not divisible by window size");
  std::size_t C = s[0], Tn = s[1], V = s[2] / tau;
  Shape os = x.shape();
  os.back() = V;
  std::vector<T> out(N * C * Tn * V, T(0));
  for (std::size_t i = 0; i < N * C * Tn; ++i) {
    const T* xs = x.data() + i * tau * V;
    T* ys = out.data() + i * V;
    for (std::size_t k = 0; k < tau; ++k)
      for (std::size_t v = 0; v < V; ++v) ys[v] += xs[k * V + v];
  }
  auto px = x.node();
  return Tensor<T>::from_op(std::move(os), std::move(out), {px},
                            [px, N, C, Tn, V, tau](auto& self) {
                              if (!px->requires_grad) return;
                              px->ensure_grad();
                              for (std::size_t i = 0; i < N * C * Tn; ++i) {
                                T* dxs = px->grad.data() + i * tau * V;
                                const T* gs = self.grad.data() + i * V;
                                for (std::size_t k = 0; k < tau; ++k)
                                  for (std::size_t v = 0; v < V; ++v) dxs[k * V + v] += gs[v];
                              }
                            });
}

// Non-local self-attention map over the unfolded input u [(N,)C,T,tauV]:
//   A = softmax_rows( reshape(E_theta u -> tauV x C_eT) x
//                     reshape(E_phi   u -> C_eT x tauV) )
// Every row sums to 1; a zero input yields the uniform map.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& u, const SlsuHead<T>& head) {
  Tensor<T> theta = pointwise_embed(u, head.E_theta);
  Tensor<T> phi = pointwise_embed(u, head.E_phi);
  if (u.rank() == 3) {
    std::size_t ce = theta.extent(0), Tn = theta.extent(1), S = theta.extent(2);
    Tensor<T> th = reshape(permute(theta, {2, 0, 1}), {S, ce * Tn});
    Tensor<T> ph = reshape(phi, {ce * Tn, S});
    return softmax_rows(matmul(th, ph));
  }
  std::size_t N = theta.extent(0), ce = theta.extent(1), Tn = theta.extent(2),
              S = theta.extent(3);
  Tensor<T> th = reshape(permute(theta, {0, 3, 1, 2}), {N, S, ce * Tn});
  Tensor<T> ph = reshape(phi, {N, ce * Tn, S});
  return softmax_rows(bmm(th, ph));
}

// Multi-head S-LSU forward, x [(N,)C_in,T,V] -> [(N,)C_out,T,V].
template <typename T>
Tensor<T> slsu_forward(const Tensor<T>& x, const SlsuConfig& cfg, const SlsuParams<T>& params) {
  cfg.validate();
  if (params.heads.size() != cfg.heads)
    throw dim_error("slsu: expected " + std::to_string(cfg.heads) + " heads, got " +
                    std::to_string(params.heads.size()));
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "slsu");
  if (s[0] != cfg.c_in)
    throw dim_error("slsu: input channels " + std::to_string(s[0]) + " != configured " +
                    std::to_string(cfg.c_in));
  std::size_t V = s[2], S = cfg.tau * V;
  Tensor<T> u = window_unfold(x, cfg.tau);

  Tensor<T> acc;
  bool first = true;
  for (const SlsuHead<T>& head : params.heads) {
    if (head.W.rank() != 2 || head.W.extent(0) != S || head.W.extent(1) != S)
      throw dim_error("slsu: dependency matrix " + shape_str(head.W.shape()) +
                      " does not match tauV = " + std::to_string(S));
    Tensor<T> mixed;
    if (cfg.with_attention) {
      Tensor<T> a = attention_map(u, head);
      mixed = spatial_mix(u, add(a, head.W));
    } else {
      mixed = spatial_mix(u, head.W);
    }
    Tensor<T> folded = window_fold_sum(mixed, cfg.tau);
    Tensor<T> y = pointwise_embed(folded, head.E);
    acc = first ? y : add(acc, y);
    first = false;
  }

  if (cfg.with_residual) {
    if (cfg.c_in == cfg.c_out) {
      acc = add(acc, x);
    } else {
      if (!params.residual_proj)
        throw dim_error("slsu: missing residual projection for channel change");
      acc = add(acc, pointwise_embed(x, *params.residual_proj));
    }
  }
  return acc;
}

}  // namespace unik
