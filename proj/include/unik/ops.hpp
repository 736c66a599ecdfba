#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "unik/error.hpp"
#include "unik/tensor.hpp"

namespace unik {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const EMat<T>>;

template <typename T>
CMatMap<T> as_mat(const std::vector<T>& v, std::size_t rows, std::size_t cols,
                  std::size_t off = 0) {
  return CMatMap<T>(v.data() + off, rows, cols);
}

template <typename T>
MatMap<T> as_mat(std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t off = 0) {
  return MatMap<T>(v.data() + off, rows, cols);
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Folds an optional leading batch axis: rank-r input is one sample, rank-(r+1)
// is a batch of samples.
inline void split_batch(const Shape& s, std::size_t sample_rank, std::size_t& batch, Shape& sample,
                        const std::string& op) {
  if (s.size() == sample_rank) {
    batch = 1;
    sample = s;
  } else if (s.size() == sample_rank + 1) {
    batch = s[0];
    sample.assign(s.begin() + 1, s.end());
  } else {
    throw dim_error(op + ": expected rank " + std::to_string(sample_rank) + " or " +
                    std::to_string(sample_rank + 1) + " input, got " + shape_str(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

// a + b. b's shape must equal a's or be a suffix of it (broadcast over the
// leading axes, used for adding a shared matrix to a batch of matrices).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() ||
      !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size())))
    throw dim_error("add: shape " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  std::size_t bn = shape_numel(sb);
  std::size_t reps = a.size() / std::max<std::size_t>(bn, 1);
  std::vector<T> out = a.values();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < bn; ++i) out[r * bn + i] += b.data()[i];

  auto pa = a.node();
  auto pb = b.node();
  return Tensor<T>::from_op(sa, std::move(out), {pa, pb}, [pa, pb, reps, bn](auto& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < bn; ++i) pb->grad[i] += self.grad[r * bn + i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw dim_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.node();
  auto pb = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](auto& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto pa = a.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {pa}, [pa, c](auto& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto pa = a.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {pa}, [pa](auto& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa->value[i] > T(0)) pa->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  auto pa = a.node();
  return Tensor<T>::from_op({1}, {s}, {pa}, [pa](auto& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw dim_error("mean_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1, c = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os = {1};
  std::vector<T> out(outer * inner, T(0));
  const T* x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * c + k) * inner + i];
  T invc = T(1) / static_cast<T>(c);
  for (T& v : out) v *= invc;
  auto pa = a.node();
  return Tensor<T>::from_op(os, std::move(out), {pa}, [pa, outer, inner, c, invc](auto& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          pa->grad[(o * c + k) * inner + i] += self.grad[o * inner + i] * invc;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw dim_error("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                    " changes element count");
  auto pa = a.node();
  return Tensor<T>::from_op(std::move(shape), a.values(), {pa}, [pa](auto& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw dim_error("permute: rank mismatch for " + shape_str(s));
  Shape os(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) os[i] = s.at(perm[i]);
  auto in_strides = detail::row_major_strides(s);
  // For output flat index -> input flat index.
  std::vector<std::size_t> gather_strides(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) gather_strides[i] = in_strides[perm[i]];
  std::size_t n = a.size();
  std::vector<T> out(n);
  std::vector<std::size_t> idx(os.size(), 0);
  std::vector<std::size_t> src_of(n);
  std::size_t src = 0;
  for (std::size_t f = 0; f < n; ++f) {
    out[f] = a.data()[src];
    src_of[f] = src;
    for (std::size_t ax = os.size(); ax-- > 0;) {
      ++idx[ax];
      src += gather_strides[ax];
      if (idx[ax] < os[ax]) break;
      src -= gather_strides[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  auto pa = a.node();
  return Tensor<T>::from_op(std::move(os), std::move(out), {pa},
                            [pa, src_of = std::move(src_of)](auto& self) {
                              if (!pa->requires_grad) return;
                              pa->ensure_grad();
                              for (std::size_t f = 0; f < self.grad.size(); ++f)
                                pa->grad[src_of[f]] += self.grad[f];
                            });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw dim_error("matmul: expected two rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
  std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2)
    throw dim_error("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  std::vector<T> out(m * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.values(), m, k) * detail::as_mat(b.values(), k, n);
  auto pa = a.node();
  auto pb = b.node();
  return Tensor<T>::from_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](auto& self) {
    auto g = detail::as_mat(self.grad, m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      detail::as_mat(pa->grad, m, k).noalias() += g * detail::as_mat(pb->value, k, n).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      detail::as_mat(pb->grad, k, n).noalias() += detail::as_mat(pa->value, m, k).transpose() * g;
    }
  });
}

// Batched matrix product: [N,m,k] x [N,k,n] -> [N,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1))
    throw dim_error("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  std::size_t N = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  std::vector<T> out(N * m * n);
  for (std::size_t i = 0; i < N; ++i)
    detail::as_mat(out, m, n, i * m * n).noalias() = detail::as_mat(a.values(), m, k, i * m * k) *
                                                     detail::as_mat(b.values(), k, n, i * k * n);
  auto pa = a.node();
  auto pb = b.node();
  return Tensor<T>::from_op({N, m, n}, std::move(out), {pa, pb}, [pa, pb, N, m, k, n](auto& self) {
    for (std::size_t i = 0; i < N; ++i) {
      auto g = detail::as_mat(self.grad, m, n, i * m * n);
      if (pa->requires_grad) {
        pa->ensure_grad();
        detail::as_mat(pa->grad, m, k, i * m * k).noalias() +=
            g * detail::as_mat(pb->value, k, n, i * k * n).transpose();
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        detail::as_mat(pb->grad, k, n, i * k * n).noalias() +=
            detail::as_mat(pa->value, m, k, i * m * k).transpose() * g;
      }
    }
  });
}

// Fully connected layer: x [B,F], w [O,F], bias [O] -> [B,O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || bias.rank() != 1 || x.extent(1) != w.extent(1) ||
      bias.extent(0) != w.extent(0))
    throw dim_error("linear: incompatible shapes x" + shape_str(x.shape()) + " w" +
                    shape_str(w.shape()) + " b" + shape_str(bias.shape()));
  std::size_t B = x.extent(0), F = x.extent(1), O = w.extent(0);
  // Row-wise dot products keep a sample's logits bitwise independent of the
  // batch it is evaluated in.
  std::vector<T> out(B * O);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      T acc = bias.data()[o];
      const T* xr = x.data() + b * F;
      const T* wr = w.data() + o * F;
      for (std::size_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
      out[b * O + o] = acc;
    }
  auto px = x.node();
  auto pw = w.node();
  auto pb = bias.node();
  return Tensor<T>::from_op({B, O}, std::move(out), {px, pw, pb}, [px, pw, pb, B, F, O](auto& self) {
    auto g = detail::as_mat(self.grad, B, O);
    if (px->requires_grad) {
      px->ensure_grad();
      detail::as_mat(px->grad, B, F).noalias() += g * detail::as_mat(pw->value, O, F);
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      detail::as_mat(pw->grad, O, F).noalias() +=
          g.transpose() * detail::as_mat(px->value, B, F);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) pb->grad[o] += self.grad[b * O + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Network building ops
// ---------------------------------------------------------------------------

// 1x1 channel mixing: x [(N,)C_in,T,S], w [C_out,C_in] -> [(N,)C_out,T,S].
// Bias-free; the following batch normalization supplies any shift.
template <typename T>
Tensor<T> pointwise_embed(const Tensor<T>& x, const Tensor<T>& w) {
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "pointwise_embed");
  if (w.rank() != 2 || w.extent(1) != s[0])
    throw dim_error("pointwise_embed: weight " + shape_str(w.shape()) +
                    " does not match input channels of " + shape_str(x.shape()));
  std::size_t Cin = s[0], TS = s[1] * s[2], Cout = w.extent(0);
  Shape os = x.shape();
  os[os.size() - 3] = Cout;
  std::vector<T> out(N * Cout * TS);
  for (std::size_t i = 0; i < N; ++i)
    detail::as_mat(out, Cout, TS, i * Cout * TS).noalias() =
        detail::as_mat(w.values(), Cout, Cin) * detail::as_mat(x.values(), Cin, TS, i * Cin * TS);
  auto px = x.node();
  auto pw = w.node();
  return Tensor<T>::from_op(std::move(os), std::move(out), {px, pw},
                            [px, pw, N, Cin, Cout, TS](auto& self) {
                              for (std::size_t i = 0; i < N; ++i) {
                                auto g = detail::as_mat(self.grad, Cout, TS, i * Cout * TS);
                                if (pw->requires_grad) {
                                  pw->ensure_grad();
                                  detail::as_mat(pw->grad, Cout, Cin).noalias() +=
                                      g * detail::as_mat(px->value, Cin, TS, i * Cin * TS)
                                              .transpose();
                                }
                                if (px->requires_grad) {
                                  px->ensure_grad();
                                  detail::as_mat(px->grad, Cin, TS, i * Cin * TS).noalias() +=
                                      detail::as_mat(pw->value, Cout, Cin).transpose() * g;
                                }
                              }
                            });
}

// Mixes the joint axis: x [(N,)C,T,S] times m. m is either a shared [S,S]
// matrix or a per-sample [N,S,S] stack: y[..,t,j'] = sum_j x[..,t,j]*m[j,j'].
template <typename T>
Tensor<T> spatial_mix(const Tensor<T>& x, const Tensor<T>& m) {
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "spatial_mix");
  std::size_t S = s[2], CT = s[0] * s[1];
  bool per_sample = m.rank() == 3;
  if (per_sample ? (m.extent(0) != N || m.extent(1) != S || m.extent(2) != S)
                 : (m.rank() != 2 || m.extent(0) != S || m.extent(1) != S))
    throw dim_error("spatial_mix: matrix " + shape_str(m.shape()) + " does not fit input " +
                    shape_str(x.shape()));
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < N; ++i)
    detail::as_mat(out, CT, S, i * CT * S).noalias() =
        detail::as_mat(x.values(), CT, S, i * CT * S) *
        detail::as_mat(m.values(), S, S, per_sample ? i * S * S : 0);
  auto px = x.node();
  auto pm = m.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {px, pm},
                            [px, pm, N, CT, S, per_sample](auto& self) {
                              for (std::size_t i = 0; i < N; ++i) {
                                auto g = detail::as_mat(self.grad, CT, S, i * CT * S);
                                std::size_t moff = per_sample ? i * S * S : 0;
                                if (px->requires_grad) {
                                  px->ensure_grad();
                                  detail::as_mat(px->grad, CT, S, i * CT * S).noalias() +=
                                      g * detail::as_mat(pm->value, S, S, moff).transpose();
                                }
                                if (pm->requires_grad) {
                                  pm->ensure_grad();
                                  detail::as_mat(pm->grad, S, S, moff).noalias() +=
                                      detail::as_mat(px->value, CT, S, i * CT * S).transpose() * g;
                                }
                              }
                            });
}

// Dilated temporal convolution: x [(N,)C_in,T,V], w [C_out,C_in,t,1].
// Zero padding ((t-1)*d)/2 along T gives T' = ceil(T/stride); the kernel has
// width 1 on the joint axis.
template <typename T>
Tensor<T> temporal_conv(const Tensor<T>& x, const Tensor<T>& w, std::size_t dilation,
                        std::size_t stride) {
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "temporal_conv");
  if (w.rank() != 4 || w.extent(3) != 1)
    throw dim_error("temporal_conv: weight must be [C_out,C_in,t,1], got " + shape_str(w.shape()));
  std::size_t Cin = s[0], Tin = s[1], V = s[2];
  std::size_t Cout = w.extent(0), t = w.extent(2);
  if (w.extent(1) != Cin)
    throw dim_error("temporal_conv: weight " + shape_str(w.shape()) + " does not match input " +
                    shape_str(x.shape()));
  if (t % 2 == 0) throw config_error("temporal_conv: kernel size must be odd, got " + std::to_string(t));
  if (dilation < 1) throw config_error("temporal_conv: dilation must be >= 1");
  if (stride < 1) throw config_error("temporal_conv: stride must be >= 1");
  std::size_t Tout = (Tin + stride - 1) / stride;
  if (Tout < 1) throw dim_error("temporal_conv: empty temporal output");
  std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((t - 1) * dilation / 2);

  std::size_t colrows = Cin * t, colcols = Tout * V;
  auto fill_col = [=](const std::vector<T>& xv, std::size_t n, std::vector<T>& col) {
    std::fill(col.begin(), col.end(), T(0));
    const T* xs = xv.data() + n * Cin * Tin * V;
    for (std::size_t c = 0; c < Cin; ++c)
      for (std::size_t k = 0; k < t; ++k) {
        T* crow = col.data() + (c * t + k) * colcols;
        for (std::size_t to = 0; to < Tout; ++to) {
          std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride) - pad +
                              static_cast<std::ptrdiff_t>(k * dilation);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tin)) continue;
          const T* src = xs + (c * Tin + static_cast<std::size_t>(ti)) * V;
          std::copy(src, src + V, crow + to * V);
        }
      }
  };

  std::vector<T> out(N * Cout * colcols);
  std::vector<T> col(colrows * colcols);
  for (std::size_t n = 0; n < N; ++n) {
    fill_col(x.values(), n, col);
    detail::as_mat(out, Cout, colcols, n * Cout * colcols).noalias() =
        detail::as_mat(w.values(), Cout, colrows) * detail::as_mat(col, colrows, colcols);
  }

  Shape os = x.shape();
  os[os.size() - 3] = Cout;
  os[os.size() - 2] = Tout;
  auto px = x.node();
  auto pw = w.node();
  return Tensor<T>::from_op(
      std::move(os), std::move(out), {px, pw},
      [px, pw, N, Cin, Tin, V, Cout, t, dilation, stride, Tout, pad, colrows, colcols,
       fill_col](auto& self) {
        std::vector<T> col(colrows * colcols);
        std::vector<T> dcol(colrows * colcols);
        for (std::size_t n = 0; n < N; ++n) {
          auto g = detail::as_mat(self.grad, Cout, colcols, n * Cout * colcols);
          if (pw->requires_grad) {
            pw->ensure_grad();
            fill_col(px->value, n, col);
            detail::as_mat(pw->grad, Cout, colrows).noalias() +=
                g * detail::as_mat(col, colrows, colcols).transpose();
          }
          if (px->requires_grad) {
            px->ensure_grad();
            detail::as_mat(dcol, colrows, colcols).noalias() =
                detail::as_mat(pw->value, Cout, colrows).transpose() * g;
            T* dxs = px->grad.data() + n * Cin * Tin * V;
            for (std::size_t c = 0; c < Cin; ++c)
              for (std::size_t k = 0; k < t; ++k) {
                const T* crow = dcol.data() + (c * t + k) * colcols;
                for (std::size_t to = 0; to < Tout; ++to) {
                  std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride) - pad +
                                      static_cast<std::ptrdiff_t>(k * dilation);
                  if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tin)) continue;
                  T* dst = dxs + (c * Tin + static_cast<std::size_t>(ti)) * V;
                  const T* src = crow + to * V;
                  for (std::size_t v = 0; v < V; ++v) dst[v] += src[v];
                }
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and loss
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormBuffers {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormBuffers(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Normalizes per channel over all remaining axes. Train mode uses batch
// statistics (biased variance) and updates the running buffers; eval mode
// reproduces (x - m) / sqrt(v + eps) * gamma + beta from the stored stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormBuffers<T>& buffers, std::size_t channel_axis, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (channel_axis >= s.size())
    throw dim_error("batch_norm: channel axis out of range for " + shape_str(s));
  std::size_t C = s[channel_axis];
  if (gamma.size() != C || beta.size() != C || buffers.running_mean.size() != C ||
      buffers.running_var.size() != C)
    throw dim_error("batch_norm: affine/buffer size does not match " + std::to_string(C) +
                    " channels");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < channel_axis; ++i) outer *= s[i];
  for (std::size_t i = channel_axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t n = outer * inner;
  if (n == 0 || C == 0) throw dim_error("batch_norm: zero-size normalization group");

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    std::vector<T> var(C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
      T m = 0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* base = x.data() + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) m += base[i];
      }
      m /= static_cast<T>(n);
      T v = 0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* base = x.data() + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          T d = base[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(n);
      mean[c] = m;
      var[c] = v;
      inv_std[c] = T(1) / std::sqrt(v + eps);
    }
    T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
    for (std::size_t c = 0; c < C; ++c) {
      buffers.running_mean[c] = (T(1) - momentum) * buffers.running_mean[c] + momentum * mean[c];
      buffers.running_var[c] =
          (T(1) - momentum) * buffers.running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = buffers.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(buffers.running_var[c] + eps);
    }
  }

  std::vector<T> xhat(x.size());
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const T* base = x.data() + (o * C + c) * inner;
      T* xh = xhat.data() + (o * C + c) * inner;
      T* y = out.data() + (o * C + c) * inner;
      T m = mean[c], is = inv_std[c], g = gamma.data()[c], b = beta.data()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        xh[i] = (base[i] - m) * is;
        y[i] = g * xh[i] + b;
      }
    }

  auto px = x.node();
  auto pg = gamma.node();
  auto pb = beta.node();
  return Tensor<T>::from_op(
      s, std::move(out), {px, pg, pb},
      [px, pg, pb, outer, inner, C, n, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](auto& self) {
        std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < C; ++c) {
            std::size_t base = (o * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy[c] += self.grad[base + i];
              sum_dy_xhat[c] += self.grad[base + i] * xhat[base + i];
            }
          }
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) pg->grad[c] += sum_dy_xhat[c];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) pb->grad[c] += sum_dy[c];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          T invn = T(1) / static_cast<T>(n);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < C; ++c) {
              std::size_t base = (o * C + c) * inner;
              T gis = pg->value[c] * inv_std[c];
              if (training) {
                T mdy = sum_dy[c] * invn, mdyx = sum_dy_xhat[c] * invn;
                for (std::size_t i = 0; i < inner; ++i)
                  px->grad[base + i] +=
                      gis * (self.grad[base + i] - mdy - xhat[base + i] * mdyx);
              } else {
                for (std::size_t i = 0; i < inner; ++i)
                  px->grad[base + i] += gis * self.grad[base + i];
              }
            }
        }
      });
}

// Softmax along the last axis, max-subtracted for stability. Every row of the
// result is non-negative and sums to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() < 1) throw dim_error("softmax_rows: scalar input");
  std::size_t n = x.shape().back();
  std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T* yr = out.data() + r * n;
    T m = xr[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, xr[i]);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - m);
      s += yr[i];
    }
    T inv = T(1) / s;
    for (std::size_t i = 0; i < n; ++i) yr[i] *= inv;
  }
  auto px = x.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {px}, [px, rows, n](auto& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += dy[i] * y[i];
      T* dx = px->grad.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dot);
    }
  });
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw dim_error("cross_entropy: logits must be [B,C]");
  std::size_t B = logits.extent(0), C = logits.extent(1);
  if (labels.size() != B)
    throw dim_error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                    std::to_string(B));
  for (std::size_t b = 0; b < B; ++b)
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C)
      throw data_error("cross_entropy: label " + std::to_string(labels[b]) +
                       " out of range [0," + std::to_string(C) + ")");
  std::vector<T> probs(B * C);
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* l = logits.data() + b * C;
    T m = l[0];
    for (std::size_t i = 1; i < C; ++i) m = std::max(m, l[i]);
    T s = 0;
    for (std::size_t i = 0; i < C; ++i) {
      probs[b * C + i] = std::exp(l[i] - m);
      s += probs[b * C + i];
    }
    T inv = T(1) / s;
    for (std::size_t i = 0; i < C; ++i) probs[b * C + i] *= inv;
    loss += m + std::log(s) - l[labels[b]];
  }
  loss /= static_cast<T>(B);
  auto pl = logits.node();
  return Tensor<T>::from_op({1}, {loss}, {pl},
                            [pl, B, C, labels, probs = std::move(probs)](auto& self) {
                              if (!pl->requires_grad) return;
                              pl->ensure_grad();
                              T g = self.grad[0] / static_cast<T>(B);
                              for (std::size_t b = 0; b < B; ++b) {
                                T* d = pl->grad.data() + b * C;
                                const T* p = probs.data() + b * C;
                                for (std::size_t i = 0; i < C; ++i) d[i] += g * p[i];
                                d[labels[b]] -= g;
                              }
                            });
}

// Mean over the last two axes: [(N,)C,T,V] -> [(N,)C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  std::size_t N;
  Shape s;
  detail::split_batch(x.shape(), 3, N, s, "global_avg_pool");
  std::size_t C = s[0], TV = s[1] * s[2];
  std::vector<T> out(N * C, T(0));
  for (std::size_t i = 0; i < N * C; ++i) {
    const T* base = x.data() + i * TV;
    T acc = 0;
    for (std::size_t j = 0; j < TV; ++j) acc += base[j];
    out[i] = acc / static_cast<T>(TV);
  }
  Shape os = x.rank() == 4 ? Shape{N, C} : Shape{C};
  auto px = x.node();
  return Tensor<T>::from_op(std::move(os), std::move(out), {px}, [px, N, C, TV](auto& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    T inv = T(1) / static_cast<T>(TV);
    for (std::size_t i = 0; i < N * C; ++i) {
      T g = self.grad[i] * inv;
      T* base = px->grad.data() + i * TV;
      for (std::size_t j = 0; j < TV; ++j) base[j] += g;
    }
  });
}

}  // namespace unik
