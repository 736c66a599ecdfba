#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unik/error.hpp"
#include "unik/ops.hpp"
#include "unik/rng.hpp"
#include "unik/slsu.hpp"
#include "unik/tensor.hpp"
#include "unik/tlsu.hpp"

namespace unik {

// Full architecture hyperparameters. Defaults follow the standard setting:
// 10 blocks, channels 64x4 / 128x3 / 256x3, kernel 9, per-block dilations
// 1,3,3,3,3,1,1,1,1,1, 3 heads, window 1.
struct NetworkConfig {
  std::size_t blocks = 10;
  std::vector<std::size_t> channels = {64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> dilations = {1, 3, 3, 3, 3, 1, 1, 1, 1, 1};
  std::size_t kernel_t = 9;
  std::size_t heads = 3;
  std::size_t tau = 1;
  std::size_t joints = 0;       // V
  std::size_t in_channels = 0;  // 2 or 3
  std::size_t num_classes = 0;
  std::size_t persons = 1;  // M

  void validate() const {
    if (blocks < 1) throw config_error("net: need at least one block");
    if (channels.size() != blocks || dilations.size() != blocks)
      throw config_error("net: channels/dilations lists must have one entry per block");
    for (std::size_t b = 1; b < blocks; ++b)
      if (channels[b] < channels[b - 1])
        throw config_error("net: channel schedule must be non-decreasing");
    if (kernel_t % 2 == 0) throw config_error("net: temporal kernel must be odd");
    if (heads < 1) throw config_error("net: need at least one head");
    if (tau < 1) throw config_error("net: window size must be >= 1");
    if (joints < 1) throw config_error("net: joint count not set");
    if (in_channels != 2 && in_channels != 3)
      throw config_error("net: input channels must be 2 or 3");
    if (num_classes < 1) throw config_error("net: class count not set");
    if (persons < 1) throw config_error("net: person count must be >= 1");
  }

  // Temporal stride 2 at the first block of each channel increase.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(blocks, 1);
    for (std::size_t b = 1; b < blocks; ++b)
      if (channels[b] > channels[b - 1]) s[b] = 2;
    return s;
  }

  std::size_t feature_dim() const { return channels.back(); }

  // FNV-1a over the canonical field serialization; detects architecture
  // mismatches before any tensor is loaded.
  std::uint32_t fingerprint() const {
    std::uint32_t h = 2166136261u;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= static_cast<std::uint32_t>(v & 0xff);
        h *= 16777619u;
        v >>= 8;
      }
    };
    mix(blocks);
    for (std::size_t c : channels) mix(c);
    for (std::size_t d : dilations) mix(d);
    mix(kernel_t);
    mix(heads);
    mix(tau);
    mix(joints);
    mix(in_channels);
    mix(num_classes);
    mix(persons);
    return h;
  }
};

template <typename T>
struct BnLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormBuffers<T> buffers;

  void init(std::size_t c) {
    gamma = Tensor<T>::full({c}, T(1));
    beta = Tensor<T>({c});
    buffers = BatchNormBuffers<T>(c);
  }
};

template <typename T>
struct BlockParams {
  SlsuConfig slsu_cfg;
  SlsuParams<T> slsu;
  BnLayer<T> bn1;
  TlsuConfig tlsu_cfg;
  Tensor<T> tlsu_w;
  BnLayer<T> bn2;
  std::optional<Tensor<T>> residual_proj;  // [c_out, c_in, 1, 1], carries the stride
};

// One building block:
//   y = relu( BN(T-LSU(BN(S-LSU(x)))) + R(x) )
// R is identity when the shape is preserved, otherwise a bias-free 1x1
// projection with the block's temporal stride.
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, BlockParams<T>& p, bool training) {
  std::size_t ca = x.rank() == 4 ? 1 : 0;
  Tensor<T> s = slsu_forward(x, p.slsu_cfg, p.slsu);
  Tensor<T> b1 = batch_norm(s, p.bn1.gamma, p.bn1.beta, p.bn1.buffers, ca, training);
  Tensor<T> t = tlsu_forward(b1, p.tlsu_cfg, p.tlsu_w);
  Tensor<T> b2 = batch_norm(t, p.bn2.gamma, p.bn2.beta, p.bn2.buffers, ca, training);
  Tensor<T> r = p.residual_proj ? temporal_conv(x, *p.residual_proj, 1, p.tlsu_cfg.stride) : x;
  return relu(add(b2, r));
}

// Named view over a parameter or running-stat buffer, used by checkpoint IO.
template <typename T>
struct NamedBuf {
  std::string name;
  Shape shape;
  std::vector<T>* data;
};

template <typename T>
class Network {
 public:
  Network(NetworkConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    input_bn_.init(cfg_.in_channels * cfg_.joints);
    auto strides = cfg_.strides();
    std::size_t c_in = cfg_.in_channels;
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      BlockParams<T> p;
      std::size_t c_out = cfg_.channels[b];
      p.slsu_cfg.heads = cfg_.heads;
      p.slsu_cfg.tau = cfg_.tau;
      p.slsu_cfg.c_in = c_in;
      p.slsu_cfg.c_out = c_out;
      p.slsu = init_slsu<T>(p.slsu_cfg, cfg_.joints, rng);
      p.bn1.init(c_out);
      p.tlsu_cfg.channels = c_out;
      p.tlsu_cfg.kernel_t = cfg_.kernel_t;
      p.tlsu_cfg.dilation = cfg_.dilations[b];
      p.tlsu_cfg.stride = strides[b];
      p.tlsu_w = uniform_fan_in<T>({c_out, c_out, cfg_.kernel_t, 1}, c_out * cfg_.kernel_t,
                                   p.slsu_cfg.neg_slope, rng);
      p.bn2.init(c_out);
      if (c_in != c_out || strides[b] != 1)
        p.residual_proj =
            uniform_fan_in<T>({c_out, c_in, 1, 1}, c_in, p.slsu_cfg.neg_slope, rng);
      blocks_.push_back(std::move(p));
      c_in = c_out;
    }
    std::size_t f = cfg_.feature_dim();
    classifier_w_ = uniform_fan_in<T>({cfg_.num_classes, f}, f, 2.2360679774997896, rng);
    classifier_b_ = uniform_fan_in<T>({cfg_.num_classes}, f, 2.2360679774997896, rng);
    for (Tensor<T>& t : parameters()) t.set_requires_grad(true);
  }

  const NetworkConfig& config() const { return cfg_; }
  std::uint32_t fingerprint() const { return cfg_.fingerprint(); }

  // batch [B, M, C_in, T, V] -> pooled features [B, feature_dim].
  Tensor<T> features(const Tensor<T>& batch, bool training) {
    if (batch.rank() != 5)
      throw dim_error("net: expected [B,M,C,T,V] batch, got " + shape_str(batch.shape()));
    std::size_t B = batch.extent(0), M = batch.extent(1), C = batch.extent(2),
                Tn = batch.extent(3), V = batch.extent(4);
    if (M != cfg_.persons || C != cfg_.in_channels || V != cfg_.joints)
      throw dim_error("net: batch " + shape_str(batch.shape()) + " does not match config (M=" +
                      std::to_string(cfg_.persons) + ", C=" + std::to_string(cfg_.in_channels) +
                      ", V=" + std::to_string(cfg_.joints) + ")");
    Tensor<T> x = reshape(batch, {B * M, C, Tn, V});
    // 1D batch normalization over the flattened (C*V) channels.
    x = permute(x, {0, 1, 3, 2});                  // [BM, C, V, T]
    x = reshape(x, {B * M, C * V, Tn});            // [BM, CV, T]
    x = batch_norm(x, input_bn_.gamma, input_bn_.beta, input_bn_.buffers, 1, training);
    x = reshape(x, {B * M, C, V, Tn});
    x = permute(x, {0, 1, 3, 2});                  // [BM, C, T, V]
    for (BlockParams<T>& p : blocks_) x = block_forward(x, p, training);
    Tensor<T> pooled = global_avg_pool(x);         // [BM, F]
    pooled = reshape(pooled, {B, M, cfg_.feature_dim()});
    return mean_axis(pooled, 1);                   // person average
  }

  Tensor<T> forward(const Tensor<T>& batch, bool training) {
    return linear(features(batch, training), classifier_w_, classifier_b_);
  }

  Tensor<T> logits_from_features(const Tensor<T>& feats) {
    return linear(feats, classifier_w_, classifier_b_);
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    collect_params([&out](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  std::vector<Tensor<T>> backbone_parameters() {
    std::vector<Tensor<T>> out;
    collect_params([&out](const std::string& name, Tensor<T>& t) {
      if (name.rfind("classifier.", 0) != 0) out.push_back(t);
    });
    return out;
  }

  std::vector<Tensor<T>> classifier_parameters() { return {classifier_w_, classifier_b_}; }

  // Parameters plus batch-norm running statistics, in a stable order.
  std::vector<NamedBuf<T>> state() {
    std::vector<NamedBuf<T>> out;
    collect_params([&out](const std::string& name, Tensor<T>& t) {
      out.push_back({name, t.shape(), &t.values()});
    });
    auto add_bn_stats = [&out](const std::string& prefix, BnLayer<T>& bn) {
      Shape s = {bn.buffers.running_mean.size()};
      out.push_back({prefix + ".mean", s, &bn.buffers.running_mean});
      out.push_back({prefix + ".var", s, &bn.buffers.running_var});
    };
    add_bn_stats("input_bn", input_bn_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      add_bn_stats("block" + std::to_string(b) + ".bn1", blocks_[b].bn1);
      add_bn_stats("block" + std::to_string(b) + ".bn2", blocks_[b].bn2);
    }
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (const Tensor<T>& t : parameters()) n += t.size();
    return n;
  }

 private:
  template <typename F>
  void collect_params(F&& fn) {
    fn("input_bn.gamma", input_bn_.gamma);
    fn("input_bn.beta", input_bn_.beta);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      std::string prefix = "block" + std::to_string(b) + ".";
      BlockParams<T>& p = blocks_[b];
      for (std::size_t h = 0; h < p.slsu.heads.size(); ++h) {
        std::string hp = prefix + "slsu.head" + std::to_string(h) + ".";
        fn(hp + "W", p.slsu.heads[h].W);
        fn(hp + "E", p.slsu.heads[h].E);
        fn(hp + "E_theta", p.slsu.heads[h].E_theta);
        fn(hp + "E_phi", p.slsu.heads[h].E_phi);
      }
      if (p.slsu.residual_proj) fn(prefix + "slsu.res", *p.slsu.residual_proj);
      fn(prefix + "bn1.gamma", p.bn1.gamma);
      fn(prefix + "bn1.beta", p.bn1.beta);
      fn(prefix + "tlsu.w", p.tlsu_w);
      fn(prefix + "bn2.gamma", p.bn2.gamma);
      fn(prefix + "bn2.beta", p.bn2.beta);
      if (p.residual_proj) fn(prefix + "res", *p.residual_proj);
    }
    fn("classifier.w", classifier_w_);
    fn("classifier.b", classifier_b_);
  }

  NetworkConfig cfg_;
  BnLayer<T> input_bn_;
  std::vector<BlockParams<T>> blocks_;
  Tensor<T> classifier_w_;
  Tensor<T> classifier_b_;
};

// ---------------------------------------------------------------------------
// Parameter counting (learnable tensors only; running stats excluded)
// ---------------------------------------------------------------------------

struct ParamCounts {
  std::size_t total = 0;
  std::size_t backbone = 0;
  std::size_t classifier = 0;
  std::vector<std::pair<std::string, std::size_t>> modules;
};

inline ParamCounts count_params(const NetworkConfig& cfg) {
  cfg.validate();
  ParamCounts out;
  std::size_t input_bn = 2 * cfg.in_channels * cfg.joints;
  out.modules.emplace_back("input_bn", input_bn);
  out.backbone += input_bn;

  auto strides = cfg.strides();
  std::size_t c_in = cfg.in_channels;
  std::size_t s = cfg.tau * cfg.joints;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    std::size_t c_out = cfg.channels[b];
    SlsuConfig sc;
    sc.c_out = c_out;
    std::size_t ce = sc.embed_channels();
    std::size_t head = s * s + c_out * c_in + 2 * ce * c_in;
    std::size_t block = cfg.heads * head;
    if (c_in != c_out) block += c_out * c_in;                   // S-LSU residual projection
    block += 2 * c_out;                                          // bn1 affine
    block += c_out * c_out * cfg.kernel_t;                       // T-LSU kernel
    block += 2 * c_out;                                          // bn2 affine
    if (c_in != c_out || strides[b] != 1) block += c_out * c_in;  // block residual
    out.modules.emplace_back("block" + std::to_string(b), block);
    out.backbone += block;
    c_in = c_out;
  }

  out.classifier = cfg.feature_dim() * cfg.num_classes + cfg.num_classes;
  out.modules.emplace_back("classifier", out.classifier);
  out.total = out.backbone + out.classifier;
  return out;
}

}  // namespace unik
