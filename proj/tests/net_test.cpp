#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "unik/checkpoint.hpp"
#include "unik/gradcheck.hpp"
#include "unik/net.hpp"

using unik::NetworkConfig;
using unik::Network;
using unik::Rng;
using unik::Shape;
using unik::Tensor;

namespace {

NetworkConfig tiny_config(std::size_t v = 5, std::size_t classes = 3) {
  NetworkConfig cfg;
  cfg.blocks = 3;
  cfg.channels = {8, 8, 16};
  cfg.dilations = {1, 2, 1};
  cfg.kernel_t = 3;
  cfg.joints = v;
  cfg.in_channels = 2;
  cfg.num_classes = classes;
  return cfg;
}

NetworkConfig smarthome_config(std::size_t classes = 31) {
  NetworkConfig cfg;
  cfg.joints = 17;
  cfg.in_channels = 2;
  cfg.num_classes = classes;
  return cfg;
}

template <typename T>
unik::BlockParams<T> make_block(std::size_t c_in, std::size_t c_out, std::size_t v,
                                std::size_t kernel_t, std::size_t stride, std::uint64_t seed) {
  Rng rng(seed);
  unik::BlockParams<T> p;
  p.slsu_cfg.heads = 2;
  p.slsu_cfg.c_in = c_in;
  p.slsu_cfg.c_out = c_out;
  p.slsu = unik::init_slsu<T>(p.slsu_cfg, v, rng);
  p.bn1.init(c_out);
  p.tlsu_cfg.channels = c_out;
  p.tlsu_cfg.kernel_t = kernel_t;
  p.tlsu_cfg.stride = stride;
  p.tlsu_w = unik::uniform_fan_in<T>({c_out, c_out, kernel_t, 1}, c_out * kernel_t,
                                     p.slsu_cfg.neg_slope, rng);
  p.bn2.init(c_out);
  if (c_in != c_out || stride != 1)
    p.residual_proj = unik::uniform_fan_in<T>({c_out, c_in, 1, 1}, c_in, p.slsu_cfg.neg_slope, rng);
  return p;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "unik_net_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Block, ZeroWeightsLeaveOnlyResidualPath) {
  // All S-LSU / T-LSU weights zero, BN affine (1,0): output = relu(R(x)).
  auto p = make_block<double>(3, 3, 4, 3, 1, 1);
  for (auto& h : p.slsu.heads) {
    std::fill(h.W.values().begin(), h.W.values().end(), 0.0);
    std::fill(h.E.values().begin(), h.E.values().end(), 0.0);
    std::fill(h.E_theta.values().begin(), h.E_theta.values().end(), 0.0);
    std::fill(h.E_phi.values().begin(), h.E_phi.values().end(), 0.0);
  }
  std::fill(p.tlsu_w.values().begin(), p.tlsu_w.values().end(), 0.0);
  Rng rng(2);
  auto x = testutil::random_tensor<double>({2, 3, 6, 4}, rng);
  auto y = unik::block_forward(x, p, true);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(y.data()[i], std::max(0.0, x.data()[i]), 1e-9);
}

TEST(Block, ZeroInputGivesZeroAtInit) {
  auto p = make_block<double>(3, 3, 4, 3, 1, 3);
  Tensor<double> x({2, 3, 6, 4});
  auto y = unik::block_forward(x, p, true);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

// Float32 block gradients vs a float64 central-difference oracle of the same
// block on a 2x8x5 input.
TEST(Block, Float32GradWithinTolerance) {
  auto pd = make_block<double>(2, 3, 5, 3, 1, 4);
  auto pf = make_block<float>(2, 3, 5, 3, 1, 4);  // same seed -> same values
  Rng rng(5);
  auto xd = testutil::random_tensor<double>({1, 2, 8, 5}, rng);
  Tensor<float> xf(xd.shape());
  for (std::size_t i = 0; i < xd.size(); ++i) xf.data()[i] = static_cast<float>(xd.data()[i]);
  auto rd = testutil::random_tensor<double>({1, 3, 8, 5}, rng);
  Tensor<float> rf(rd.shape());
  for (std::size_t i = 0; i < rd.size(); ++i) rf.data()[i] = static_cast<float>(rd.data()[i]);

  xf.set_requires_grad(true);
  unik::sum(unik::mul(unik::block_forward(xf, pf, true), rf)).backward();
  const auto& analytic = xf.grad();

  double worst = 0;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    double eps = 1e-6, saved = xd.data()[i];
    xd.data()[i] = saved + eps;
    double up = unik::sum(unik::mul(unik::block_forward(xd, pd, true), rd)).item();
    xd.data()[i] = saved - eps;
    double down = unik::sum(unik::mul(unik::block_forward(xd, pd, true), rd)).item();
    xd.data()[i] = saved;
    double cd = (up - down) / (2 * eps);
    double a = analytic[i];
    worst = std::max(worst, std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-12}));
  }
  EXPECT_LT(worst, 1e-4);
}

// 64-bit gradient check of one full block on a 2x8x5 input.
TEST(Block, Float64GradCheck) {
  auto p = make_block<double>(2, 3, 5, 3, 2, 6);
  Rng rng(7);
  auto x = testutil::random_tensor<double>({1, 2, 8, 5}, rng);
  auto r = testutil::random_tensor<double>({1, 3, 4, 5}, rng);
  double err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::block_forward(t, p, true), r));
      },
      x);
  EXPECT_LT(err, 1e-5);
}

TEST(Network, ShapePropagation) {
  NetworkConfig cfg = smarthome_config(31);
  Rng rng(8);
  Network<float> net(cfg, rng);
  Rng drng(9);
  auto x = testutil::random_tensor<float>({2, 1, 2, 16, 17}, drng);
  auto logits = net.forward(x, false);
  EXPECT_EQ(logits.shape(), (Shape{2, 31}));
  for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_TRUE(std::isfinite(logits.data()[i]));
  // Softmax rows of the logits sum to 1.
  auto p = unik::softmax_rows(logits);
  for (std::size_t b = 0; b < 2; ++b) {
    double s = 0;
    for (std::size_t c = 0; c < 31; ++c) s += p.at(b, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Network, VariousTemporalLengths) {
  NetworkConfig cfg = tiny_config();
  Rng rng(10);
  Network<float> net(cfg, rng);
  for (std::size_t T : {4u, 7u, 12u, 33u}) {
    Rng drng(T);
    auto x = testutil::random_tensor<float>({2, 1, 2, T, 5}, drng);
    auto logits = net.forward(x, false);
    EXPECT_EQ(logits.shape(), (Shape{2, 3}));
  }
}

TEST(Network, ZeroInputYieldsBiasRow) {
  NetworkConfig cfg = tiny_config();
  Rng rng(11);
  Network<float> net(cfg, rng);
  Tensor<float> x({3, 1, 2, 8, 5});
  auto logits = net.forward(x, false);
  auto bias = net.classifier_parameters()[1];
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits.at(b, c), bias.data()[c]);
}

TEST(Network, MismatchedInputRejected) {
  NetworkConfig cfg = tiny_config();
  Rng rng(12);
  Network<float> net(cfg, rng);
  Tensor<float> wrong_v({1, 1, 2, 8, 7});
  EXPECT_THROW(net.forward(wrong_v, false), unik::dim_error);
  Tensor<float> wrong_c({1, 1, 3, 8, 5});
  EXPECT_THROW(net.forward(wrong_c, false), unik::dim_error);
}

TEST(Network, DeterministicConstructionAndEval) {
  NetworkConfig cfg = tiny_config();
  Rng ra(77), rb(77);
  Network<float> a(cfg, ra), b(cfg, rb);
  Rng drng(13);
  auto x = testutil::random_tensor<float>({2, 1, 2, 10, 5}, drng);
  auto ya = a.forward(x, false);
  auto yb = b.forward(x, false);
  ASSERT_EQ(ya.size(), yb.size());
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
}

TEST(Network, EvalInvariantToBatchComposition) {
  NetworkConfig cfg = tiny_config();
  Rng rng(14);
  Network<float> net(cfg, rng);
  Rng drng(15);
  auto batch = testutil::random_tensor<float>({3, 1, 2, 9, 5}, drng);
  auto all = net.forward(batch, false);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<float> one({1, 1, 2, 9, 5});
    std::copy(batch.data() + b * one.size(), batch.data() + (b + 1) * one.size(), one.data());
    auto y = net.forward(one, false);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(0, c), all.at(b, c));
  }
}

TEST(Network, TwoPersonsSupported) {
  NetworkConfig cfg = tiny_config();
  cfg.persons = 2;
  Rng rng(16);
  Network<float> net(cfg, rng);
  Rng drng(17);
  auto x = testutil::random_tensor<float>({2, 2, 2, 8, 5}, drng);
  EXPECT_EQ(net.forward(x, false).shape(), (Shape{2, 3}));
}

TEST(CountParams, ClassifierOracles) {
  EXPECT_EQ(unik::count_params(smarthome_config(31)).classifier, 7967u);
  EXPECT_EQ(unik::count_params(smarthome_config(15)).classifier, 3855u);
  // Linear layer m -> n with bias.
  NetworkConfig cfg = tiny_config(5, 7);
  EXPECT_EQ(unik::count_params(cfg).classifier, 16u * 7u + 7u);
}

TEST(CountParams, BackboneWithinReportedRange) {
  auto counts = unik::count_params(smarthome_config(31));
  EXPECT_GE(counts.backbone, 3000000u);
  EXPECT_LE(counts.backbone, 3900000u);
  // Feature dimension stays 256 regardless of V and classes.
  NetworkConfig other = smarthome_config(15);
  other.joints = 25;
  other.in_channels = 3;
  EXPECT_EQ(other.feature_dim(), 256u);
}

TEST(CountParams, MatchesInstantiatedNetwork) {
  for (auto cfg : {tiny_config(), smarthome_config(31)}) {
    Rng rng(18);
    Network<float> net(cfg, rng);
    EXPECT_EQ(net.param_count(), unik::count_params(cfg).total);
  }
}

TEST(Checkpoint, SaveLoadBitExact) {
  auto dir = temp_dir();
  auto path = (dir / "net.ckpt").string();
  NetworkConfig cfg = tiny_config();
  Rng ra(19), rb(20);
  Network<float> a(cfg, ra), b(cfg, rb);
  unik::save_checkpoint(a, path, 5, 123);
  auto data = unik::load_checkpoint(b, path);
  EXPECT_EQ(data.epoch, 5u);
  EXPECT_EQ(data.seed, 123u);
  auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    ASSERT_EQ(sa[i].name, sb[i].name);
    EXPECT_EQ(*sa[i].data, *sb[i].data) << sa[i].name;
  }
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  auto dir = temp_dir();
  auto path = (dir / "trunc.ckpt").string();
  NetworkConfig cfg = tiny_config();
  Rng rng(21);
  Network<float> net(cfg, rng);
  unik::save_checkpoint(net, path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  try {
    unik::read_checkpoint_file(path);
    FAIL() << "expected checkpoint_error";
  } catch (const unik::checkpoint_error& e) {
    EXPECT_EQ(e.error_kind(), unik::checkpoint_error::kind::corrupt);
  }
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto dir = temp_dir();
  auto path = (dir / "magic.ckpt").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE extra bytes here";
  }
  try {
    unik::read_checkpoint_file(path);
    FAIL();
  } catch (const unik::checkpoint_error& e) {
    EXPECT_EQ(e.error_kind(), unik::checkpoint_error::kind::bad_magic);
  }
}

TEST(Checkpoint, FingerprintMismatch) {
  auto dir = temp_dir();
  auto path = (dir / "fp.ckpt").string();
  NetworkConfig cfg = tiny_config(5);
  Rng rng(22);
  Network<float> net(cfg, rng);
  unik::save_checkpoint(net, path);
  NetworkConfig other = tiny_config(6);
  Rng rng2(23);
  Network<float> net2(other, rng2);
  try {
    unik::load_checkpoint(net2, path);
    FAIL();
  } catch (const unik::checkpoint_error& e) {
    EXPECT_EQ(e.error_kind(), unik::checkpoint_error::kind::bad_fingerprint);
  }
}

TEST(PartialRestore, FullPolicyEqualsLoad) {
  auto dir = temp_dir();
  auto path = (dir / "full.ckpt").string();
  NetworkConfig cfg = tiny_config();
  Rng ra(24), rb(25);
  Network<float> a(cfg, ra), b(cfg, rb);
  unik::save_checkpoint(a, path);
  auto report = unik::load_pretrained_partial(b, path, unik::RestorePolicy::full);
  EXPECT_TRUE(report.fresh.empty());
  auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(*sa[i].data, *sb[i].data);
}

TEST(PartialRestore, NewClassCountKeepsFreshClassifier) {
  auto dir = temp_dir();
  auto path = (dir / "c31.ckpt").string();
  Rng ra(26);
  Network<float> src(tiny_config(5, 31), ra);
  unik::save_checkpoint(src, path);

  Rng rb(27);
  Network<float> dst(tiny_config(5, 15), rb);
  auto before_w = dst.classifier_parameters()[0].values();
  auto report = unik::load_pretrained_partial(dst, path, unik::RestorePolicy::backbone_only);
  EXPECT_EQ(report.fresh.size(), 2u);  // classifier.w, classifier.b
  EXPECT_EQ(dst.classifier_parameters()[0].values(), before_w);
  // Every backbone tensor restored.
  auto ss = src.state();
  auto sd = dst.state();
  for (std::size_t i = 0; i < sd.size(); ++i) {
    if (sd[i].name.rfind("classifier.", 0) == 0) continue;
    EXPECT_EQ(*sd[i].data, *ss[i].data) << sd[i].name;
  }
}

TEST(PartialRestore, JointCountMismatchNamesTensor) {
  auto dir = temp_dir();
  auto path = (dir / "v17.ckpt").string();
  Rng ra(28);
  Network<float> src(smarthome_config(31), ra);
  unik::save_checkpoint(src, path);

  NetworkConfig cfg = smarthome_config(31);
  cfg.joints = 25;
  Rng rb(29);
  Network<float> dst(cfg, rb);
  try {
    unik::load_pretrained_partial(dst, path, unik::RestorePolicy::backbone_only);
    FAIL();
  } catch (const unik::checkpoint_error& e) {
    EXPECT_EQ(e.error_kind(), unik::checkpoint_error::kind::tensor_mismatch);
    // Error names the first joint-dependent tensor in state order.
    EXPECT_NE(std::string(e.what()).find("input_bn.gamma"), std::string::npos);
  }
}

// Gradient check of the tiny network against finite differences for the input
// and a sample of parameter tensors (the acceptance suite covers them all).
TEST(Network, TinyNetGradCheck) {
  NetworkConfig cfg = tiny_config();
  Rng rng(30);
  Network<double> net(cfg, rng);
  Rng drng(31);
  auto x = testutil::random_tensor<double>({2, 1, 2, 12, 5}, drng);
  std::vector<int> labels = {0, 2};
  auto loss_fn = [&](const Tensor<double>&) {
    return unik::cross_entropy(net.forward(x, true), labels);
  };
  double err = unik::grad_check<double>(
      [&](const Tensor<double>& t) { return unik::cross_entropy(net.forward(t, true), labels); },
      x);
  EXPECT_LT(err, 1e-5) << "input gradient";
  auto params = net.parameters();
  for (std::size_t i : {std::size_t{0}, std::size_t{3}, std::size_t{9}, params.size() - 1}) {
    double perr = unik::grad_check<double>(loss_fn, params[i]);
    EXPECT_LT(perr, 1e-5) << "param " << i;
  }
}
