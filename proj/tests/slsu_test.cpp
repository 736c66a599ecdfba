#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "unik/gradcheck.hpp"
#include "unik/slsu.hpp"
#include "unik/tlsu.hpp"

using unik::Rng;
using unik::Shape;
using unik::SlsuConfig;
using unik::SlsuHead;
using unik::SlsuParams;
using unik::Tensor;

TEST(InitDependency, BoundsForKnownJointCounts) {
  Rng rng(1);
  // a = sqrt(5) makes the bound exactly 1/sqrt(V).
  struct Case {
    std::size_t v;
    double bound;
  } cases[] = {{25, 0.2}, {17, 0.242536}, {1, 1.0}};
  for (const auto& c : cases) {
    auto w = unik::init_dependency<double>(c.v, 1, std::sqrt(5.0), rng);
    EXPECT_EQ(w.shape(), (Shape{c.v, c.v}));
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < w.size(); ++i) {
      lo = std::min(lo, w.data()[i]);
      hi = std::max(hi, w.data()[i]);
    }
    EXPECT_GE(lo, -c.bound - 1e-6);
    EXPECT_LE(hi, c.bound + 1e-6);
  }
}

TEST(InitDependency, RejectsZeroJoints) {
  Rng rng(2);
  EXPECT_THROW(unik::init_dependency<double>(0, 1, std::sqrt(5.0), rng), unik::config_error);
}

TEST(InitDependency, VarianceMatchesUniformLaw) {
  // Empirical variance over >= 1e4 draws should be bound^2/3 within 5%.
  Rng rng(3);
  std::size_t V = 17;
  double bound = 1.0 / std::sqrt(17.0);
  double sum = 0, sum2 = 0;
  std::size_t count = 0;
  while (count < 20000) {
    auto w = unik::init_dependency<double>(V, 1, std::sqrt(5.0), rng);
    for (std::size_t i = 0; i < w.size(); ++i) {
      sum += w.data()[i];
      sum2 += w.data()[i] * w.data()[i];
      ++count;
    }
  }
  double mean = sum / count;
  double var = sum2 / count - mean * mean;
  double expected = bound * bound / 3.0;
  EXPECT_NEAR(var, expected, 0.05 * expected);
}

TEST(InitDependency, TauScalesMatrixNotBound) {
  Rng rng(4);
  auto w = unik::init_dependency<double>(4, 3, std::sqrt(5.0), rng);
  EXPECT_EQ(w.shape(), (Shape{12, 12}));
  double bound = 0.5;  // 1/sqrt(4), independent of tau
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(std::abs(w.data()[i]), bound);
}

TEST(WindowUnfold, TauOneIsIdentity) {
  Rng rng(5);
  auto x = testutil::random_tensor<double>({2, 4, 3}, rng);
  auto y = unik::window_unfold(x, 1);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(WindowUnfold, ShapeAndBoundaryPadding) {
  Rng rng(6);
  auto x = testutil::random_tensor<double>({1, 5, 2}, rng);
  auto y = unik::window_unfold(x, 3);
  EXPECT_EQ(y.shape(), (Shape{1, 5, 6}));
  // Frame 0's first V-block comes from frame -1: zero padding.
  EXPECT_EQ(y.at(0, 0, 0), 0.0);
  EXPECT_EQ(y.at(0, 0, 1), 0.0);
  // Center block of frame 0 is frame 0 itself.
  EXPECT_EQ(y.at(0, 0, 2), x.at(0, 0, 0));
  EXPECT_EQ(y.at(0, 0, 3), x.at(0, 0, 1));
  // Last frame's last block is padding.
  EXPECT_EQ(y.at(0, 4, 4), 0.0);
  EXPECT_EQ(y.at(0, 4, 5), 0.0);
}

TEST(WindowUnfold, TimeConstantInputRepeatsBlocks) {
  Tensor<double> x({1, 4, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    x.at(0, t, 0) = 1.5;
    x.at(0, t, 1) = -2.5;
  }
  auto y = unik::window_unfold(x, 3);
  for (std::size_t t = 1; t < 3; ++t)  // interior frames hold three identical blocks
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(y.at(0, t, 2 * k), 1.5);
      EXPECT_EQ(y.at(0, t, 2 * k + 1), -2.5);
    }
}

TEST(WindowUnfold, EvenTauAnchoring) {
  // tau=2 uses offsets 0..+1.
  Tensor<double> x({1, 3, 1}, {10, 20, 30});
  auto y = unik::window_unfold(x, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(y.at(0, 0, 0), 10.0);
  EXPECT_EQ(y.at(0, 0, 1), 20.0);
  EXPECT_EQ(y.at(0, 2, 0), 30.0);
  EXPECT_EQ(y.at(0, 2, 1), 0.0);  // past the end
}

TEST(WindowUnfold, GradMatchesFiniteDifferences) {
  Rng rng(7);
  auto x = testutil::random_tensor<double>({2, 5, 3}, rng);
  auto r = testutil::random_tensor<double>({2, 5, 9}, rng);
  double err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::window_unfold(t, 3), r));
      },
      x);
  EXPECT_LT(err, 1e-6);
  auto rf = testutil::random_tensor<double>({2, 5, 3}, rng);
  auto xu = testutil::random_tensor<double>({2, 5, 9}, rng);
  err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::window_fold_sum(t, 3), rf));
      },
      xu);
  EXPECT_LT(err, 1e-6);
}

namespace {

SlsuParams<double> random_params(const SlsuConfig& cfg, std::size_t V, std::uint64_t seed) {
  Rng rng(seed);
  return unik::init_slsu<double>(cfg, V, rng);
}

}  // namespace

TEST(AttentionMap, ZeroInputIsExactlyUniform) {
  SlsuConfig cfg;
  cfg.heads = 1;
  cfg.c_in = 3;
  cfg.c_out = 4;
  cfg.tau = 2;
  std::size_t V = 5;
  auto params = random_params(cfg, V, 11);
  Tensor<double> u({3, 4, cfg.tau * V});
  auto a = unik::attention_map(u, params.heads[0]);
  EXPECT_EQ(a.shape(), (Shape{cfg.tau * V, cfg.tau * V}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], 1.0 / (cfg.tau * V));
}

TEST(AttentionMap, RowsSumToOne) {
  Rng rng(12);
  SlsuConfig cfg;
  cfg.heads = 1;
  cfg.c_in = 3;
  cfg.c_out = 4;
  std::size_t V = 6;
  auto params = random_params(cfg, V, 13);
  for (int rep = 0; rep < 10; ++rep) {
    auto u = testutil::random_tensor<double>({3, 5, V}, rng, -3.0, 3.0);
    auto a = unik::attention_map(u, params.heads[0]);
    for (std::size_t r = 0; r < V; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < V; ++c) s += a.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(AttentionMap, SingleJointIsOne) {
  SlsuConfig cfg;
  cfg.heads = 1;
  cfg.c_in = 2;
  cfg.c_out = 2;
  auto params = random_params(cfg, 1, 14);
  Rng rng(15);
  auto u = testutil::random_tensor<double>({2, 3, 1}, rng);
  auto a = unik::attention_map(u, params.heads[0]);
  EXPECT_EQ(a.shape(), (Shape{1, 1}));
  EXPECT_EQ(a.at(0, 0), 1.0);
}

TEST(AttentionMap, BatchedMatchesPerSample) {
  Rng rng(16);
  SlsuConfig cfg;
  cfg.heads = 1;
  cfg.c_in = 3;
  cfg.c_out = 4;
  std::size_t V = 4;
  auto params = random_params(cfg, V, 17);
  auto u = testutil::random_tensor<double>({2, 3, 5, V}, rng);
  auto batched = unik::attention_map(u, params.heads[0]);
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor<double> un({3, 5, V});
    std::copy(u.data() + n * un.size(), u.data() + (n + 1) * un.size(), un.data());
    auto an = unik::attention_map(un, params.heads[0]);
    for (std::size_t i = 0; i < an.size(); ++i)
      EXPECT_NEAR(batched.data()[n * an.size() + i], an.data()[i], 1e-12);
  }
}

TEST(SlsuForward, ZeroInputGivesZero) {
  SlsuConfig cfg;
  cfg.heads = 3;
  cfg.c_in = 3;
  cfg.c_out = 5;
  std::size_t V = 4;
  auto params = random_params(cfg, V, 18);
  Tensor<double> x({3, 6, V});
  auto y = unik::slsu_forward(x, cfg, params);
  EXPECT_EQ(y.shape(), (Shape{5, 6, V}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(SlsuForward, IdentityConfiguration) {
  // N=1, tau=1, attention off, W = I, E = I, residual disabled -> output = x.
  SlsuConfig cfg;
  cfg.heads = 1;
  cfg.c_in = 2;
  cfg.c_out = 2;
  cfg.with_attention = false;
  cfg.with_residual = false;
  std::size_t V = 4;
  SlsuParams<double> params;
  SlsuHead<double> h;
  h.W = Tensor<double>({V, V});
  for (std::size_t i = 0; i < V; ++i) h.W.at(i, i) = 1.0;
  h.E = Tensor<double>({2, 2});
  h.E.at(0, 0) = h.E.at(1, 1) = 1.0;
  h.E_theta = Tensor<double>({4, 2});
  h.E_phi = Tensor<double>({4, 2});
  params.heads.push_back(std::move(h));
  Rng rng(19);
  auto x = testutil::random_tensor<double>({2, 5, V}, rng);
  auto y = unik::slsu_forward(x, cfg, params);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-12);
}

TEST(SlsuForward, HeadCountMismatchRejected) {
  SlsuConfig cfg;
  cfg.heads = 3;
  cfg.c_in = 2;
  cfg.c_out = 2;
  auto params = random_params(cfg, 4, 99);
  params.heads.pop_back();
  Tensor<double> x({2, 5, 4});
  EXPECT_THROW(unik::slsu_forward(x, cfg, params), unik::dim_error);
}

TEST(SlsuForward, LinearWithoutAttention) {
  SlsuConfig cfg;
  cfg.heads = 2;
  cfg.c_in = 3;
  cfg.c_out = 4;
  cfg.with_attention = false;
  std::size_t V = 4;
  auto params = random_params(cfg, V, 20);
  Rng rng(21);
  auto x1 = testutil::random_tensor<double>({3, 5, V}, rng);
  auto x2 = testutil::random_tensor<double>({3, 5, V}, rng);
  double a = 1.7, b = -0.6;
  Tensor<double> combo({3, 5, V});
  for (std::size_t i = 0; i < combo.size(); ++i)
    combo.data()[i] = a * x1.data()[i] + b * x2.data()[i];
  auto y1 = unik::slsu_forward(x1, cfg, params);
  auto y2 = unik::slsu_forward(x2, cfg, params);
  auto yc = unik::slsu_forward(combo, cfg, params);
  for (std::size_t i = 0; i < yc.size(); ++i)
    EXPECT_NEAR(yc.data()[i], a * y1.data()[i] + b * y2.data()[i], 1e-5);
}

namespace {

// Applies a joint permutation: out[.., v] = in[.., perm[v]].
Tensor<double> permute_joints(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
  Tensor<double> out(x.shape());
  std::size_t V = x.shape().back();
  std::size_t rows = x.size() / V;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t v = 0; v < V; ++v) out.data()[r * V + v] = x.data()[r * V + perm[v]];
  return out;
}

Tensor<double> conjugate(const Tensor<double>& w, const std::vector<std::size_t>& perm) {
  std::size_t V = w.extent(0);
  Tensor<double> out({V, V});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) out.at(i, j) = w.at(perm[i], perm[j]);
  return out;
}

}  // namespace

// Joint-permutation conjugation, exhaustive over all permutations for V <= 4:
// running on P(x) with every W replaced by P^T W P reproduces P(output).
TEST(SlsuForward, PermutationConjugationExhaustive) {
  for (std::size_t V : {3u, 4u}) {
    SlsuConfig cfg;
    cfg.heads = 2;
    cfg.c_in = 2;
    cfg.c_out = 3;
    auto params = random_params(cfg, V, 22 + V);
    Rng rng(23 + V);
    auto x = testutil::random_tensor<double>({2, 4, V}, rng);
    auto base = unik::slsu_forward(x, cfg, params);

    std::vector<std::size_t> perm(V);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      SlsuParams<double> conj;
      for (const auto& h : params.heads) {
        SlsuHead<double> hc;
        hc.W = conjugate(h.W, perm);
        hc.E = h.E;
        hc.E_theta = h.E_theta;
        hc.E_phi = h.E_phi;
        conj.heads.push_back(std::move(hc));
      }
      conj.residual_proj = params.residual_proj;
      auto px = permute_joints(x, perm);
      auto got = unik::slsu_forward(px, cfg, conj);
      auto expected = permute_joints(base, perm);
      for (std::size_t i = 0; i < got.size(); ++i)
        ASSERT_NEAR(got.data()[i], expected.data()[i], 1e-5);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

// Gradients of the full unit (attention on) match finite differences for
// x and every head tensor on a 2x6x4 input at 64-bit.
TEST(SlsuForward, GradMatchesFiniteDifferences) {
  SlsuConfig cfg;
  cfg.heads = 2;
  cfg.c_in = 2;
  cfg.c_out = 3;
  std::size_t V = 4;
  auto params = random_params(cfg, V, 30);
  Rng rng(31);
  auto x = testutil::random_tensor<double>({2, 6, V}, rng);
  auto r = testutil::random_tensor<double>({3, 6, V}, rng);
  auto loss = [&](const Tensor<double>&) {
    return unik::sum(unik::mul(unik::slsu_forward(x, cfg, params), r));
  };
  auto check = [&](Tensor<double>& target) {
    double err = unik::grad_check<double>(loss, target);
    EXPECT_LT(err, 1e-5);
  };
  double err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::slsu_forward(t, cfg, params), r));
      },
      x);
  EXPECT_LT(err, 1e-5);
  check(params.heads[0].W);
  check(params.heads[0].E);
  check(params.heads[0].E_theta);
  check(params.heads[0].E_phi);
  check(params.heads[1].W);
  ASSERT_TRUE(params.residual_proj.has_value());
  check(*params.residual_proj);
}

// Composed S-LSU -> T-LSU graph at 32-bit: analytic float gradients match a
// 64-bit central-difference oracle of the same computation to 1e-4.
TEST(ComposedUnits, Float32GradsMatchFloat64Oracle) {
  SlsuConfig cfg;
  cfg.heads = 2;
  cfg.c_in = 2;
  cfg.c_out = 3;
  std::size_t V = 4, T = 8;
  auto dparams = random_params(cfg, V, 40);
  unik::TlsuConfig tcfg;
  tcfg.channels = 3;
  tcfg.kernel_t = 3;
  Rng rng(41);
  auto dx = testutil::random_tensor<double>({2, T, V}, rng);
  auto dk = testutil::random_tensor<double>({3, 3, 3, 1}, rng, -0.4, 0.4);
  auto dr = testutil::random_tensor<double>({3, T, V}, rng);

  // Mirror everything into float32.
  auto to_float = [](const Tensor<double>& t) {
    Tensor<float> f(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) f.data()[i] = static_cast<float>(t.data()[i]);
    return f;
  };
  SlsuParams<float> fparams;
  for (const auto& h : dparams.heads)
    fparams.heads.push_back({to_float(h.W), to_float(h.E), to_float(h.E_theta),
                             to_float(h.E_phi)});
  fparams.residual_proj = to_float(*dparams.residual_proj);
  auto fx = to_float(dx);
  auto fk = to_float(dk);
  auto fr = to_float(dr);

  fx.set_requires_grad(true);
  auto fy = unik::sum(
      unik::mul(unik::tlsu_forward(unik::slsu_forward(fx, cfg, fparams), tcfg, fk), fr));
  fy.backward();
  const auto& analytic = fx.grad();

  double worst = 0;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    double eps = 1e-6;
    double saved = dx.data()[i];
    auto eval = [&]() {
      return unik::sum(
                 unik::mul(unik::tlsu_forward(unik::slsu_forward(dx, cfg, dparams), tcfg, dk),
                           dr))
          .item();
    };
    dx.data()[i] = saved + eps;
    double up = eval();
    dx.data()[i] = saved - eps;
    double down = eval();
    dx.data()[i] = saved;
    double cd = (up - down) / (2 * eps);
    double a = static_cast<double>(analytic[i]);
    worst = std::max(worst, std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-12}));
  }
  EXPECT_LT(worst, 1e-4);
}
