#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"
#include "unik/gradcheck.hpp"
#include "unik/tlsu.hpp"

using unik::Rng;
using unik::Shape;
using unik::Tensor;
using unik::TlsuConfig;

TEST(Tlsu, DeltaKernelIsIdentity) {
  TlsuConfig cfg;
  cfg.channels = 3;
  cfg.kernel_t = 9;
  Rng rng(1);
  auto x = testutil::random_tensor<double>({3, 12, 5}, rng);
  Tensor<double> w({3, 3, 9, 1});
  for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 4, 0) = 1.0;
  auto y = unik::tlsu_forward(x, cfg, w);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Tlsu, ReceptiveField) {
  TlsuConfig cfg;
  cfg.kernel_t = 9;
  cfg.dilation = 3;
  cfg.channels = 1;
  EXPECT_EQ(cfg.receptive_field(), 25u);
  cfg.dilation = 1;
  EXPECT_EQ(cfg.receptive_field(), 9u);
}

TEST(Tlsu, StrideHalvesFrames) {
  TlsuConfig cfg;
  cfg.channels = 2;
  cfg.kernel_t = 3;
  cfg.stride = 2;
  Rng rng(2);
  auto x = testutil::random_tensor<double>({2, 10, 4}, rng);
  auto w = testutil::random_tensor<double>({2, 2, 3, 1}, rng);
  auto y = unik::tlsu_forward(x, cfg, w);
  EXPECT_EQ(y.shape(), (Shape{2, 5, 4}));
  // Odd length rounds up.
  auto x2 = testutil::random_tensor<double>({2, 11, 4}, rng);
  EXPECT_EQ(unik::tlsu_forward(x2, cfg, w).extent(1), 6u);
}

TEST(Tlsu, ConfigValidation) {
  TlsuConfig cfg;
  cfg.channels = 2;
  cfg.kernel_t = 4;
  Tensor<double> x({2, 6, 3});
  Tensor<double> w({2, 2, 4, 1});
  EXPECT_THROW(unik::tlsu_forward(x, cfg, w), unik::config_error);
  cfg.kernel_t = 3;
  cfg.stride = 3;
  EXPECT_THROW(cfg.validate(), unik::config_error);
}

// The kernel has width 1 on the joint axis, so permuting joints of the input
// permutes the output identically.
TEST(Tlsu, JointPermutationEquivariant) {
  TlsuConfig cfg;
  cfg.channels = 2;
  cfg.kernel_t = 3;
  cfg.dilation = 2;
  Rng rng(3);
  std::size_t V = 5;
  auto x = testutil::random_tensor<double>({2, 7, V}, rng);
  auto w = testutil::random_tensor<double>({2, 2, 3, 1}, rng);
  auto y = unik::tlsu_forward(x, cfg, w);

  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor<double> xp(x.shape());
  for (std::size_t r = 0; r < x.size() / V; ++r)
    for (std::size_t v = 0; v < V; ++v) xp.data()[r * V + v] = x.data()[r * V + perm[v]];
  auto yp = unik::tlsu_forward(xp, cfg, w);
  for (std::size_t r = 0; r < y.size() / V; ++r)
    for (std::size_t v = 0; v < V; ++v)
      EXPECT_NEAR(yp.data()[r * V + v], y.data()[r * V + perm[v]], 1e-12);
}

TEST(Tlsu, GradMatchesFiniteDifferences) {
  TlsuConfig cfg;
  cfg.channels = 2;
  cfg.kernel_t = 3;
  cfg.dilation = 2;
  cfg.stride = 2;
  Rng rng(4);
  auto x = testutil::random_tensor<double>({2, 9, 3}, rng);
  auto w = testutil::random_tensor<double>({2, 2, 3, 1}, rng);
  auto r = testutil::random_tensor<double>({2, 5, 3}, rng);
  double err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::tlsu_forward(t, cfg, w), r));
      },
      x);
  EXPECT_LT(err, 1e-5);
  err = unik::grad_check<double>(
      [&](const Tensor<double>& t) {
        return unik::sum(unik::mul(unik::tlsu_forward(x, cfg, t), r));
      },
      w);
  EXPECT_LT(err, 1e-5);
}
