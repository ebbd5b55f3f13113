#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nenn/approx.hpp"
#include "nenn/error.hpp"
#include "nenn/model.hpp"
#include "test_util.hpp"

namespace nenn {
namespace {

using test::random_tensor;

Model identity_net(std::size_t n) {
  Tensor w({n, n});
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  return Model({n}, n, {Layer::dense(w, Tensor({n}))});
}

// Attach closed-form approximations to every linear layer.
Model with_approx(Model m, std::mt19937_64& rng, std::size_t k_div = 2) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& l = m.layer(i);
    if (!l.is_linear()) continue;
    const std::size_t d = l.in_features();
    const auto w = l.weight.reshaped({l.out_features(), d});
    const auto calib = random_tensor({4 * d + 8, d}, rng, 0.0, 1.0);
    const auto p = sample_projection(std::max<std::size_t>(1, d / k_div), d, 3, i + 1);
    m.attach_approx(i, fit_approx(w, l.bias, calib, p, ClosedFormFit{}, i).params);
  }
  return m;
}

// Sign pattern of every linear layer's output; equal patterns mean no ReLU
// kink lies between two inputs.
std::vector<bool> activation_pattern(const Model& m, const Tensor& x, const ForwardOptions& o = {}) {
  ForwardTrace t;
  forward(m, x, o, &t);
  std::vector<bool> signs;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.layer(i).is_linear()) continue;
    for (double v : t.layers[i].output.values()) signs.push_back(v > 0);
  }
  return signs;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

TEST(Forward, IdentityNetworkReturnsInput) {
  const auto x = Tensor::vector({0.5, -2.0, 3.0});
  EXPECT_EQ(forward(identity_net(3), x), x);
}

TEST(Forward, AllOnesConvolution) {
  const Model m({5, 5, 1}, 9, {Layer::conv2d(Tensor::filled({1, 1, 3, 3}, 1.0), Tensor({1})),
                               Layer::flatten()});
  const auto y = forward(m, Tensor::filled({5, 5, 1}, 1.0));
  ASSERT_EQ(y.size(), 9u);
  for (double v : y.values()) EXPECT_EQ(v, 9.0);
}

TEST(Forward, Im2colMatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> small(1, 3), size(4, 8), kernel(1, 3), pad(0, 2);
    const std::size_t cin = small(rng), cout = small(rng), h = size(rng), w = size(rng);
    const std::size_t kh = kernel(rng), kw = kernel(rng), stride = small(rng), padding = pad(rng);
    const auto kernel_t = random_tensor({cout, cin, kh, kw}, rng);
    const auto bias = random_tensor({cout}, rng);
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
    const Model m({h, w, cin}, oh * ow * cout,
                  {Layer::conv2d(kernel_t, bias, stride, padding), Layer::flatten()});
    const auto x = random_tensor({h, w, cin}, rng);
    const auto y = forward(m, x);
    const auto ref = conv2d_direct(x, kernel_t, bias, stride, padding);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Forward, ShapeErrors) {
  EXPECT_THROW(forward(identity_net(3), Tensor({4})), ShapeError);
  EXPECT_THROW(Model({4}, 2, {Layer::dense(Tensor({2, 3}), Tensor({2}))}), ShapeError);
  EXPECT_THROW(Model({3}, 3, {}), ShapeError);
  EXPECT_THROW(Model({3}, 2, {Layer::dense(Tensor({3, 3}), Tensor({3}))}), ShapeError);
}

TEST(Forward, RatioZeroIsBitIdenticalToPlain) {
  std::mt19937_64 rng(2);
  const auto m = with_approx(test::tiny_conv_net(rng), rng);
  InjectionConfig c;
  c.mode = RatioMode{0.0};
  c.target_layers = {0, 3};
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
    EXPECT_EQ(forward(m, x, {&c, 7}), forward(m, x));
  }
}

TEST(Forward, FullInjectionOnLastLayerGivesApproximation) {
  std::mt19937_64 rng(3);
  const auto m = with_approx(test::tiny_conv_net(rng), rng);
  InjectionConfig c;
  c.mode = RatioMode{1.0};
  c.target_layers = {3};
  const auto x = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
  ForwardTrace t;
  forward(m, x, {}, &t);
  const auto y = forward(m, x, {&c, 0});
  EXPECT_EQ(y, approx_forward(*m.layer(3).approx, t.layers[3].input));
}

TEST(Forward, RejectsBadInjectionTargets) {
  std::mt19937_64 rng(4);
  const auto plain = test::tiny_conv_net(rng);
  const auto m = with_approx(plain, rng);
  const auto x = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
  InjectionConfig c;
  c.target_layers = {9};
  EXPECT_THROW(forward(m, x, {&c, 0}), ConfigError);
  c.target_layers = {1};
  EXPECT_THROW(forward(m, x, {&c, 0}), ConfigError);
  c.target_layers = {0};
  EXPECT_THROW(forward(plain, x, {&c, 0}), ConfigError);
}

TEST(Forward, NonFiniteLogitsAreFlagged) {
  Model m = identity_net(2);
  m.layer(0).weight[0] = INFINITY;
  EXPECT_THROW(forward(m, Tensor::vector({1.0, 1.0})), NumericalError);
}

TEST(Forward, DeterministicAndSkipEquivalent) {
  std::mt19937_64 rng(5);
  const auto m = with_approx(test::tiny_conv_net(rng, 6, 6, 2, 4, 3), rng);
  for (auto resample : {ProjectionResample::fixed, ProjectionResample::per_forward}) {
    for (double r : {0.3, 0.9}) {
      InjectionConfig c;
      c.mode = RatioMode{r};
      c.resample = resample;
      c.target_layers = {0, 3};
      for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_tensor({6, 6, 2}, rng, 0.0, 1.0);
        const ForwardOptions skip{&c, 11, true}, full{&c, 11, false};
        const auto a = forward(m, x, skip);
        EXPECT_EQ(a, forward(m, x, skip));
        EXPECT_EQ(a, forward(m, x, full));
      }
    }
  }
}

TEST(Forward, StructuredInjectionRealizesPattern) {
  std::mt19937_64 rng(6);
  const auto m = with_approx(test::tiny_conv_net(rng, 6, 6, 2, 4, 3), rng);
  InjectionConfig c;
  c.mode = StructuredMode{1, 2};
  c.target_layers = {0};
  ForwardTrace t;
  forward(m, random_tensor({6, 6, 2}, rng, 0.0, 1.0), {&c, 0}, &t);
  const auto& mask = t.layers[0].mask;
  ASSERT_EQ(mask.size(), 16u * 4u);
  for (std::size_t g = 0; g < mask.size(); g += 2) EXPECT_EQ(mask.bits[g] + mask.bits[g + 1], 1);
}

TEST(Forward, PerForwardResampleVariesWithSeed) {
  std::mt19937_64 rng(7);
  const auto m = with_approx(test::tiny_conv_net(rng, 6, 6, 2, 4, 3), rng);
  InjectionConfig c;
  c.mode = RatioMode{0.9};
  c.resample = ProjectionResample::per_forward;
  c.target_layers = {0, 3};
  const auto x = random_tensor({6, 6, 2}, rng, 0.0, 1.0);
  bool differs = false;
  for (std::uint64_t s = 1; s < 10 && !differs; ++s) differs = forward(m, x, {&c, s}) != forward(m, x, {&c, 0});
  EXPECT_TRUE(differs);
}

TEST(Gradient, LogisticClosedForm) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_tensor({6}, rng);
    Tensor weight({2, 6});
    for (std::size_t i = 0; i < 6; ++i) weight[6 + i] = w[i];
    const Model m({6}, 2, {Layer::dense(weight, Tensor({2}))});
    const auto x = random_tensor({6}, rng);
    double wx = 0.0;
    for (std::size_t i = 0; i < 6; ++i) wx += w[i] * x[i];
    const double sigma = 1.0 / (1.0 + std::exp(-wx));
    for (std::size_t y : {0u, 1u}) {
      const auto g = input_grad(m, x, y);
      for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], (sigma - y) * w[i], 1e-12);
    }
  }
}

TEST(Gradient, ZeroAtStationaryPoint) {
  // Identical logit rows: the loss is constant in x.
  std::mt19937_64 rng(9);
  const auto row = random_tensor({4}, rng);
  Tensor weight({3, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 4; ++i) weight[r * 4 + i] = row[i];
  const Model m({4}, 3, {Layer::dense(weight, Tensor({3}))});
  const auto g = input_grad(m, random_tensor({4}, rng), 1);
  for (double v : g.values()) EXPECT_LT(std::abs(v), 1e-8);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const double h = 1e-3;
  std::size_t checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Model m = test::tiny_conv_net(rng, 5, 5, 2, 3, 3, 1 + trial % 2, trial % 2);
    ASSERT_LE(m.parameter_count(), 1000u);
    const auto x = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
    const std::size_t y = trial % 3;
    const auto lg = loss_and_grad(m, x, y, {}, true, true);
    const auto pattern = activation_pattern(m, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      if (activation_pattern(m, xp) != pattern || activation_pattern(m, xm) != pattern) continue;
      const double fd = (cross_entropy(forward(m, xp), y) - cross_entropy(forward(m, xm), y)) / (2 * h);
      EXPECT_LT(rel_err(lg.input_grad[i], fd), 1e-4) << "input " << i;
      ++checked;
    }
    for (std::size_t l = 0; l < m.size(); ++l) {
      if (!m.layer(l).is_linear()) continue;
      for (Tensor Layer::*which : {&Layer::weight, &Layer::bias}) {
        const std::size_t count = (m.layer(l).*which).size();
        for (std::size_t j = 0; j < count; ++j) {
          Model mp = m, mm = m;
          (mp.layer(l).*which)[j] += h;
          (mm.layer(l).*which)[j] -= h;
          if (activation_pattern(mp, x) != pattern || activation_pattern(mm, x) != pattern) continue;
          const double fd = (cross_entropy(forward(mp, x), y) - cross_entropy(forward(mm, x), y)) / (2 * h);
          const auto& g = which == &Layer::weight ? lg.params[l].weight : lg.params[l].bias;
          EXPECT_LT(rel_err(g[j], fd), 1e-4) << "layer " << l << " param " << j;
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 1500u);
}

TEST(Gradient, StopGradientThroughInjectedPositions) {
  std::mt19937_64 rng(11);
  const auto m = with_approx(test::tiny_conv_net(rng), rng);
  const auto x = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
  InjectionConfig c;
  c.mode = RatioMode{1.0};
  c.target_layers = {0};
  // Every first-layer output comes from z~, so nothing reaches the input.
  const auto lg = loss_and_grad(m, x, 0, {&c, 0}, true, true);
  for (double v : lg.input_grad.values()) EXPECT_EQ(v, 0.0);
  for (double v : lg.params[0].weight.values()) EXPECT_EQ(v, 0.0);

  // With partial injection the gradient equals that of a network whose
  // injected outputs are frozen constants: check by finite differences on the
  // last layer, whose inputs are unaffected by the freeze.
  c.mode = RatioMode{0.5};
  const auto part = loss_and_grad(m, x, 1, {&c, 0}, true, true);
  const double h = 1e-3;
  for (std::size_t j = 0; j < m.layer(3).bias.size(); ++j) {
    Model mp = m, mm = m;
    mp.layer(3).bias[j] += h;
    mm.layer(3).bias[j] -= h;
    const double fd = (cross_entropy(forward(mp, x, {&c, 0}), 1) -
                       cross_entropy(forward(mm, x, {&c, 0}), 1)) / (2 * h);
    EXPECT_LT(rel_err(part.params[3].bias[j], fd), 1e-4);
  }
}

TEST(Gradient, AccumulateAndZero) {
  std::mt19937_64 rng(12);
  const auto m = test::tiny_conv_net(rng);
  auto total = zero_grad(m);
  const auto g = loss_and_grad(m, random_tensor({5, 5, 2}, rng, 0.0, 1.0), 0, {}, false, true).params;
  accumulate(total, g, 0.5);
  accumulate(total, g, 0.5);
  for (std::size_t l = 0; l < m.size(); ++l) {
    for (std::size_t j = 0; j < g[l].weight.size(); ++j) EXPECT_NEAR(total[l].weight[j], g[l].weight[j], 1e-15);
  }
  EXPECT_THROW(cross_entropy(Tensor::vector({1, 2}), 2), ConfigError);
}

}  // namespace
}  // namespace nenn
