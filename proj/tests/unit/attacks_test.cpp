#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nenn/attacks.hpp"
#include "nenn/error.hpp"
#include "test_util.hpp"

namespace nenn {
namespace {

using test::random_tensor;

// Two-class logistic model: logit0 = w.x + b, logit1 = 0.
Model logistic(const Tensor& w, double b) {
  Tensor weight({2, w.size()});
  for (std::size_t i = 0; i < w.size(); ++i) weight[i] = w[i];
  Tensor bias({2});
  bias[0] = b;
  return Model({w.size()}, 2, {Layer::dense(weight, bias)});
}

Tensor unit_input(Shape shape, std::mt19937_64& rng) {
  auto x = random_tensor(std::move(shape), rng, 0.0, 1.0);
  // Pin some coordinates to the domain edges.
  std::uniform_int_distribution<int> pick(0, 9);
  for (double& v : x.values()) {
    const int p = pick(rng);
    if (p == 0) v = 0.0;
    if (p == 1) v = 1.0;
  }
  return x;
}

AttackConfig config(AttackKind kind, double eps, double step, std::size_t steps) {
  AttackConfig c;
  c.kind = kind;
  c.epsilon = eps;
  c.step_size = step;
  c.steps = steps;
  return c;
}

TEST(Fgsm, MatchesLogisticClosedForm) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_tensor({6}, rng);
    const auto x = random_tensor({6}, rng, 0.2, 0.8);
    const Model m = logistic(w, 0.1);
    const double eps = 0.05;
    // For label 0 the loss gradient is (p0 - 1) w, so the step is -eps sign(w).
    const auto adv = fgsm(m, x, 0, config(AttackKind::fgsm, eps, eps, 1));
    for (std::size_t i = 0; i < 6; ++i) {
      const double expect = x[i] - eps * (w[i] > 0 ? 1.0 : -1.0);
      EXPECT_DOUBLE_EQ(adv[i], expect);
    }
    // Label 1 pushes the other way.
    const auto adv1 = fgsm(m, x, 1, config(AttackKind::fgsm, eps, eps, 1));
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_DOUBLE_EQ(adv1[i], x[i] + eps * (w[i] > 0 ? 1.0 : -1.0));
    }
  }
}

TEST(Fgsm, IncreasesLossOnLinearModel) {
  std::mt19937_64 rng(4);
  const auto w = random_tensor({8}, rng);
  const Model m = logistic(w, 0.0);
  const auto x = random_tensor({8}, rng, 0.3, 0.7);
  const auto adv = fgsm(m, x, 0, config(AttackKind::fgsm, 0.1, 0.1, 1));
  EXPECT_GT(cross_entropy(forward(m, adv), 0), cross_entropy(forward(m, x), 0));
}

TEST(Attacks, ZeroBudgetLeavesInputUnchanged) {
  std::mt19937_64 rng(5);
  const Model m = test::tiny_conv_net(rng);
  const auto x = unit_input({5, 5, 2}, rng);
  for (auto kind : {AttackKind::fgsm, AttackKind::pgd, AttackKind::mifgsm}) {
    EXPECT_EQ(run_attack(m, x, 1, config(kind, 0.0, 0.01, 5), {}), x) << attack_kind_name(kind);
  }
}

TEST(Attacks, ContractsHoldOnRandomCases) {
  std::mt19937_64 rng(6);
  const double eps_choices[] = {0.0, 1.0 / 255, 8.0 / 255, 16.0 / 255, 0.3};
  std::uniform_int_distribution<int> eps_pick(0, 4), kind_pick(0, 2), label_pick(0, 2);
  std::uniform_int_distribution<std::size_t> steps_pick(1, 6);
  std::uniform_real_distribution<double> step_frac(0.1, 1.5);
  for (int trial = 0; trial < 200; ++trial) {
    Model m = test::tiny_conv_net(rng);
    InjectionConfig inj;
    inj.mode = RatioMode{0.5};
    inj.resample = ProjectionResample::per_forward;
    inj.target_layers = {0};
    const bool stochastic = trial % 3 == 0;
    if (stochastic) {
      const auto& l = m.layer(0);
      const auto w = l.weight.reshaped({l.out_features(), l.in_features()});
      const auto calib = random_tensor({64, l.in_features()}, rng, 0.0, 1.0);
      const auto p = sample_projection(9, l.in_features(), 3, trial);
      m.attach_approx(0, fit_approx(w, l.bias, calib, p, ClosedFormFit{}, 0).params);
    }
    ForwardOptions target;
    target.injection = stochastic ? &inj : nullptr;
    target.noise_seed = trial;
    const auto x = unit_input({5, 5, 2}, rng);
    const double eps = eps_choices[eps_pick(rng)];
    const auto kind = static_cast<AttackKind>(kind_pick(rng));
    auto cfg = config(kind, eps, std::max(eps, 1e-3) * step_frac(rng), steps_pick(rng));
    const std::size_t label = label_pick(rng);
    const auto adv = run_attack(m, x, label, cfg, target);
    ASSERT_EQ(adv.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_LE(std::abs(adv[i] - x[i]), eps) << "trial " << trial;
      ASSERT_GE(adv[i], 0.0);
      ASSERT_LE(adv[i], 1.0);
    }

    const double e = std::max(eps, 1.0 / 255);
    const auto f = fgsm(m, x, label, config(AttackKind::fgsm, e, e, 1), target);
    auto one = config(AttackKind::pgd, e, e, 1);
    one.random_start = false;
    ASSERT_EQ(pgd(m, x, label, one, target), f) << "trial " << trial;

    auto plain = config(AttackKind::pgd, e, cfg.step_size, cfg.steps);
    plain.random_start = false;
    auto mi = config(AttackKind::mifgsm, e, cfg.step_size, cfg.steps);
    mi.decay = 0.0;
    ASSERT_EQ(mifgsm(m, x, label, mi, target), pgd(m, x, label, plain, target))
        << "trial " << trial;
  }
}

TEST(Attacks, DeterministicGivenNoiseSeed) {
  std::mt19937_64 rng(7);
  const Model m = test::tiny_conv_net(rng);
  const auto x = unit_input({5, 5, 2}, rng);
  const auto cfg = config(AttackKind::pgd, 8.0 / 255, 2.0 / 255, 10);
  ForwardOptions a;
  a.noise_seed = 11;
  ForwardOptions b;
  b.noise_seed = 12;
  EXPECT_EQ(pgd(m, x, 0, cfg, a), pgd(m, x, 0, cfg, a));
  // One short step cannot wash out the random start.
  const auto short_cfg = config(AttackKind::pgd, 8.0 / 255, 0.5 / 255, 1);
  EXPECT_NE(pgd(m, x, 0, short_cfg, a), pgd(m, x, 0, short_cfg, b));
}

TEST(Attacks, PgdIsAtLeastAsStrongAsNothing) {
  std::mt19937_64 rng(8);
  const auto w = random_tensor({8}, rng);
  const Model m = logistic(w, 0.0);
  const auto x = random_tensor({8}, rng, 0.3, 0.7);
  auto cfg = config(AttackKind::pgd, 0.05, 0.01, 20);
  cfg.random_start = false;
  const auto adv = pgd(m, x, 0, cfg);
  // On a linear model 20 steps of 0.01 reach the corner of the 0.05 ball.
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(std::abs(adv[i] - x[i]), 0.05, 1e-12);
}

TEST(AttackConfig, Validation) {
  EXPECT_THROW(config(AttackKind::pgd, -0.1, 0.01, 1).validate(), ConfigError);
  EXPECT_THROW(config(AttackKind::pgd, NAN, 0.01, 1).validate(), ConfigError);
  EXPECT_THROW(config(AttackKind::pgd, 0.1, 0.0, 1).validate(), ConfigError);
  EXPECT_THROW(config(AttackKind::mifgsm, 0.1, 0.01, 0).validate(), ConfigError);
  auto mi = config(AttackKind::mifgsm, 0.1, 0.01, 1);
  mi.decay = -1.0;
  EXPECT_THROW(mi.validate(), ConfigError);
  EXPECT_NO_THROW(config(AttackKind::fgsm, 0.1, 0.0, 0).validate());

  std::mt19937_64 rng(9);
  const Model m = test::tiny_conv_net(rng);
  const auto x = unit_input({5, 5, 2}, rng);
  EXPECT_THROW(fgsm(m, x, 0, config(AttackKind::pgd, 0.1, 0.1, 1)), ConfigError);
}

TEST(AttackConfig, Label) {
  EXPECT_EQ(config(AttackKind::pgd, 8.0 / 255, 2.0 / 255, 20).label(), "pgd20_eps8/255");
  EXPECT_EQ(config(AttackKind::fgsm, 16.0 / 255, 0, 1).label(), "fgsm_eps16/255");
}

}  // namespace
}  // namespace nenn
