#include "nenn/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "nenn/error.hpp"
#include "nenn/rng.hpp"

namespace nenn {

namespace {

constexpr std::uint64_t kRandomStartStream = 0xffffffffULL;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Per-element box: the eps-ball around x intersected with [0, 1]. The bounds
// are nudged so that |bound - x| <= eps also holds in floating point.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  Box(const Tensor& x, double eps) : lo(x.size()), hi(x.size()) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      double l = x[i] - eps;
      while (x[i] - l > eps) l = std::nextafter(l, x[i]);
      double h = x[i] + eps;
      while (h - x[i] > eps) h = std::nextafter(h, x[i]);
      lo[i] = std::max(l, 0.0);
      hi[i] = std::min(h, 1.0);
      if (lo[i] > hi[i]) lo[i] = hi[i] = std::clamp(x[i], 0.0, 1.0);
    }
  }

  double clamp(std::size_t i, double v) const { return std::clamp(v, lo[i], hi[i]); }
};

ForwardOptions query(const ForwardOptions& target, std::uint64_t t) {
  ForwardOptions o = target;
  o.noise_seed = derive_seed(target.noise_seed, {t});
  return o;
}

void check(const AttackConfig& cfg, AttackKind expected) {
  if (cfg.kind != expected) {
    throw ConfigError(std::string("attack config kind is ") + attack_kind_name(cfg.kind) +
                      ", expected " + attack_kind_name(expected));
  }
  cfg.validate();
}

}  // namespace

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::pgd:
      return "pgd";
    case AttackKind::mifgsm:
      return "mifgsm";
  }
  return "unknown";
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (kind != AttackKind::fgsm) {
    if (!(step_size > 0.0)) throw ConfigError("attack step size must be > 0");
    if (steps < 1) throw ConfigError("attack needs at least one step");
  }
  if (kind == AttackKind::mifgsm && !(decay >= 0.0)) {
    throw ConfigError("mifgsm decay must be >= 0");
  }
}

std::string AttackConfig::label() const {
  std::ostringstream out;
  out << attack_kind_name(kind);
  if (kind != AttackKind::fgsm) out << steps;
  out << "_eps" << std::lround(epsilon * 255.0) << "/255";
  return out.str();
}

Tensor fgsm(const Model& model, const Tensor& x, std::size_t label,
            const AttackConfig& cfg, const ForwardOptions& target) {
  check(cfg, AttackKind::fgsm);
  const Box box(x, cfg.epsilon);
  const Tensor g = input_grad(model, x, label, query(target, 0));
  Tensor adv = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    adv[i] = box.clamp(i, x[i] + cfg.epsilon * sign(g[i]));
  }
  return adv;
}

Tensor pgd(const Model& model, const Tensor& x, std::size_t label,
           const AttackConfig& cfg, const ForwardOptions& target) {
  check(cfg, AttackKind::pgd);
  const Box box(x, cfg.epsilon);
  Tensor adv = x;
  if (cfg.random_start) {
    std::mt19937_64 gen(derive_seed(target.noise_seed, {kRandomStartStream}));
    std::uniform_real_distribution<double> start(-cfg.epsilon, cfg.epsilon);
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = box.clamp(i, x[i] + start(gen));
  }
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Tensor g = input_grad(model, adv, label, query(target, t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      adv[i] = box.clamp(i, adv[i] + cfg.step_size * sign(g[i]));
    }
  }
  return adv;
}

Tensor mifgsm(const Model& model, const Tensor& x, std::size_t label,
              const AttackConfig& cfg, const ForwardOptions& target) {
  check(cfg, AttackKind::mifgsm);
  const Box box(x, cfg.epsilon);
  Tensor adv = x;
  std::vector<double> momentum(x.size(), 0.0);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Tensor g = input_grad(model, adv, label, query(target, t));
    double l1 = 0.0;
    for (double v : g.values()) l1 += std::abs(v);
    const double norm = l1 < 1e-12 ? 1.0 : l1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      momentum[i] = cfg.decay * momentum[i] + g[i] / norm;
      adv[i] = box.clamp(i, adv[i] + cfg.step_size * sign(momentum[i]));
    }
  }
  return adv;
}

Tensor run_attack(const Model& model, const Tensor& x, std::size_t label,
                  const AttackConfig& cfg, const ForwardOptions& target) {
  switch (cfg.kind) {
    case AttackKind::fgsm:
      return fgsm(model, x, label, cfg, target);
    case AttackKind::pgd:
      return pgd(model, x, label, cfg, target);
    case AttackKind::mifgsm:
      return mifgsm(model, x, label, cfg, target);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace nenn
