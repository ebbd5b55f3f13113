#pragma once

#include <cstddef>
#include <string>

#include "nenn/model.hpp"

namespace nenn {

enum class AttackKind { fgsm, pgd, mifgsm };

const char* attack_kind_name(AttackKind kind);

// White-box l-infinity attack settings. Inputs live in [0, 1].
struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  std::size_t steps = 20;
  double decay = 1.0;        // mifgsm momentum
  bool random_start = true;  // pgd only

  void validate() const;
  // e.g. "pgd20_eps8/255"
  std::string label() const;
};

// All attacks take the defended model's forward options. Gradient query t
// runs with noise seed derive_seed(target.noise_seed, {t}), so stochastic
// models are re-sampled on every query and the whole attack is reproducible
// from target.noise_seed.
Tensor fgsm(const Model& model, const Tensor& x, std::size_t label,
            const AttackConfig& cfg, const ForwardOptions& target = {});
Tensor pgd(const Model& model, const Tensor& x, std::size_t label,
           const AttackConfig& cfg, const ForwardOptions& target = {});
Tensor mifgsm(const Model& model, const Tensor& x, std::size_t label,
              const AttackConfig& cfg, const ForwardOptions& target = {});

// Dispatches on cfg.kind.
Tensor run_attack(const Model& model, const Tensor& x, std::size_t label,
                  const AttackConfig& cfg, const ForwardOptions& target = {});

}  // namespace nenn
