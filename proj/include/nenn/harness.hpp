#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nenn/attacks.hpp"
#include "nenn/config.hpp"
#include "nenn/costmodel.hpp"
#include "nenn/dataset.hpp"
#include "nenn/model.hpp"

namespace nenn {

// Conv(c1, k x k) -> ReLU -> Conv(c2, k x k) -> ReLU -> Flatten -> Dense(K),
// He-initialised from `seed`. Parameters are float32-representable.
Model desk_model(const ModelConfig& cfg, const Shape& input_shape,
                 std::size_t num_classes, std::uint64_t seed);

// Rounds every weight and bias to the nearest float32.
void round_to_float(Model& model);

// (train, test) as described by the config.
std::pair<Dataset, Dataset> load_data(const DataConfig& cfg);

struct TrainOptions {
  std::size_t epochs = 0;
  std::size_t batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> decay_epochs;  // lr *= 0.1 at the start of each
  // Replace each sample by this attack's output before the update.
  std::optional<AttackConfig> adversarial;
  // Forward with injection active. Approximation parameters stay frozen.
  const InjectionConfig* injection = nullptr;
  std::uint64_t seed = 0;
};

struct TrainLog {
  double initial_loss = 0.0;  // mean loss of the first batch, before its update
  std::vector<double> epoch_loss;
};

// Minibatch SGD with momentum and weight decay. Throws DivergenceError when
// the loss becomes non-finite.
Model train(Model model, const Dataset& data, const TrainOptions& options,
            TrainLog* log = nullptr);

Model adversarial_train(Model model, const Dataset& data, const TrainConfig& cfg,
                        std::uint64_t seed, TrainLog* log = nullptr);

struct LayerDistillReport {
  std::size_t layer = 0;
  std::size_t k = 0;
  FitReport fit;
  double heldout_mse = 0.0;
  double output_variance = 0.0;
};

// Fits and attaches ApproxParams for every target layer from the precise
// patches of clean training inputs.
Model distill_approx(Model model, const Dataset& data, const DistillConfig& cfg,
                     const std::set<std::size_t>& targets, std::uint64_t seed,
                     std::vector<LayerDistillReport>* report = nullptr);

Model finetune(Model model, const Dataset& data, const FinetuneConfig& cfg,
               const TrainConfig& training, const InjectionConfig& injection,
               std::uint64_t seed, TrainLog* log = nullptr);

// Sample i is evaluated with noise seed derive_seed(seed, {i}).
double clean_accuracy(const Model& model, const Dataset& data,
                      const InjectionConfig* injection, std::uint64_t seed);
double robust_accuracy(const Model& model, const Dataset& data,
                       const AttackConfig& attack,
                       const InjectionConfig* injection, std::uint64_t seed);

// Shannon entropy (nats) of a histogram.
double histogram_entropy(std::span<const std::size_t> counts);

// Entropy of the predicted class over n_samples forwards, forward t using
// noise seed derive_seed(options.noise_seed, {t}).
double entropy_estimate(const Model& model, const Tensor& x,
                        std::size_t n_samples, const ForwardOptions& options);

struct LayerFraction {
  std::size_t layer = 0;
  double configured = 0.0;
  double realized = 0.0;
};

std::vector<LayerFraction> realized_injection(const Model& model,
                                              const Dataset& data,
                                              const InjectionConfig& injection,
                                              std::uint64_t seed);

// Copy of the model with N(0, sigma^2) noise added to the pre-activations of
// `layers` (all linear layers when empty) on every forward.
Model rse_baseline(Model model, double sigma, const std::set<std::size_t>& layers = {});

struct AttackResult {
  std::string label;
  double robust_accuracy = 0.0;
  double seconds = 0.0;
};

struct EvalResult {
  double clean_accuracy = 0.0;
  std::vector<AttackResult> attacks;
  std::vector<LayerFraction> fractions;
  double entropy = 0.0;  // mean over entropy inputs; 0 without per-forward randomness
  double seconds = 0.0;
};

struct EvalOptions {
  const InjectionConfig* injection = nullptr;
  std::vector<AttackConfig> attacks;
  std::size_t entropy_samples = 0;  // 0 skips the entropy estimate
  std::size_t entropy_inputs = 0;
  std::uint64_t seed = 0;
};

EvalResult evaluate(const Model& model, const Dataset& test, const EvalOptions& options);

struct SeedRun {
  std::uint64_t seed = 0;
  Model baseline;
  Model method;
  TrainLog train_log{};
  TrainLog finetune_log{};
  std::vector<LayerDistillReport> distill{};
  double train_seconds = 0.0;
  double distill_seconds = 0.0;
  double finetune_seconds = 0.0;
};

// Adversarial training, distillation and fine-tuning for one seed.
SeedRun train_pipeline(const ExperimentConfig& cfg, const Dataset& train,
                       std::uint64_t seed);

struct SeedReport {
  std::uint64_t seed = 0;
  EvalResult baseline;
  EvalResult method;
  double train_seconds = 0.0;
  double distill_seconds = 0.0;
  double finetune_seconds = 0.0;
  std::vector<LayerDistillReport> distill{};
};

struct ExperimentReport {
  std::vector<SeedReport> seeds;
  CostReport cost;
  bool incomplete = false;
  std::string failed_stage;
  std::string error;
};

nlohmann::json report_json(const ExperimentReport& report, const ExperimentConfig& cfg);

// Runs every stage for every eval seed and writes report.json, report.csv,
// ratio_sweep.csv and eps_sweep.csv into cfg.output_dir. Sweeps use the first
// PGD attack in cfg.attacks (else the first attack, else PGD-20 at 8/255). On a stage failure
// the partial report is written with "incomplete": true and StageError is
// thrown.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

}  // namespace nenn
