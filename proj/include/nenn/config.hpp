#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nenn/approx.hpp"
#include "nenn/attacks.hpp"
#include "nenn/dataset.hpp"
#include "nenn/selection.hpp"

namespace nenn {

struct DataConfig {
  // Synthetic data is used unless both IDX train paths are set.
  SyntheticSpec synthetic;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  std::filesystem::path train_images, train_labels, test_images, test_labels;

  bool uses_idx() const { return !train_images.empty(); }
};

struct ModelConfig {
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 3;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Epochs at which lr is multiplied by 0.1. Unset: 50% and 75% of epochs.
  std::optional<std::vector<std::size_t>> lr_decay_epochs;
  // Inner maximisation; epsilon 0 gives standard training.
  AttackConfig pgd_train{AttackKind::pgd, 8.0 / 255.0, 2.0 / 255.0, 5, 1.0, true};

  std::vector<std::size_t> decay_epochs() const;
};

struct DistillConfig {
  // Per target layer, in target-layer order. Empty: floor(d * k_fraction).
  std::vector<std::size_t> k;
  double k_fraction = 0.25;
  FitMethod method = ClosedFormFit{};
  std::size_t calib_size = 256;
  std::size_t holdout_size = 64;
  std::size_t s = 3;
};

struct FinetuneConfig {
  std::size_t epochs = 1;
  double lr = 0.01;
  bool adversarial = false;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t entropy_samples = 64;
  std::size_t entropy_inputs = 100;
};

struct SweepConfig {
  std::vector<double> ratios;
  std::vector<double> epsilons;  // in input units
};

struct CostConfig {
  std::filesystem::path fixture;
  std::vector<std::string> patterns;
};

struct JllConfig {
  std::size_t d = 512;
  std::size_t k = 256;
  std::size_t s = 3;
  std::size_t points = 50;
  double eps = 0.3;
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig training;
  DistillConfig distill;
  FinetuneConfig finetune;
  InjectionConfig injection;
  std::vector<AttackConfig> attacks;
  EvalConfig eval;
  SweepConfig sweeps;
  CostConfig cost;
  JllConfig jll;
  std::filesystem::path output_dir = "out";

  void validate() const;
};

// Relative paths inside the config resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

AttackConfig parse_attack(const nlohmann::json& j);
InjectionConfig parse_injection(const nlohmann::json& j);
nlohmann::json attack_to_json(const AttackConfig& a);
nlohmann::json injection_to_json(const InjectionConfig& c);

}  // namespace nenn
