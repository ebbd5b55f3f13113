#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nenn/model.hpp"
#include "nenn/selection.hpp"

namespace nenn {

// Bit-level operation pricing. A b-bit multiply costs b^2 BitOps and a b-bit
// add costs b, so one 4-bit multiply = 16 BitOps = four 4-bit additions.
struct OpCountPolicy {
  unsigned precise_bits = 16;
  unsigned approx_bits = 4;
  unsigned projection_add_bits = 16;
  // k used for layers without an attached approximation: floor(d * k_fraction).
  double default_k_fraction = 0.25;

  static double mult_cost(unsigned bits) { return static_cast<double>(bits) * bits; }
  static double add_cost(unsigned bits) { return static_cast<double>(bits); }

  void validate() const;
  std::size_t default_k(std::size_t d) const;
};

// One inner-product layer: `positions` distinct input vectors of length d,
// each feeding n outputs (dense: positions = 1).
struct LayerDims {
  std::string name;
  std::size_t positions = 1;
  std::size_t n = 0;
  std::size_t d = 0;
  bool injectable = true;
};

struct LayerInjection {
  double ratio = 0.0;  // fraction of outputs whose precise computation is skipped
  std::size_t k = 0;
  std::size_t s = 3;
};

struct LayerCost {
  std::string name;
  double precise_bitops = 0.0;
  double approx_mult_bitops = 0.0;
  double projection_add_bitops = 0.0;
  double baseline_bitops = 0.0;

  double total() const { return precise_bitops + approx_mult_bitops + projection_add_bitops; }
};

struct CostReport {
  std::vector<LayerCost> layers;
  double precise_bitops = 0.0;
  double approx_mult_bitops = 0.0;
  double projection_add_bitops = 0.0;
  double grand_total = 0.0;
  double baseline_total = 0.0;
  double reduction_vs_baseline = 0.0;  // 1 - grand_total / baseline_total
};

LayerCost layer_bitops(const LayerDims& dims,
                       const std::optional<LayerInjection>& injection,
                       const OpCountPolicy& policy = {});

CostReport sum_costs(std::vector<LayerCost> layers);

// Static cost of a model under an injection config (null = plain model).
CostReport model_bitops(const Model& model, const InjectionConfig* cfg,
                        const OpCountPolicy& policy = {});

std::vector<LayerDims> model_dims(const Model& model);

// Cost of a dimension table with every injectable layer at `ratio` and
// k = policy.default_k(d).
CostReport table_bitops(std::span<const LayerDims> dims, double ratio,
                        const OpCountPolicy& policy = {}, std::size_t s = 3);

// An injection pattern for cost tables. Structured labels follow the
// "injected:group" convention, so "7:8" injects 7 of every 8 outputs.
struct InjectionPattern {
  std::string label;
  double ratio = 0.0;

  static InjectionPattern from_ratio(double ratio);
  static InjectionPattern structured(std::size_t keep, std::size_t group);
  // Parses "7:8" (injected:group) or "0.9" / "90%".
  static InjectionPattern parse(const std::string& text);
};

struct PatternCost {
  InjectionPattern pattern;
  CostReport report;
};

std::vector<PatternCost> structured_cost_table(
    std::span<const LayerDims> dims, std::span<const InjectionPattern> patterns,
    const OpCountPolicy& policy = {}, std::size_t s = 3);

struct DimsTable {
  std::string name;
  int version = 0;
  std::vector<LayerDims> layers;
};

// Versioned JSON dimension fixture (see data/resnet18_cifar10_dims.json).
DimsTable load_dims_table(const std::filesystem::path& path);
DimsTable parse_dims_table(const nlohmann::json& j);

std::string cost_table_csv(std::span<const PatternCost> rows);
nlohmann::json cost_report_json(const CostReport& report);

}  // namespace nenn
