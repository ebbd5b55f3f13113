#include "nenn/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nenn/error.hpp"

namespace nenn {

void OpCountPolicy::validate() const {
  if (precise_bits == 0 || approx_bits == 0 || projection_add_bits == 0) {
    throw ConfigError("operand widths must be positive");
  }
  if (!(default_k_fraction > 0.0 && default_k_fraction <= 1.0)) {
    throw ConfigError("default k fraction must lie in (0, 1]");
  }
}

std::size_t OpCountPolicy::default_k(std::size_t d) const {
  const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(d) * default_k_fraction));
  return std::max<std::size_t>(k, 1);
}

LayerCost layer_bitops(const LayerDims& dims,
                       const std::optional<LayerInjection>& injection,
                       const OpCountPolicy& policy) {
  policy.validate();
  if (dims.positions == 0 || dims.n == 0 || dims.d == 0) {
    throw ConfigError("layer '" + dims.name + "' has a zero dimension");
  }
  const double outputs = static_cast<double>(dims.positions) * static_cast<double>(dims.n);
  const double d = static_cast<double>(dims.d);
  const double precise_mac = OpCountPolicy::mult_cost(policy.precise_bits) +
                             OpCountPolicy::add_cost(policy.precise_bits);

  LayerCost cost;
  cost.name = dims.name;
  cost.baseline_bitops = outputs * d * precise_mac;
  if (!injection) {
    cost.precise_bitops = cost.baseline_bitops;
    return cost;
  }
  const auto& inj = *injection;
  if (!(inj.ratio >= 0.0 && inj.ratio <= 1.0)) throw ConfigError("injection ratio must lie in [0, 1]");
  if (inj.k == 0 || inj.s == 0) throw ConfigError("approximation k and s must be positive");

  const double k = static_cast<double>(inj.k);
  cost.precise_bitops = (1.0 - inj.ratio) * outputs * d * precise_mac;
  cost.approx_mult_bitops = outputs * k *
                            (OpCountPolicy::mult_cost(policy.approx_bits) +
                             OpCountPolicy::add_cost(policy.approx_bits));
  // One projection per distinct input vector; each of the k rows touches d/s
  // entries on average.
  cost.projection_add_bitops = static_cast<double>(dims.positions) * k * d /
                               static_cast<double>(inj.s) *
                               OpCountPolicy::add_cost(policy.projection_add_bits);
  return cost;
}

CostReport sum_costs(std::vector<LayerCost> layers) {
  CostReport r;
  for (const auto& l : layers) {
    r.precise_bitops += l.precise_bitops;
    r.approx_mult_bitops += l.approx_mult_bitops;
    r.projection_add_bitops += l.projection_add_bitops;
    r.baseline_total += l.baseline_bitops;
  }
  r.grand_total = r.precise_bitops + r.approx_mult_bitops + r.projection_add_bitops;
  r.reduction_vs_baseline = r.baseline_total > 0.0 ? 1.0 - r.grand_total / r.baseline_total : 0.0;
  r.layers = std::move(layers);
  return r;
}

std::vector<LayerDims> model_dims(const Model& model) {
  std::vector<LayerDims> dims;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& l = model.layer(i);
    if (!l.is_linear()) continue;
    dims.push_back({std::string(layer_kind_name(l.kind)) + std::to_string(i),
                    model.positions(i), l.out_features(), l.in_features(), true});
  }
  return dims;
}

CostReport model_bitops(const Model& model, const InjectionConfig* cfg,
                        const OpCountPolicy& policy) {
  std::vector<LayerCost> layers;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& l = model.layer(i);
    if (!l.is_linear()) continue;
    const LayerDims dims{std::string(layer_kind_name(l.kind)) + std::to_string(i),
                         model.positions(i), l.out_features(), l.in_features(), true};
    std::optional<LayerInjection> inj;
    if (cfg && cfg->target_layers.count(i)) {
      inj = LayerInjection{cfg->nominal_ratio(),
                           l.approx ? l.approx->k() : policy.default_k(dims.d),
                           l.approx ? l.approx->projection().s() : 3};
    }
    layers.push_back(layer_bitops(dims, inj, policy));
  }
  return sum_costs(std::move(layers));
}

CostReport table_bitops(std::span<const LayerDims> dims, double ratio,
                        const OpCountPolicy& policy, std::size_t s) {
  std::vector<LayerCost> layers;
  for (const auto& l : dims) {
    std::optional<LayerInjection> inj;
    if (l.injectable) inj = LayerInjection{ratio, policy.default_k(l.d), s};
    layers.push_back(layer_bitops(l, inj, policy));
  }
  return sum_costs(std::move(layers));
}

InjectionPattern InjectionPattern::from_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  std::ostringstream label;
  label << "ratio " << ratio * 100.0 << "%";
  return {label.str(), ratio};
}

InjectionPattern InjectionPattern::structured(std::size_t keep, std::size_t group) {
  if (group == 0 || keep > group) throw ConfigError("structured pattern needs keep <= group");
  return {std::to_string(group - keep) + ":" + std::to_string(group),
          static_cast<double>(group - keep) / static_cast<double>(group)};
}

InjectionPattern InjectionPattern::parse(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon != std::string::npos) {
      const auto injected = std::stoul(text.substr(0, colon));
      const auto group = std::stoul(text.substr(colon + 1));
      if (injected > group) throw ConfigError("pattern '" + text + "' injects more than its group");
      return structured(group - injected, group);
    }
    if (!text.empty() && text.back() == '%') {
      return from_ratio(std::stod(text.substr(0, text.size() - 1)) / 100.0);
    }
    return from_ratio(std::stod(text));
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse injection pattern '" + text + "'");
  }
}

std::vector<PatternCost> structured_cost_table(
    std::span<const LayerDims> dims, std::span<const InjectionPattern> patterns,
    const OpCountPolicy& policy, std::size_t s) {
  std::vector<PatternCost> rows;
  for (const auto& p : patterns) rows.push_back({p, table_bitops(dims, p.ratio, policy, s)});
  return rows;
}

DimsTable parse_dims_table(const nlohmann::json& j) {
  DimsTable t;
  try {
    t.name = j.at("name").get<std::string>();
    t.version = j.at("version").get<int>();
    for (const auto& l : j.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      LayerDims dims;
      dims.name = l.at("name").get<std::string>();
      if (kind == "conv") {
        const auto c_in = l.at("in_channels").get<std::size_t>();
        const auto c_out = l.at("out_channels").get<std::size_t>();
        const auto kernel = l.at("kernel").get<std::size_t>();
        const auto out_hw = l.at("out_hw").get<std::size_t>();
        dims.positions = out_hw * out_hw;
        dims.n = c_out;
        dims.d = c_in * kernel * kernel;
        dims.injectable = l.value("injectable", true);
      } else if (kind == "dense") {
        dims.positions = 1;
        dims.n = l.at("out_features").get<std::size_t>();
        dims.d = l.at("in_features").get<std::size_t>();
        dims.injectable = l.value("injectable", false);
      } else {
        throw ConfigError("unknown layer kind '" + kind + "' in dimension table");
      }
      t.layers.push_back(std::move(dims));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dimension table: ") + e.what());
  }
  if (t.version != 1) throw ConfigError("unsupported dimension table version " + std::to_string(t.version));
  return t;
}

DimsTable load_dims_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dimension table " + path.string());
  try {
    return parse_dims_table(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::string cost_table_csv(std::span<const PatternCost> rows) {
  std::ostringstream out;
  out.precision(10);
  out << "pattern,precise,approx,projection,total,reduction\n";
  for (const auto& r : rows) {
    out << r.pattern.label << ',' << r.report.precise_bitops << ','
        << r.report.approx_mult_bitops << ',' << r.report.projection_add_bitops << ','
        << r.report.grand_total << ',' << r.report.reduction_vs_baseline << '\n';
  }
  return out.str();
}

nlohmann::json cost_report_json(const CostReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"name", l.name},
                      {"precise_bitops", l.precise_bitops},
                      {"approx_mult_bitops", l.approx_mult_bitops},
                      {"projection_add_bitops", l.projection_add_bitops},
                      {"total", l.total()},
                      {"baseline_bitops", l.baseline_bitops}});
  }
  return {{"precise_bitops", report.precise_bitops},
          {"approx_mult_bitops", report.approx_mult_bitops},
          {"projection_add_bitops", report.projection_add_bitops},
          {"grand_total", report.grand_total},
          {"baseline_total", report.baseline_total},
          {"reduction_vs_baseline", report.reduction_vs_baseline},
          {"layers", layers}};
}

}  // namespace nenn
