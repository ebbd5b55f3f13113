#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nenn/config.hpp"
#include "nenn/costmodel.hpp"
#include "nenn/error.hpp"
#include "nenn/harness.hpp"
#include "nenn/model_io.hpp"
#include "nenn/projection.hpp"
#include "nenn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
};

nenn::ExperimentConfig load(const Options& o) {
  auto cfg = o.config.empty() ? nenn::parse_config(json::object()) : nenn::load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.eval.seeds = {*o.seed};
  return cfg;
}

std::uint64_t seed_of(const Options& o, const nenn::ExperimentConfig& cfg) {
  return o.seed.value_or(cfg.eval.seeds.front());
}

fs::path model_in(const Options& o) {
  if (o.model.empty()) throw nenn::ConfigError("--model is required");
  return o.model;
}

fs::path output(const nenn::ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir / name;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw nenn::IoError("cannot write " + path.string());
}

void cmd_train(const Options& o) {
  const auto cfg = load(o);
  const auto seed = seed_of(o, cfg);
  const auto [train, test] = nenn::load_data(cfg.data);
  nenn::TrainLog log;
  auto model = nenn::adversarial_train(
      nenn::desk_model(cfg.model, train.sample_shape, train.num_classes, seed), train,
      cfg.training, seed, &log);
  const auto path = o.model.empty() ? output(cfg, "trained.nenn") : fs::path(o.model);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  nenn::save_model(model, path);
  std::cout << "initial loss " << log.initial_loss << '\n';
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e + 1 << " loss " << log.epoch_loss[e] << '\n';
  }
  std::cout << "clean accuracy " << nenn::clean_accuracy(model, test, nullptr, seed) << '\n'
            << "saved " << path.string() << '\n';
}

void cmd_distill(const Options& o) {
  const auto cfg = load(o);
  const auto seed = seed_of(o, cfg);
  const auto [train, test] = nenn::load_data(cfg.data);
  std::vector<nenn::LayerDistillReport> report;
  auto model = nenn::distill_approx(nenn::load_model(model_in(o)), train, cfg.distill,
                                    cfg.injection.target_layers, seed, &report);
  for (const auto& r : report) {
    std::cout << "layer " << r.layer << " k " << r.k << " fit mse " << r.fit.mse_after_quant
              << " held-out mse " << r.heldout_mse << " output variance " << r.output_variance
              << (r.fit.rank_deficient ? " (rank deficient)" : "") << '\n';
  }
  const auto path = output(cfg, "distilled.nenn");
  nenn::save_model(model, path);
  std::cout << "saved " << path.string() << '\n';
}

void cmd_finetune(const Options& o) {
  const auto cfg = load(o);
  const auto seed = seed_of(o, cfg);
  const auto [train, test] = nenn::load_data(cfg.data);
  nenn::TrainLog log;
  auto model = nenn::finetune(nenn::load_model(model_in(o)), train, cfg.finetune, cfg.training,
                              cfg.injection, seed, &log);
  const auto path = output(cfg, "finetuned.nenn");
  nenn::save_model(model, path);
  std::cout << "clean accuracy with injection "
            << nenn::clean_accuracy(model, test, &cfg.injection, seed) << '\n'
            << "saved " << path.string() << '\n';
}

const nenn::InjectionConfig* injection_for(const nenn::Model& model,
                                           const nenn::ExperimentConfig& cfg) {
  for (auto i : cfg.injection.target_layers) {
    if (i >= model.size() || !model.layer(i).approx) return nullptr;
  }
  return cfg.injection.target_layers.empty() ? nullptr : &cfg.injection;
}

void cmd_attack(const Options& o) {
  const auto cfg = load(o);
  const auto seed = seed_of(o, cfg);
  const auto [train, test] = nenn::load_data(cfg.data);
  const auto model = nenn::load_model(model_in(o));
  const auto* inj = injection_for(model, cfg);
  if (cfg.attacks.empty()) throw nenn::ConfigError("config lists no attacks");
  for (const auto& a : cfg.attacks) {
    std::cout << a.label() << " robust accuracy "
              << nenn::robust_accuracy(model, test, a, inj, seed) << '\n';
  }
  // Adversarial examples of the first attack, for inspection.
  nenn::Dataset adv = test;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv.inputs[i] = nenn::run_attack(model, test.inputs[i], test.labels[i], cfg.attacks.front(),
                                     {inj, nenn::derive_seed(seed, {i, 0xa77})});
  }
  if (adv.sample_shape.size() == 3 && adv.sample_shape[2] == 1) {
    nenn::save_idx(adv, output(cfg, "adv-images.idx"), output(cfg, "adv-labels.idx"));
  }
}

void cmd_eval(const Options& o) {
  const auto cfg = load(o);
  const auto seed = seed_of(o, cfg);
  const auto [train, test] = nenn::load_data(cfg.data);
  const auto model = nenn::load_model(model_in(o));
  const auto* inj = injection_for(model, cfg);
  const auto r = nenn::evaluate(model, test, {inj, cfg.attacks, inj ? cfg.eval.entropy_samples : 0,
                                              cfg.eval.entropy_inputs, seed});
  json attacks = json::array();
  for (const auto& a : r.attacks) attacks.push_back({{"attack", a.label}, {"robust_accuracy", a.robust_accuracy}});
  json j{{"clean_accuracy", r.clean_accuracy},
         {"attacks", attacks},
         {"entropy", r.entropy},
         {"cost", nenn::cost_report_json(nenn::model_bitops(model, inj))}};
  write_json(output(cfg, "eval.json"), j);
  std::cout << j.dump(2) << '\n';
}

void cmd_cost(const Options& o) {
  const auto cfg = load(o);
  if (!o.model.empty()) {
    const auto model = nenn::load_model(o.model);
    const auto j = nenn::cost_report_json(nenn::model_bitops(model, injection_for(model, cfg)));
    write_json(output(cfg, "cost.json"), j);
    std::cout << j.dump(2) << '\n';
    return;
  }
  const fs::path fixture = cfg.cost.fixture.empty()
                               ? fs::path(NENN_DATA_DIR) / "resnet18_cifar10_dims.json"
                               : cfg.cost.fixture;
  const auto table = nenn::load_dims_table(fixture);
  std::vector<std::string> labels = cfg.cost.patterns;
  if (labels.empty()) labels = {"90%", "99%", "1:8", "2:8", "3:8", "4:8", "5:8", "6:8", "7:8"};
  std::vector<nenn::InjectionPattern> patterns;
  for (const auto& l : labels) patterns.push_back(nenn::InjectionPattern::parse(l));
  const auto rows = nenn::structured_cost_table(table.layers, patterns);
  const auto csv = nenn::cost_table_csv(rows);
  std::ofstream(output(cfg, "cost.csv")) << csv;
  json reports = json::array();
  for (const auto& r : rows) {
    auto j = nenn::cost_report_json(r.report);
    j["pattern"] = r.pattern.label;
    reports.push_back(j);
  }
  write_json(output(cfg, "cost.json"), {{"fixture", table.name}, {"patterns", reports}});
  std::cout << csv;
}

void cmd_jll(const Options& o) {
  const auto cfg = load(o);
  const auto& c = cfg.jll;
  const auto seed = o.seed.value_or(c.seed);
  const auto s = nenn::preservation_stats(c.k, c.d, c.s, c.points, c.eps, seed);
  const json j{{"d", c.d}, {"k", c.k}, {"s", c.s}, {"points", c.points}, {"eps", c.eps},
               {"seed", seed}, {"norm_ok_fraction", s.norm_ok_fraction},
               {"ip_violation_fraction", s.ip_violation_fraction},
               {"ip_mean_abs_rel_err", s.ip_mean_abs_rel_err}};
  std::cout << j.dump(2) << '\n';
}

void cmd_run(const Options& o) {
  const auto cfg = load(o);
  const auto report = nenn::run_experiment(cfg);
  std::cout << nenn::report_json(report, cfg)["mean"].dump(2) << '\n'
            << "reports in " << cfg.output_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise injection via approximate computation: training, attacks and cost."};
  app.require_subcommand(1);
  Options o;

  auto add = [&](const char* name, const char* help, void (*fn)(const Options&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--model", o.model, "model file (NENN format)");
    sub->callback([fn, &o] { fn(o); });
  };
  add("train", "adversarially train the baseline model", cmd_train);
  add("distill", "fit approximate layers for the injection targets", cmd_distill);
  add("finetune", "fine-tune with injection active", cmd_finetune);
  add("attack", "report robust accuracy under the configured attacks", cmd_attack);
  add("eval", "clean/robust accuracy, entropy and cost of a model", cmd_eval);
  add("cost", "BitOps table for the dimension fixture or a model", cmd_cost);
  add("jll-check", "Monte-Carlo check of projection distance preservation", cmd_jll);
  add("run", "full pipeline with reports", cmd_run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const nenn::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const nenn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nenn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
