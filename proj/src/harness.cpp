#include "nenn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "nenn/error.hpp"
#include "nenn/rng.hpp"

namespace nenn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor he_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = static_cast<float>(dist(rng));
  return t;
}

void round_tensor(Tensor& t) {
  for (double& v : t.values()) v = static_cast<float>(v);
}

// Rows of every target layer's im2col patches over `samples`, as B x d.
std::vector<Tensor> collect_patches(const Model& model, const Dataset& data,
                                    std::span<const std::size_t> samples,
                                    std::span<const std::size_t> layers) {
  std::vector<std::vector<double>> rows(layers.size());
  for (std::size_t idx : samples) {
    ForwardTrace trace;
    forward(model, data.inputs[idx], {}, &trace);
    for (std::size_t j = 0; j < layers.size(); ++j) {
      const auto v = trace.layers[layers[j]].patches.values();
      rows[j].insert(rows[j].end(), v.begin(), v.end());
    }
  }
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::size_t d = model.layer(layers[j]).in_features();
    const std::size_t b = rows[j].size() / d;
    out.emplace_back(Shape{b, d}, std::move(rows[j]));
  }
  return out;
}

Tensor weight_matrix(const Layer& layer) {
  return layer.weight.reshaped({layer.out_features(), layer.in_features()});
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Model desk_model(const ModelConfig& cfg, const Shape& input_shape,
                 std::size_t num_classes, std::uint64_t seed) {
  if (input_shape.size() != 3) throw ShapeError("desk model expects [H, W, C] inputs");
  const auto [h, w, c] = std::tuple{input_shape[0], input_shape[1], input_shape[2]};
  const auto k = cfg.kernel;
  if (h < 2 * k - 1 || w < 2 * k - 1) throw ShapeError("input too small for two valid convolutions");
  std::mt19937_64 rng(derive_seed(seed, {0x1417}));

  std::vector<Layer> layers;
  layers.push_back(Layer::conv2d(he_init({cfg.conv1_channels, c, k, k}, c * k * k, rng),
                                 Tensor({cfg.conv1_channels})));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::conv2d(
      he_init({cfg.conv2_channels, cfg.conv1_channels, k, k}, cfg.conv1_channels * k * k, rng),
      Tensor({cfg.conv2_channels})));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::flatten());
  const std::size_t flat = (h - 2 * (k - 1)) * (w - 2 * (k - 1)) * cfg.conv2_channels;
  // Unit-gain init for the logits layer.
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(flat)));
  Tensor fc({num_classes, flat});
  for (double& v : fc.values()) v = static_cast<float>(dist(rng));
  layers.push_back(Layer::dense(std::move(fc), Tensor({num_classes})));
  return Model(input_shape, num_classes, std::move(layers));
}

void round_to_float(Model& model) {
  for (std::size_t i = 0; i < model.size(); ++i) {
    auto& l = model.layer(i);
    round_tensor(l.weight);
    round_tensor(l.bias);
  }
}

std::pair<Dataset, Dataset> load_data(const DataConfig& cfg) {
  if (cfg.uses_idx()) {
    auto train = load_idx(cfg.train_images, cfg.train_labels);
    if (cfg.test_images.empty()) throw ConfigError("idx test_images missing");
    auto test = load_idx(cfg.test_images, cfg.test_labels, train.num_classes);
    if (test.sample_shape != train.sample_shape) throw DataError("train and test image shapes differ");
    return {std::move(train), std::move(test)};
  }
  auto spec = cfg.synthetic;
  spec.samples = cfg.train_samples + cfg.test_samples;
  auto all = make_synthetic(spec);
  return {all.slice(0, cfg.train_samples), all.slice(cfg.train_samples, cfg.test_samples)};
}

Model train(Model model, const Dataset& data, const TrainOptions& o, TrainLog* log) {
  if (log) *log = {};
  if (o.epochs == 0) return model;
  if (data.size() == 0) throw DataError("training set is empty");
  if (o.batch == 0) throw ConfigError("batch size must be positive");
  if (data.sample_shape != model.input_shape()) throw ShapeError("dataset does not match model input");
  if (o.adversarial) o.adversarial->validate();

  ModelGrad velocity = zero_grad(model);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(o.seed, {0x7a11}));

  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    double lr = o.lr;
    for (auto e : o.decay_epochs) {
      if (e > 0 && epoch >= e) lr *= 0.1;
    }
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += o.batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + o.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      ModelGrad grad = zero_grad(model);
      double batch_loss = 0.0;
      try {
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t idx = order[b];
          const ForwardOptions fo{o.injection, derive_seed(o.seed, {epoch, idx, 0})};
          Tensor x = data.inputs[idx];
          if (o.adversarial) {
            const ForwardOptions ao{o.injection, derive_seed(o.seed, {epoch, idx, 1})};
            x = run_attack(model, x, data.labels[idx], *o.adversarial, ao);
          }
          auto lg = loss_and_grad(model, x, data.labels[idx], fo, false, true);
          if (!std::isfinite(lg.loss)) throw NumericalError("non-finite loss");
          batch_loss += lg.loss;
          accumulate(grad, lg.params, inv);
        }
      } catch (const NumericalError&) {
        throw DivergenceError(epoch, batch_index);
      }
      if (log && epoch == 0 && start == 0) log->initial_loss = batch_loss * inv;
      epoch_loss += batch_loss;

      for (std::size_t i = 0; i < model.size(); ++i) {
        auto& layer = model.layer(i);
        if (!layer.is_linear()) continue;
        auto w = layer.weight.values();
        auto vw = velocity[i].weight.values();
        const auto gw = grad[i].weight.values();
        for (std::size_t j = 0; j < w.size(); ++j) {
          vw[j] = o.momentum * vw[j] + gw[j] + o.weight_decay * w[j];
          w[j] = static_cast<float>(w[j] - lr * vw[j]);
        }
        auto bias = layer.bias.values();
        auto vb = velocity[i].bias.values();
        const auto gb = grad[i].bias.values();
        for (std::size_t j = 0; j < bias.size(); ++j) {
          vb[j] = o.momentum * vb[j] + gb[j];
          bias[j] = static_cast<float>(bias[j] - lr * vb[j]);
        }
        if (!layer.weight.all_finite() || !layer.bias.all_finite()) {
          throw DivergenceError(epoch, batch_index);
        }
      }
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return model;
}

Model adversarial_train(Model model, const Dataset& data, const TrainConfig& cfg,
                        std::uint64_t seed, TrainLog* log) {
  TrainOptions o;
  o.epochs = cfg.epochs;
  o.batch = cfg.batch;
  o.lr = cfg.lr;
  o.momentum = cfg.momentum;
  o.weight_decay = cfg.weight_decay;
  o.decay_epochs = cfg.decay_epochs();
  if (cfg.pgd_train.epsilon > 0.0) o.adversarial = cfg.pgd_train;
  o.seed = derive_seed(seed, {0x7421});
  return train(std::move(model), data, o, log);
}

Model distill_approx(Model model, const Dataset& data, const DistillConfig& cfg,
                     const std::set<std::size_t>& targets, std::uint64_t seed,
                     std::vector<LayerDistillReport>* report) {
  if (report) report->clear();
  if (targets.empty()) return model;
  const std::vector<std::size_t> layers(targets.begin(), targets.end());
  for (auto i : layers) {
    if (i >= model.size() || !model.layer(i).is_linear()) {
      throw ConfigError("distillation target " + std::to_string(i) + " is not a linear layer");
    }
  }
  if (!cfg.k.empty() && cfg.k.size() != layers.size()) {
    throw ConfigError("distill k lists " + std::to_string(cfg.k.size()) + " values for " +
                      std::to_string(layers.size()) + " target layers");
  }
  if (data.size() == 0) throw DataError("calibration set is empty");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0xd157}));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_calib = std::min(cfg.calib_size, order.size());
  const std::size_t n_hold = std::min(cfg.holdout_size, order.size() - n_calib);
  const std::span<const std::size_t> calib_idx(order.data(), n_calib);
  // Without spare samples the held-out error is measured on the calibration set.
  const std::span<const std::size_t> hold_idx =
      n_hold > 0 ? std::span<const std::size_t>(order.data() + n_calib, n_hold) : calib_idx;

  const auto calib = collect_patches(model, data, calib_idx, layers);
  const auto hold = collect_patches(model, data, hold_idx, layers);

  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::size_t i = layers[j];
    const auto& layer = model.layer(i);
    const std::size_t d = layer.in_features();
    const std::size_t k =
        cfg.k.empty() ? std::max<std::size_t>(
                            1, static_cast<std::size_t>(std::floor(static_cast<double>(d) * cfg.k_fraction)))
                      : cfg.k[j];
    const Tensor w = weight_matrix(layer);
    try {
      const auto projection = sample_projection(k, d, cfg.s, derive_seed(seed, {i, 0xd1}));
      auto fit = fit_approx(w, layer.bias, calib[j], projection, cfg.method, i);
      if (report) {
        report->push_back({i, k, fit.report, approx_mse(w, layer.bias, fit.params, hold[j]),
                           output_variance(w, layer.bias, hold[j])});
      }
      model.attach_approx(i, std::move(fit.params));
    } catch (const Error& e) {
      throw NumericalError("distillation of layer " + std::to_string(i) + " failed: " + e.what());
    }
  }
  return model;
}

Model finetune(Model model, const Dataset& data, const FinetuneConfig& cfg,
               const TrainConfig& training, const InjectionConfig& injection,
               std::uint64_t seed, TrainLog* log) {
  TrainOptions o;
  o.epochs = cfg.epochs;
  o.batch = training.batch;
  o.lr = cfg.lr;
  o.momentum = training.momentum;
  o.weight_decay = training.weight_decay;
  if (cfg.adversarial && training.pgd_train.epsilon > 0.0) o.adversarial = training.pgd_train;
  o.injection = &injection;
  o.seed = derive_seed(seed, {0xf1e});
  return train(std::move(model), data, o, log);
}

double clean_accuracy(const Model& model, const Dataset& data,
                      const InjectionConfig* injection, std::uint64_t seed) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ForwardOptions fo{injection, derive_seed(seed, {i})};
    correct += predict(model, data.inputs[i], fo) == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double robust_accuracy(const Model& model, const Dataset& data,
                       const AttackConfig& attack, const InjectionConfig* injection,
                       std::uint64_t seed) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ForwardOptions ao{injection, derive_seed(seed, {i, 0xa77})};
    const Tensor adv = run_attack(model, data.inputs[i], data.labels[i], attack, ao);
    const ForwardOptions fo{injection, derive_seed(seed, {i})};
    correct += predict(model, adv, fo) == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double histogram_entropy(std::span<const std::size_t> counts) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) return 0.0;
  // Uniform over m occupied bins is exactly log m.
  std::size_t occupied = 0, first = 0;
  bool uniform = true;
  for (auto c : counts) {
    if (c == 0) continue;
    if (occupied++ == 0) first = c;
    uniform = uniform && c == first;
  }
  if (uniform) return std::log(static_cast<double>(occupied));
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

double entropy_estimate(const Model& model, const Tensor& x, std::size_t n_samples,
                        const ForwardOptions& options) {
  if (n_samples == 0) throw ConfigError("entropy needs at least one sample");
  std::vector<std::size_t> counts(model.num_classes(), 0);
  for (std::size_t t = 0; t < n_samples; ++t) {
    ForwardOptions fo = options;
    fo.noise_seed = derive_seed(options.noise_seed, {t});
    ++counts[predict(model, x, fo)];
  }
  return histogram_entropy(counts);
}

std::vector<LayerFraction> realized_injection(const Model& model, const Dataset& data,
                                              const InjectionConfig& injection,
                                              std::uint64_t seed) {
  std::vector<LayerFraction> out;
  for (auto i : injection.target_layers) out.push_back({i, injection.nominal_ratio(), 0.0});
  if (data.size() == 0 || out.empty()) return out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    ForwardTrace trace;
    forward(model, data.inputs[s], {&injection, derive_seed(seed, {s})}, &trace);
    for (auto& f : out) {
      const auto& m = trace.layers[f.layer].mask;
      f.realized += 1.0 - static_cast<double>(m.popcount()) / static_cast<double>(m.size());
    }
  }
  for (auto& f : out) f.realized /= static_cast<double>(data.size());
  return out;
}

Model rse_baseline(Model model, double sigma, const std::set<std::size_t>& layers) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be finite and >= 0");
  for (std::size_t i = 0; i < model.size(); ++i) {
    auto& l = model.layer(i);
    if (!l.is_linear()) {
      if (layers.count(i)) throw ConfigError("noise target " + std::to_string(i) + " is not a linear layer");
      continue;
    }
    if (layers.empty() || layers.count(i)) l.noise_sigma = sigma;
  }
  for (auto i : layers) {
    if (i >= model.size()) throw ConfigError("noise target " + std::to_string(i) + " does not exist");
  }
  return model;
}

EvalResult evaluate(const Model& model, const Dataset& test, const EvalOptions& o) {
  if (test.size() == 0) throw DataError("evaluation set is empty");
  const auto start = Clock::now();
  EvalResult r;
  r.clean_accuracy = clean_accuracy(model, test, o.injection, o.seed);
  for (const auto& a : o.attacks) {
    const auto t0 = Clock::now();
    const double acc = robust_accuracy(model, test, a, o.injection, o.seed);
    r.attacks.push_back({a.label(), acc, seconds_since(t0)});
  }
  if (o.injection) r.fractions = realized_injection(model, test, *o.injection, o.seed);
  if (o.entropy_samples > 0) {
    const std::size_t n = std::min(o.entropy_inputs, test.size());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += entropy_estimate(model, test.inputs[i], o.entropy_samples,
                                {o.injection, derive_seed(o.seed, {i, 0xe7})});
    }
    r.entropy = n > 0 ? total / static_cast<double>(n) : 0.0;
  }
  r.seconds = seconds_since(start);
  return r;
}

SeedRun train_pipeline(const ExperimentConfig& cfg, const Dataset& train, std::uint64_t seed) {
  SeedRun run{.seed = seed,
              .baseline = desk_model(cfg.model, train.sample_shape, train.num_classes, seed),
              .method = desk_model(cfg.model, train.sample_shape, train.num_classes, seed)};
  auto t0 = Clock::now();
  try {
    run.baseline = adversarial_train(std::move(run.baseline), train, cfg.training, seed, &run.train_log);
  } catch (const Error& e) {
    throw StageError("train", e.what());
  }
  run.train_seconds = seconds_since(t0);

  t0 = Clock::now();
  Model distilled = run.baseline;
  try {
    distilled = distill_approx(std::move(distilled), train, cfg.distill, cfg.injection.target_layers,
                               seed, &run.distill);
  } catch (const Error& e) {
    throw StageError("distill", e.what());
  }
  run.distill_seconds = seconds_since(t0);

  t0 = Clock::now();
  try {
    run.method = finetune(std::move(distilled), train, cfg.finetune, cfg.training, cfg.injection,
                          seed, &run.finetune_log);
  } catch (const Error& e) {
    throw StageError("finetune", e.what());
  }
  run.finetune_seconds = seconds_since(t0);
  return run;
}

namespace {

nlohmann::json eval_json(const EvalResult& r) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : r.attacks) {
    attacks.push_back({{"attack", a.label}, {"robust_accuracy", a.robust_accuracy}, {"seconds", a.seconds}});
  }
  nlohmann::json fractions = nlohmann::json::array();
  for (const auto& f : r.fractions) {
    fractions.push_back({{"layer", f.layer}, {"configured", f.configured}, {"realized", f.realized}});
  }
  return {{"clean_accuracy", r.clean_accuracy},
          {"attacks", attacks},
          {"injection_fraction", fractions},
          {"entropy", r.entropy},
          {"seconds", r.seconds}};
}

nlohmann::json mean_json(const std::vector<SeedReport>& seeds, bool method) {
  if (seeds.empty()) return nullptr;
  auto pick = [&](const SeedReport& s) -> const EvalResult& { return method ? s.method : s.baseline; };
  std::vector<double> clean, entropy;
  for (const auto& s : seeds) {
    clean.push_back(pick(s).clean_accuracy);
    entropy.push_back(pick(s).entropy);
  }
  nlohmann::json attacks = nlohmann::json::array();
  for (std::size_t a = 0; a < pick(seeds.front()).attacks.size(); ++a) {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(pick(s).attacks[a].robust_accuracy);
    attacks.push_back({{"attack", pick(seeds.front()).attacks[a].label}, {"robust_accuracy", mean(v)}});
  }
  return {{"clean_accuracy", mean(clean)}, {"attacks", attacks}, {"entropy", mean(entropy)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

nlohmann::json report_json(const ExperimentReport& report, const ExperimentConfig& cfg) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : report.seeds) {
    nlohmann::json distill = nlohmann::json::array();
    for (const auto& d : s.distill) {
      distill.push_back({{"layer", d.layer},
                         {"k", d.k},
                         {"mse_before_quant", d.fit.mse_before_quant},
                         {"mse_after_quant", d.fit.mse_after_quant},
                         {"rank_deficient", d.fit.rank_deficient},
                         {"heldout_mse", d.heldout_mse},
                         {"output_variance", d.output_variance}});
    }
    seeds.push_back({{"seed", s.seed},
                     {"baseline", eval_json(s.baseline)},
                     {"method", eval_json(s.method)},
                     {"distill", distill},
                     {"seconds", {{"train", s.train_seconds},
                                  {"distill", s.distill_seconds},
                                  {"finetune", s.finetune_seconds}}}});
  }
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : cfg.attacks) attacks.push_back(attack_to_json(a));
  return {{"incomplete", report.incomplete},
          {"failed_stage", report.failed_stage},
          {"error", report.error},
          {"seeds", seeds},
          {"mean", {{"baseline", mean_json(report.seeds, false)},
                    {"method", mean_json(report.seeds, true)}}},
          {"injection", injection_to_json(cfg.injection)},
          {"attacks", attacks},
          {"cost", cost_report_json(report.cost)}};
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  ExperimentReport report;
  std::string stage = "data";
  std::ostringstream ratio_csv, eps_csv, main_csv;
  ratio_csv.precision(10);
  eps_csv.precision(10);
  main_csv.precision(10);
  ratio_csv << "seed,ratio,clean_accuracy,robust_accuracy,bitops,reduction\n";
  eps_csv << "seed,epsilon,baseline_robust,method_robust,gap\n";
  main_csv << "seed,model,clean_accuracy";
  for (const auto& a : cfg.attacks) main_csv << ',' << a.label();
  main_csv << ",entropy\n";

  auto flush = [&] {
    write_text(cfg.output_dir / "report.json", report_json(report, cfg).dump(2) + "\n");
    write_text(cfg.output_dir / "report.csv", main_csv.str());
    write_text(cfg.output_dir / "ratio_sweep.csv", ratio_csv.str());
    write_text(cfg.output_dir / "eps_sweep.csv", eps_csv.str());
  };

  try {
    auto [train, test] = load_data(cfg.data);
    AttackConfig sweep_attack = cfg.attacks.empty() ? AttackConfig{} : cfg.attacks.front();
    for (const auto& a : cfg.attacks) {
      if (a.kind == AttackKind::pgd) {
        sweep_attack = a;
        break;
      }
    }

    for (auto seed : cfg.eval.seeds) {
      stage = "train";
      SeedRun run = [&] {
        try {
          return train_pipeline(cfg, train, seed);
        } catch (const StageError& e) {
          stage = e.stage();
          throw;
        }
      }();
      stage = "evaluate";
      if (report.seeds.empty()) report.cost = model_bitops(run.method, &cfg.injection);
      SeedReport sr;
      sr.seed = seed;
      sr.train_seconds = run.train_seconds;
      sr.distill_seconds = run.distill_seconds;
      sr.finetune_seconds = run.finetune_seconds;
      sr.distill = run.distill;
      const std::uint64_t eval_seed = derive_seed(seed, {0xe4a1});
      sr.baseline = evaluate(run.baseline, test, {nullptr, cfg.attacks, 0, 0, eval_seed});
      sr.method = evaluate(run.method, test,
                           {&cfg.injection, cfg.attacks, cfg.eval.entropy_samples,
                            cfg.eval.entropy_inputs, eval_seed});
      for (const auto& [name, r] : {std::pair{"baseline", &sr.baseline}, std::pair{"method", &sr.method}}) {
        main_csv << seed << ',' << name << ',' << r->clean_accuracy;
        for (const auto& a : r->attacks) main_csv << ',' << a.robust_accuracy;
        main_csv << ',' << r->entropy << '\n';
      }

      stage = "sweeps";
      for (double ratio : cfg.sweeps.ratios) {
        InjectionConfig inj = cfg.injection;
        inj.mode = RatioMode{ratio};
        const auto cost = model_bitops(run.method, &inj);
        ratio_csv << seed << ',' << ratio << ',' << clean_accuracy(run.method, test, &inj, eval_seed)
                  << ',' << robust_accuracy(run.method, test, sweep_attack, &inj, eval_seed) << ','
                  << cost.grand_total << ',' << cost.reduction_vs_baseline << '\n';
      }
      for (double eps : cfg.sweeps.epsilons) {
        AttackConfig a = sweep_attack;
        a.epsilon = eps;
        const double base = robust_accuracy(run.baseline, test, a, nullptr, eval_seed);
        const double meth = robust_accuracy(run.method, test, a, &cfg.injection, eval_seed);
        eps_csv << seed << ',' << eps << ',' << base << ',' << meth << ',' << meth - base << '\n';
      }
      report.seeds.push_back(std::move(sr));
      flush();
    }
  } catch (const Error& e) {
    report.incomplete = true;
    report.failed_stage = stage;
    report.error = e.what();
    try {
      flush();
    } catch (const Error&) {
    }
    if (const auto* se = dynamic_cast<const StageError*>(&e)) throw *se;
    throw StageError(stage, e.what());
  }
  flush();
  return report;
}

}  // namespace nenn
