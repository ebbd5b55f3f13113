#include "nenn/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

#include "nenn/error.hpp"

namespace nenn {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& section) {
  if (!j.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in '" + section + "'");
  }
}

// Accepts a number or a fraction string such as "8/255".
double parse_amount(const json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    try {
      const auto slash = s.find('/');
      if (slash == std::string::npos) return std::stod(s);
      return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::logic_error&) {
    }
  }
  throw ConfigError("'" + what + "' must be a number or a fraction like \"8/255\"");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_amount(const json& j, const char* key, double& out) {
  if (j.contains(key)) out = parse_amount(j.at(key), key);
}

std::filesystem::path resolve(const std::filesystem::path& p,
                              const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void require_file(const std::filesystem::path& p) {
  if (!p.empty() && !std::filesystem::exists(p)) {
    throw ConfigError("referenced file does not exist: " + p.string());
  }
}

}  // namespace

std::vector<std::size_t> TrainConfig::decay_epochs() const {
  if (lr_decay_epochs) return *lr_decay_epochs;
  return {epochs / 2, epochs * 3 / 4};
}

AttackConfig parse_attack(const json& j) {
  check_keys(j, {"kind", "epsilon", "step_size", "steps", "decay", "random_start"}, "attack");
  AttackConfig a;
  const auto kind = j.value("kind", std::string("pgd"));
  if (kind == "fgsm") {
    a.kind = AttackKind::fgsm;
    a.steps = 1;
  } else if (kind == "pgd") {
    a.kind = AttackKind::pgd;
  } else if (kind == "mifgsm") {
    a.kind = AttackKind::mifgsm;
    a.steps = 5;
  } else {
    throw ConfigError("unknown attack kind '" + kind + "'");
  }
  read_amount(j, "epsilon", a.epsilon);
  read_amount(j, "step_size", a.step_size);
  if (a.kind == AttackKind::fgsm && !j.contains("step_size")) a.step_size = a.epsilon;
  read(j, "steps", a.steps);
  read(j, "decay", a.decay);
  read(j, "random_start", a.random_start);
  a.validate();
  return a;
}

json attack_to_json(const AttackConfig& a) {
  return {{"kind", attack_kind_name(a.kind)}, {"epsilon", a.epsilon},
          {"step_size", a.step_size},         {"steps", a.steps},
          {"decay", a.decay},                 {"random_start", a.random_start}};
}

InjectionConfig parse_injection(const json& j) {
  check_keys(j, {"mode", "ratio", "keep", "group", "invert", "resample", "rank_by", "target_layers"},
             "injection");
  InjectionConfig c;
  const auto mode = j.value("mode", std::string("ratio"));
  if (mode == "ratio") {
    RatioMode r;
    read(j, "ratio", r.ratio);
    c.mode = r;
  } else if (mode == "structured") {
    StructuredMode s;
    read(j, "keep", s.keep);
    read(j, "group", s.group);
    c.mode = s;
  } else {
    throw ConfigError("unknown injection mode '" + mode + "'");
  }
  read(j, "invert", c.invert);
  const auto resample = j.value("resample", std::string("fixed"));
  if (resample == "fixed") {
    c.resample = ProjectionResample::fixed;
  } else if (resample == "per_forward") {
    c.resample = ProjectionResample::per_forward;
  } else {
    throw ConfigError("unknown resample policy '" + resample + "'");
  }
  const auto rank = j.value("rank_by", std::string("value"));
  if (rank == "value") {
    c.rank_by = RankBy::value;
  } else if (rank == "magnitude") {
    c.rank_by = RankBy::magnitude;
  } else {
    throw ConfigError("unknown rank_by '" + rank + "'");
  }
  if (j.contains("target_layers")) {
    for (auto id : j.at("target_layers").get<std::vector<std::size_t>>()) c.target_layers.insert(id);
  }
  c.validate();
  return c;
}

json injection_to_json(const InjectionConfig& c) {
  json j;
  if (const auto* r = std::get_if<RatioMode>(&c.mode)) {
    j["mode"] = "ratio";
    j["ratio"] = r->ratio;
  } else {
    const auto& s = std::get<StructuredMode>(c.mode);
    j["mode"] = "structured";
    j["keep"] = s.keep;
    j["group"] = s.group;
  }
  j["invert"] = c.invert;
  j["resample"] = c.resample == ProjectionResample::fixed ? "fixed" : "per_forward";
  j["rank_by"] = c.rank_by == RankBy::value ? "value" : "magnitude";
  j["target_layers"] = std::vector<std::size_t>(c.target_layers.begin(), c.target_layers.end());
  return j;
}

void ExperimentConfig::validate() const {
  data.synthetic.validate();
  if (data.train_samples == 0 && !data.uses_idx()) throw ConfigError("train_samples must be positive");
  if (data.test_samples == 0 && !data.uses_idx()) throw ConfigError("test_samples must be positive");
  if (data.uses_idx() && data.train_labels.empty()) throw ConfigError("idx train_labels missing");
  if (model.conv1_channels == 0 || model.conv2_channels == 0 || model.kernel == 0) {
    throw ConfigError("model sizes must be positive");
  }
  if (training.batch == 0) throw ConfigError("training batch must be positive");
  if (!(training.lr > 0.0) || training.momentum < 0.0 || training.momentum >= 1.0 ||
      training.weight_decay < 0.0) {
    throw ConfigError("invalid optimiser settings");
  }
  training.pgd_train.validate();
  if (!(distill.k_fraction > 0.0 && distill.k_fraction <= 1.0)) {
    throw ConfigError("distill k_fraction must lie in (0, 1]");
  }
  for (auto k : distill.k) {
    if (k == 0) throw ConfigError("distill k must be positive");
  }
  if (distill.s == 0) throw ConfigError("distill s must be positive");
  if (distill.calib_size == 0) throw ConfigError("distill calib_size must be positive");
  if (!(finetune.lr > 0.0)) throw ConfigError("finetune lr must be positive");
  injection.validate();
  for (const auto& a : attacks) a.validate();
  if (eval.seeds.empty()) throw ConfigError("eval needs at least one seed");
  if (eval.entropy_samples == 0) throw ConfigError("entropy_samples must be positive");
  for (double r : sweeps.ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep ratios must lie in [0, 1]");
  }
  for (double e : sweeps.epsilons) {
    if (!(e >= 0.0)) throw ConfigError("sweep epsilons must be non-negative");
  }
  if (jll.points < 2 || !(jll.eps > 0.0 && jll.eps < 1.0) || jll.k == 0 || jll.d == 0 || jll.s == 0) {
    throw ConfigError("invalid jll settings");
  }
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    check_keys(j, {"data", "model", "training", "distill", "finetune", "injection", "attacks",
                   "eval", "sweeps", "cost", "jll", "output_dir"},
               "config");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"synthetic", "train_samples", "test_samples", "idx"}, "data");
      read(d, "train_samples", c.data.train_samples);
      read(d, "test_samples", c.data.test_samples);
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        check_keys(s, {"classes", "image_size", "noise", "contrast", "bar_width", "seed"},
                   "data.synthetic");
        read(s, "classes", c.data.synthetic.classes);
        read(s, "image_size", c.data.synthetic.image_size);
        read(s, "noise", c.data.synthetic.noise);
        read(s, "contrast", c.data.synthetic.contrast);
        read(s, "bar_width", c.data.synthetic.bar_width);
        read(s, "seed", c.data.synthetic.seed);
      }
      if (d.contains("idx")) {
        const auto& x = d.at("idx");
        check_keys(x, {"train_images", "train_labels", "test_images", "test_labels"}, "data.idx");
        auto path = [&](const char* key) {
          return resolve(x.value(key, std::string()), base_dir);
        };
        c.data.train_images = path("train_images");
        c.data.train_labels = path("train_labels");
        c.data.test_images = path("test_images");
        c.data.test_labels = path("test_labels");
        for (const auto& p : {c.data.train_images, c.data.train_labels, c.data.test_images,
                              c.data.test_labels}) {
          require_file(p);
        }
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"conv1_channels", "conv2_channels", "kernel"}, "model");
      read(m, "conv1_channels", c.model.conv1_channels);
      read(m, "conv2_channels", c.model.conv2_channels);
      read(m, "kernel", c.model.kernel);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      check_keys(t, {"epochs", "batch", "lr", "momentum", "weight_decay", "lr_decay_epochs",
                     "pgd_train"},
                 "training");
      read(t, "epochs", c.training.epochs);
      read(t, "batch", c.training.batch);
      read(t, "lr", c.training.lr);
      read(t, "momentum", c.training.momentum);
      read(t, "weight_decay", c.training.weight_decay);
      if (t.contains("lr_decay_epochs")) {
        c.training.lr_decay_epochs = t.at("lr_decay_epochs").get<std::vector<std::size_t>>();
      }
      if (t.contains("pgd_train")) {
        json p = t.at("pgd_train");
        if (!p.contains("kind")) p["kind"] = "pgd";
        c.training.pgd_train = parse_attack(p);
      }
    }
    if (j.contains("distill")) {
      const auto& d = j.at("distill");
      check_keys(d, {"k", "k_fraction", "method", "sgd", "calib_size", "holdout_size", "s"},
                 "distill");
      read(d, "k", c.distill.k);
      read(d, "k_fraction", c.distill.k_fraction);
      read(d, "calib_size", c.distill.calib_size);
      read(d, "holdout_size", c.distill.holdout_size);
      read(d, "s", c.distill.s);
      const auto method = d.value("method", std::string("closed_form"));
      if (method == "closed_form") {
        c.distill.method = ClosedFormFit{};
      } else if (method == "sgd") {
        SgdFit sgd;
        if (d.contains("sgd")) {
          const auto& s = d.at("sgd");
          check_keys(s, {"epochs", "lr", "momentum", "batch", "seed"}, "distill.sgd");
          read(s, "epochs", sgd.epochs);
          read(s, "lr", sgd.lr);
          read(s, "momentum", sgd.momentum);
          read(s, "batch", sgd.batch);
          read(s, "seed", sgd.seed);
        }
        c.distill.method = sgd;
      } else {
        throw ConfigError("unknown distill method '" + method + "'");
      }
    }
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      check_keys(f, {"epochs", "lr", "adversarial"}, "finetune");
      read(f, "epochs", c.finetune.epochs);
      read(f, "lr", c.finetune.lr);
      read(f, "adversarial", c.finetune.adversarial);
    }
    if (j.contains("injection")) c.injection = parse_injection(j.at("injection"));
    if (j.contains("attacks")) {
      for (const auto& a : j.at("attacks")) c.attacks.push_back(parse_attack(a));
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"seeds", "entropy_samples", "entropy_inputs"}, "eval");
      read(e, "seeds", c.eval.seeds);
      read(e, "entropy_samples", c.eval.entropy_samples);
      read(e, "entropy_inputs", c.eval.entropy_inputs);
    }
    if (j.contains("sweeps")) {
      const auto& s = j.at("sweeps");
      check_keys(s, {"ratios", "epsilons"}, "sweeps");
      read(s, "ratios", c.sweeps.ratios);
      if (s.contains("epsilons")) {
        for (const auto& e : s.at("epsilons")) c.sweeps.epsilons.push_back(parse_amount(e, "epsilons"));
      }
    }
    if (j.contains("cost")) {
      const auto& s = j.at("cost");
      check_keys(s, {"fixture", "patterns"}, "cost");
      c.cost.fixture = resolve(s.value("fixture", std::string()), base_dir);
      require_file(c.cost.fixture);
      read(s, "patterns", c.cost.patterns);
    }
    if (j.contains("jll")) {
      const auto& s = j.at("jll");
      check_keys(s, {"d", "k", "s", "points", "eps", "seed"}, "jll");
      read(s, "d", c.jll.d);
      read(s, "k", c.jll.k);
      read(s, "s", c.jll.s);
      read(s, "points", c.jll.points);
      read(s, "eps", c.jll.eps);
      read(s, "seed", c.jll.seed);
    }
    if (j.contains("output_dir")) {
      c.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace nenn
