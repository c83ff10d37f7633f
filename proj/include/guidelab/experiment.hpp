#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "guidelab/classifier.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/io.hpp"
#include "guidelab/nn.hpp"
#include "guidelab/schedule.hpp"
#include "guidelab/sensitivity.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

// Raised for anything wrong with a config file; the CLI maps it to exit 1.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct ScheduleConfig {
  int steps = 400;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  PosteriorVariance posterior_variance = PosteriorVariance::beta;

  Schedule build() const {
    return Schedule::linear(steps, beta_start, beta_end, posterior_variance);
  }
};

struct CurveConfig {
  std::string classifier = "non_robust";
  SensitivityMetric metric = SensitivityMetric::gradient;
  GradientPath path;
  std::optional<StabilizerConfig> stabilizer;
};

struct SetupConfig {
  std::string name;
  std::string classifier = "non_robust";
  GradientPath path;
  StabilizerConfig stabilizer;
  double scale = 1.0;          // used by `sample`
  std::vector<double> scales;  // used by `sweep`
};

/// Everything one experiment needs. The hash covers every field except the
/// output directory.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  ScheduleConfig schedule;
  GmmSpec data = default_two_class_spec();
  std::size_t n_train = 4000;
  std::size_t n_validation = 2000;
  TrainConfig non_robust;
  TrainConfig robust;
  std::size_t sensitivity_points = 300;
  std::vector<CurveConfig> curves;
  int target = 0;
  GradientObjective objective = GradientObjective::log_softmax;
  std::size_t n_samples = 2000;
  std::size_t sweep_samples = 500;
  std::string sample_setup;
  std::vector<SetupConfig> setups;

  const SetupConfig& setup(const std::string& name) const {
    for (const auto& s : setups) {
      if (s.name == name) return s;
    }
    throw ConfigError("no guidance setup named '" + name + "'");
  }

  // Training seeds derive from the master seed; the seed field of the
  // per-persona TrainConfig is ignored.
  TrainConfig training(ClassifierKind kind) const {
    TrainConfig c = kind == ClassifierKind::robust ? robust : non_robust;
    c.noise = kind == ClassifierKind::robust ? NoiseMode::forward_noised
                                             : NoiseMode::clean;
    c.seed = derive_seed(seed, "train-" + to_string(kind));
    return c;
  }
  std::uint64_t train_data_seed() const { return derive_seed(seed, "train-data"); }
  std::uint64_t validation_data_seed() const {
    return derive_seed(seed, "validation-data");
  }
};

inline std::string metric_to_string(SensitivityMetric m) {
  return m == SensitivityMetric::logit ? "logit" : "gradient";
}

inline SensitivityMetric metric_from_string(const std::string& s) {
  if (s == "logit" || s == "S_l") return SensitivityMetric::logit;
  if (s == "gradient" || s == "S_g") return SensitivityMetric::gradient;
  throw InvalidArgument("unknown sensitivity metric '" + s + "'");
}

inline std::string objective_to_string(GradientObjective o) {
  return o == GradientObjective::log_softmax ? "log_softmax" : "raw_logit";
}

inline GradientObjective objective_from_string(const std::string& s) {
  if (s == "log_softmax") return GradientObjective::log_softmax;
  if (s == "raw_logit") return GradientObjective::raw_logit;
  throw InvalidArgument("unknown gradient objective '" + s + "'");
}

/// Short textual form used on the command line: none, ema:BETA, adam,
/// adam:EPS.
inline std::optional<StabilizerConfig> stabilizer_from_string(const std::string& s) {
  if (s == "none") return std::nullopt;
  if (s == "identity") return StabilizerConfig::identity();
  if (s == "adam") return StabilizerConfig::adam();
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const std::string kind = s.substr(0, colon);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(s.substr(colon + 1), &used);
      if (used != s.size() - colon - 1) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw InvalidArgument("bad stabilizer parameter in '" + s + "'");
    }
    if (kind == "ema") return StabilizerConfig::ema(v);
    if (kind == "adam") return StabilizerConfig::adam(v);
  }
  throw InvalidArgument("unknown stabilizer '" + s + "'");
}

// --- JSON mapping ------------------------------------------------------------

inline Json stabilizer_to_json(const StabilizerConfig& s) {
  switch (s.kind) {
    case StabilizerKind::identity: return {{"kind", "identity"}};
    case StabilizerKind::ema: return {{"kind", "ema"}, {"beta", s.beta}};
    case StabilizerKind::adam:
      return {{"kind", "adam"}, {"beta1", s.beta1}, {"beta2", s.beta2},
              {"epsilon", s.epsilon}};
  }
  return {};
}

inline Json train_to_json(const TrainConfig& c) {
  return {{"hidden", c.hidden},
          {"activation", to_string(c.activation)},
          {"epochs", c.epochs},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"batch_size", c.optimizer.batch_size}};
}

/// Fully expanded form: every default is written out, so two configs that
/// mean the same thing serialize identically.
inline Json config_to_json(const ExperimentConfig& c, bool with_output_dir = true) {
  Json curves = Json::array();
  for (const auto& cv : c.curves) {
    curves.push_back({{"classifier", cv.classifier},
                      {"metric", metric_to_string(cv.metric)},
                      {"path", to_string(cv.path)},
                      {"stabilizer", cv.stabilizer ? stabilizer_to_json(*cv.stabilizer)
                                                   : Json({{"kind", "none"}})}});
  }
  Json setups = Json::array();
  for (const auto& s : c.setups) {
    setups.push_back({{"name", s.name},
                      {"classifier", s.classifier},
                      {"path", to_string(s.path)},
                      {"stabilizer", stabilizer_to_json(s.stabilizer)},
                      {"scale", s.scale},
                      {"scales", s.scales}});
  }
  Json j = {
      {"seed", c.seed},
      {"schedule",
       {{"steps", c.schedule.steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"posterior_variance", to_string(c.schedule.posterior_variance)}}},
      {"data", {{"spec", gmm_to_json(c.data)}}},
      {"dataset", {{"n_train", c.n_train}, {"n_validation", c.n_validation}}},
      {"training",
       {{"non_robust", train_to_json(c.non_robust)},
        {"robust", train_to_json(c.robust)}}},
      {"sensitivity", {{"n_points", c.sensitivity_points}, {"curves", curves}}},
      {"guidance",
       {{"target", c.target},
        {"objective", objective_to_string(c.objective)},
        {"n_samples", c.n_samples},
        {"sweep_samples", c.sweep_samples},
        {"sample_setup", c.sample_setup},
        {"setups", setups}}}};
  if (with_output_dir) j["output_dir"] = c.output_dir;
  return j;
}

/// FNV-1a of the canonical compact dump (keys sorted), as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(config_to_json(c, false).dump())));
  return buf;
}

namespace detail {

template <typename T>
T get_as(const Json& j, const std::string& where) {
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw ConfigError(where + ": expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_unsigned() == false && j.get<long long>() < 0) {
          throw ConfigError(where + ": expected a non-negative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError(where + ": expected a number");
    }
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

template <typename T>
void read_opt(const Json& obj, const char* key, const std::string& where, T& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = get_as<T>(*it, where + "." + key);
}

// Maps library argument errors into config errors that name the field.
template <typename F>
auto at_field(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    // Messages from the JSON helpers may already carry the path.
    if (msg.rfind(where, 0) == 0) throw ConfigError(msg);
    throw ConfigError(where + ": " + msg);
  }
}

inline void check_config_keys(const Json& obj, const std::string& where,
                              std::initializer_list<const char*> allowed) {
  at_field(where, [&] { check_keys(obj, where, allowed); });
}

inline StabilizerConfig stabilizer_from_json(const Json& j, const std::string& where) {
  if (j.is_string()) {
    const auto s = at_field(where, [&] { return stabilizer_from_string(j.get<std::string>()); });
    return s ? *s : StabilizerConfig::identity();
  }
  check_config_keys(j, where, {"kind", "beta", "beta1", "beta2", "epsilon"});
  const auto kind = get_as<std::string>(at_field(where, [&]() -> const Json& {
                                          return field(j, where, "kind");
                                        }),
                                        where + ".kind");
  StabilizerConfig s;
  if (kind == "identity" || kind == "none") {
    check_config_keys(j, where, {"kind"});
  } else if (kind == "ema") {
    check_config_keys(j, where, {"kind", "beta"});
    s.kind = StabilizerKind::ema;
    s.beta = 0.99;
    read_opt(j, "beta", where, s.beta);
  } else if (kind == "adam") {
    check_config_keys(j, where, {"kind", "beta1", "beta2", "epsilon"});
    s.kind = StabilizerKind::adam;
    read_opt(j, "beta1", where, s.beta1);
    read_opt(j, "beta2", where, s.beta2);
    read_opt(j, "epsilon", where, s.epsilon);
  } else {
    throw ConfigError(where + ".kind: unknown stabilizer '" + kind + "'");
  }
  at_field(where, [&] { s.validate(); });
  return s;
}

inline TrainConfig train_from_json(const Json& j, const std::string& where) {
  check_config_keys(j, where, {"hidden", "activation", "epochs", "learning_rate",
                               "beta1", "beta2", "epsilon", "batch_size"});
  TrainConfig c;
  read_opt(j, "hidden", where, c.hidden);
  for (int h : c.hidden) {
    if (h < 1) throw ConfigError(where + ".hidden: layer sizes must be >= 1");
  }
  if (auto it = j.find("activation"); it != j.end()) {
    c.activation = at_field(where + ".activation", [&] {
      return activation_from_string(get_as<std::string>(*it, where + ".activation"));
    });
  }
  read_opt(j, "epochs", where, c.epochs);
  read_opt(j, "learning_rate", where, c.optimizer.learning_rate);
  read_opt(j, "beta1", where, c.optimizer.beta1);
  read_opt(j, "beta2", where, c.optimizer.beta2);
  read_opt(j, "epsilon", where, c.optimizer.epsilon);
  read_opt(j, "batch_size", where, c.optimizer.batch_size);
  if (c.epochs < 0) throw ConfigError(where + ".epochs: must be >= 0");
  if (c.optimizer.batch_size < 1) throw ConfigError(where + ".batch_size: must be >= 1");
  if (!(c.optimizer.learning_rate > 0.0)) {
    throw ConfigError(where + ".learning_rate: must be positive");
  }
  return c;
}

inline GmmSpec data_from_json(const Json& j, const std::string& where,
                              const std::filesystem::path& base_dir) {
  check_config_keys(j, where, {"preset", "spec", "file"});
  if (j.size() != 1) {
    throw ConfigError(where + ": give exactly one of 'preset', 'spec', 'file'");
  }
  if (auto it = j.find("preset"); it != j.end()) {
    const auto name = get_as<std::string>(*it, where + ".preset");
    if (name == "two_class") return default_two_class_spec();
    if (name == "three_class") return default_three_class_spec();
    throw ConfigError(where + ".preset: unknown preset '" + name + "'");
  }
  if (auto it = j.find("spec"); it != j.end()) {
    return at_field(where, [&] { return gmm_from_json(*it, where + ".spec"); });
  }
  const auto file = get_as<std::string>(j.at("file"), where + ".file");
  std::filesystem::path p(file);
  if (p.is_relative()) p = base_dir / p;
  std::string text;
  try {
    text = read_text(p.string());
  } catch (const InvalidArgument& e) {
    throw ConfigError(where + ".file: " + e.what());
  }
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
  return at_field(p.string(), [&] { return gmm_from_json(doc, p.string()); });
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Builds a config from JSON. Unknown fields anywhere are errors; omitted
/// fields take defaults. Relative data file paths resolve against base_dir.
inline ExperimentConfig config_from_json(const Json& j,
                                         const std::filesystem::path& base_dir = ".") {
  using namespace detail;
  const std::string root = "config";
  check_config_keys(j, root, {"seed", "output_dir", "schedule", "data", "dataset",
                              "training", "sensitivity", "guidance"});
  ExperimentConfig c;
  read_opt(j, "seed", root, c.seed);
  read_opt(j, "output_dir", root, c.output_dir);

  if (auto it = j.find("schedule"); it != j.end()) {
    const std::string w = root + ".schedule";
    check_config_keys(*it, w, {"steps", "beta_start", "beta_end", "posterior_variance"});
    read_opt(*it, "steps", w, c.schedule.steps);
    read_opt(*it, "beta_start", w, c.schedule.beta_start);
    read_opt(*it, "beta_end", w, c.schedule.beta_end);
    if (auto pv = it->find("posterior_variance"); pv != it->end()) {
      c.schedule.posterior_variance = at_field(w + ".posterior_variance", [&] {
        return posterior_variance_from_string(
            get_as<std::string>(*pv, w + ".posterior_variance"));
      });
    }
    at_field(w, [&] { c.schedule.build(); });
  }

  if (auto it = j.find("data"); it != j.end()) {
    c.data = data_from_json(*it, root + ".data", base_dir);
  }

  if (auto it = j.find("dataset"); it != j.end()) {
    const std::string w = root + ".dataset";
    check_config_keys(*it, w, {"n_train", "n_validation"});
    read_opt(*it, "n_train", w, c.n_train);
    read_opt(*it, "n_validation", w, c.n_validation);
    if (c.n_train < 1 || c.n_validation < 1) {
      throw ConfigError(w + ": dataset sizes must be >= 1");
    }
  }

  if (auto it = j.find("training"); it != j.end()) {
    const std::string w = root + ".training";
    check_config_keys(*it, w, {"non_robust", "robust"});
    if (auto p = it->find("non_robust"); p != it->end()) {
      c.non_robust = train_from_json(*p, w + ".non_robust");
    }
    if (auto p = it->find("robust"); p != it->end()) {
      c.robust = train_from_json(*p, w + ".robust");
    }
  }

  auto classifier_name = [&](const Json& v, const std::string& w) {
    const auto s = get_as<std::string>(v, w);
    at_field(w, [&] { classifier_kind_from_string(s); });
    return s;
  };
  auto path_of = [&](const Json& v, const std::string& w) {
    return at_field(w, [&] { return gradient_path_from_string(get_as<std::string>(v, w)); });
  };

  if (auto it = j.find("sensitivity"); it != j.end()) {
    const std::string w = root + ".sensitivity";
    check_config_keys(*it, w, {"n_points", "curves"});
    read_opt(*it, "n_points", w, c.sensitivity_points);
    if (c.sensitivity_points < 1) throw ConfigError(w + ".n_points: must be >= 1");
    if (auto cv = it->find("curves"); cv != it->end()) {
      if (!cv->is_array()) throw ConfigError(w + ".curves: expected an array");
      for (std::size_t i = 0; i < cv->size(); ++i) {
        const std::string wi = w + ".curves[" + std::to_string(i) + "]";
        const Json& e = (*cv)[i];
        check_config_keys(e, wi, {"classifier", "metric", "path", "stabilizer"});
        CurveConfig cc;
        if (auto f = e.find("classifier"); f != e.end()) {
          cc.classifier = classifier_name(*f, wi + ".classifier");
        }
        if (auto f = e.find("metric"); f != e.end()) {
          cc.metric = at_field(wi + ".metric", [&] {
            return metric_from_string(get_as<std::string>(*f, wi + ".metric"));
          });
        }
        if (auto f = e.find("path"); f != e.end()) cc.path = path_of(*f, wi + ".path");
        if (auto f = e.find("stabilizer"); f != e.end()) {
          const bool none = (f->is_string() && f->get<std::string>() == "none") ||
                            (f->is_object() && f->contains("kind") &&
                             f->at("kind") == "none");
          if (!none) cc.stabilizer = stabilizer_from_json(*f, wi + ".stabilizer");
        }
        if (cc.stabilizer && cc.metric != SensitivityMetric::gradient) {
          throw ConfigError(wi + ": stabilizers apply to the gradient metric only");
        }
        c.curves.push_back(std::move(cc));
      }
    }
  }

  if (auto it = j.find("guidance"); it != j.end()) {
    const std::string w = root + ".guidance";
    check_config_keys(*it, w, {"target", "objective", "n_samples", "sweep_samples",
                               "sample_setup", "setups"});
    read_opt(*it, "target", w, c.target);
    if (auto f = it->find("objective"); f != it->end()) {
      c.objective = at_field(w + ".objective", [&] {
        return objective_from_string(get_as<std::string>(*f, w + ".objective"));
      });
    }
    read_opt(*it, "n_samples", w, c.n_samples);
    read_opt(*it, "sweep_samples", w, c.sweep_samples);
    read_opt(*it, "sample_setup", w, c.sample_setup);
    if (c.n_samples < 1 || c.sweep_samples < 1) {
      throw ConfigError(w + ": sample counts must be >= 1");
    }
    if (auto ss = it->find("setups"); ss != it->end()) {
      if (!ss->is_array()) throw ConfigError(w + ".setups: expected an array");
      for (std::size_t i = 0; i < ss->size(); ++i) {
        const std::string wi = w + ".setups[" + std::to_string(i) + "]";
        const Json& e = (*ss)[i];
        check_config_keys(e, wi, {"name", "classifier", "path", "stabilizer",
                                  "scale", "scales"});
        SetupConfig s;
        s.name = get_as<std::string>(at_field(wi, [&]() -> const Json& {
                                       return field(e, wi, "name");
                                     }),
                                     wi + ".name");
        if (s.name.empty() ||
            s.name.find_first_not_of("abcdefghijklmnopqrstuvwxyz"
                                     "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.") !=
                std::string::npos) {
          throw ConfigError(wi + ".name: use letters, digits, '_', '-', '.'");
        }
        for (const auto& prev : c.setups) {
          if (prev.name == s.name) throw ConfigError(wi + ".name: duplicate '" + s.name + "'");
        }
        if (auto f = e.find("classifier"); f != e.end()) {
          s.classifier = classifier_name(*f, wi + ".classifier");
        }
        if (auto f = e.find("path"); f != e.end()) s.path = path_of(*f, wi + ".path");
        if (auto f = e.find("stabilizer"); f != e.end()) {
          s.stabilizer = stabilizer_from_json(*f, wi + ".stabilizer");
        }
        read_opt(e, "scale", wi, s.scale);
        read_opt(e, "scales", wi, s.scales);
        auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
        if (bad(s.scale)) throw ConfigError(wi + ".scale: must be finite and >= 0");
        for (double v : s.scales) {
          if (bad(v)) throw ConfigError(wi + ".scales: must be finite and >= 0");
        }
        c.setups.push_back(std::move(s));
      }
    }
    if (!c.sample_setup.empty()) c.setup(c.sample_setup);
  }

  const int k = c.data.num_classes();
  if (c.target < 0 || c.target >= k) {
    throw ConfigError(root + ".guidance.target: class out of range [0, " +
                      std::to_string(k) + ")");
  }
  return c;
}

/// Reads and validates a config file; parse errors carry line and column.
inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + detail::line_col(text, e.byte) +
                      ": malformed JSON (" + e.what() + ")");
  }
  try {
    return config_from_json(j, std::filesystem::path(path).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace guidelab
