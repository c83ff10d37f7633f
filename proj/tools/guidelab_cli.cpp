// guidelab: batch runner for the classifier-guidance experiments.
//
//   guidelab gen-data    --config C [--out DIR]
//   guidelab train       --config C [--persona non_robust|robust|all]
//   guidelab sensitivity --config C [--classifier K --metric M --path P --stabilizer S]
//   guidelab sample      --config C [--setup NAME]
//   guidelab sweep       --config C [--setup NAME]
//   guidelab report      --out DIR
//
// Exit codes: 0 success, 1 config or input error, 2 every chain of a batch
// diverged (or training diverged).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "guidelab/classifier.hpp"
#include "guidelab/eval.hpp"
#include "guidelab/experiment.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/io.hpp"
#include "guidelab/parallel.hpp"
#include "guidelab/sensitivity.hpp"
#include "guidelab/svg.hpp"

namespace fs = std::filesystem;
using namespace guidelab;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kDiverged = 2;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string format = "csv";
};

struct Context {
  ExperimentConfig cfg;
  std::string hash;
  fs::path out;
  std::string format;

  std::string path(const std::string& name) const { return (out / name).string(); }

  // Writes a table as NAME.csv or NAME.json depending on --format.
  void write_table(const std::string& name, const Table& t) const {
    if (format == "json") {
      write_text(path(name + ".json"), to_json(t).dump(2) + "\n");
    } else {
      write_text(path(name + ".csv"), to_csv(t));
    }
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw InvalidArgument("cannot create output directory '" + dir.string() + "'");
  }
}

Context make_context(const CommonOptions& o) {
  Context c;
  if (o.config.empty()) throw ConfigError("--config is required");
  c.cfg = load_config(o.config);
  if (o.seed) c.cfg.seed = *o.seed;
  c.hash = config_hash(c.cfg);
  c.out = o.out.empty() ? fs::path(c.cfg.output_dir) : fs::path(o.out);
  c.format = o.format;
  ensure_dir(c.out);
  set_threads(static_cast<unsigned>(o.threads));
  return c;
}

std::string checkpoint_name(ClassifierKind k) { return "model_" + to_string(k) + ".json"; }

ClassifierHandle load_classifier(const Context& c, const std::string& name) {
  const ClassifierKind kind = classifier_kind_from_string(name);
  if (kind == ClassifierKind::bayes_oracle) return ClassifierHandle::oracle(c.cfg.data);
  const std::string p = c.path(checkpoint_name(kind));
  if (!fs::exists(p)) {
    throw InvalidArgument("missing checkpoint '" + p + "' (run `train` first)");
  }
  Json doc;
  try {
    doc = Json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(p + ": " + e.what());
  }
  if (doc.value("config_hash", "") != c.hash) {
    std::cerr << "warning: " << p << " was trained under config "
              << doc.value("config_hash", "?") << ", current is " << c.hash << "\n";
  }
  const MlpModel m = model_from_json(doc, p);
  if (m.input_dim() != c.cfg.data.dim || m.num_classes() != c.cfg.data.num_classes()) {
    throw InvalidArgument(p + ": checkpoint shape does not match the data spec");
  }
  return ClassifierHandle::network(kind, m);
}

GuidanceConfig guidance_for(const Context& c, const SetupConfig& s) {
  GuidanceConfig g;
  g.scale = s.scale;
  g.path = s.path;
  g.stabilizer = s.stabilizer;
  g.classifier = load_classifier(c, s.classifier);
  g.target = c.cfg.target;
  g.objective = c.cfg.objective;
  return g;
}

// --- commands ------------------------------------------------------------------

int cmd_gen_data(const Context& c) {
  const auto train = sample_dataset(c.cfg.data, c.cfg.n_train, c.cfg.train_data_seed());
  const auto val = sample_dataset(c.cfg.data, c.cfg.n_validation, c.cfg.validation_data_seed());
  c.write_table("train", dataset_table(train, c.hash));
  c.write_table("validation", dataset_table(val, c.hash));
  Json spec = {{"config_hash", c.hash}, {"spec", gmm_to_json(c.cfg.data)}};
  write_text(c.path("spec.json"), spec.dump(2) + "\n");
  std::printf("wrote %zu training and %zu validation points to %s\n",
              c.cfg.n_train, c.cfg.n_validation, c.out.string().c_str());
  return kOk;
}

int cmd_train(const Context& c, const std::string& persona) {
  std::vector<ClassifierKind> kinds;
  if (persona == "all" || persona == "non_robust") kinds.push_back(ClassifierKind::non_robust);
  if (persona == "all" || persona == "robust") kinds.push_back(ClassifierKind::robust);
  if (kinds.empty()) throw ConfigError("--persona must be non_robust, robust or all");
  const Schedule sch = c.cfg.schedule.build();
  const auto train_data = sample_dataset(c.cfg.data, c.cfg.n_train, c.cfg.train_data_seed());
  const auto val = sample_dataset(c.cfg.data, c.cfg.n_validation, c.cfg.validation_data_seed());
  for (auto kind : kinds) {
    const TrainResult r = train(train_data, c.cfg.training(kind), &sch);
    Json doc = model_to_json(r.model);
    doc["persona"] = to_string(kind);
    doc["config_hash"] = c.hash;
    write_text(c.path(checkpoint_name(kind)), doc.dump() + "\n");
    Table loss;
    loss.columns = {"epoch", "loss", "config_hash"};
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
      loss.add({static_cast<long long>(e + 1), r.loss_curve[e], c.hash});
    }
    c.write_table("loss_" + to_string(kind), loss);
    const auto h = ClassifierHandle::network(kind, r.model);
    std::printf("%s: final loss %.6g, clean validation accuracy %.4f\n",
                to_string(kind).c_str(),
                r.loss_curve.empty() ? std::nan("") : r.loss_curve.back(),
                accuracy(h, val, Preprocess::none()));
  }
  return kOk;
}

int cmd_sensitivity(const Context& c, std::vector<CurveConfig> curves) {
  if (curves.empty()) curves = c.cfg.curves;
  if (curves.empty()) throw ConfigError("no sensitivity curves configured");
  const Schedule sch = c.cfg.schedule.build();
  const AnalyticDenoiser dn(c.cfg.data, sch);
  const auto data = sample_dataset(c.cfg.data, c.cfg.sensitivity_points,
                                   derive_seed(c.cfg.seed, "sensitivity-data"));
  std::vector<SensitivityCurve> out;
  std::vector<std::string> tags;
  LinePlot plot;
  plot.title = "sensitivity along coupled trajectories";
  plot.x_label = "t";
  plot.y_label = "mean ratio";
  plot.log_y = true;
  for (const auto& cv : curves) {
    const auto h = load_classifier(c, cv.classifier);
    const CurveSpec spec{cv.metric, cv.path, cv.stabilizer};
    auto curve = sensitivity_curve(h, dn, data, spec, derive_seed(c.cfg.seed, "sensitivity"));
    const std::string label = curve.metric + " " + cv.classifier + " " + curve.path +
                              (cv.stabilizer ? " " + curve.stabilizer : "");
    std::printf("%-50s mean over t: %.6g  (undefined pairs: %ld)\n", label.c_str(),
                curve.average(2, sch.steps()), curve.undefined);
    Series s{label, {}, curve.mean};
    for (int t : curve.t) s.x.push_back(t);
    plot.series.push_back(std::move(s));
    tags.push_back(cv.classifier);
    out.push_back(std::move(curve));
  }
  c.write_table("sensitivity", curve_table(out, tags, c.hash));
  write_text(c.path("sensitivity.svg"), render_svg(plot));
  return kOk;
}

int cmd_sample(const Context& c, std::string setup_name) {
  if (setup_name.empty()) setup_name = c.cfg.sample_setup;
  if (setup_name.empty()) {
    if (c.cfg.setups.empty()) throw ConfigError("no guidance setups configured");
    setup_name = c.cfg.setups.front().name;
  }
  const SetupConfig& s = c.cfg.setup(setup_name);
  const AnalyticDenoiser dn(c.cfg.data, c.cfg.schedule.build());
  const GuidanceConfig g = guidance_for(c, s);
  const SampleBatch b = sample_batch(dn, g, c.cfg.n_samples,
                                     derive_seed(c.cfg.seed, "sample:" + s.name));
  c.write_table("samples_" + s.name, samples_table(b, c.hash));
  MetricsReport r;
  if (b.n_diverged < c.cfg.n_samples) {
    r = evaluate(b.finite_samples(), c.cfg.data, c.cfg.target, g.classifier,
                 derive_seed(c.cfg.seed, "sample-reference:" + s.name), b.n_diverged);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.target_accuracy_oracle = r.target_accuracy_guiding = r.fd = r.cfd = nan;
    r.n_diverged = b.n_diverged;
  }
  r.config_hash = c.hash;
  Json doc = report_to_json(r);
  doc["setup"] = s.name;
  doc["scale"] = s.scale;
  write_text(c.path("metrics_" + s.name + ".json"), doc.dump(2) + "\n");
  std::printf("%s s=%g: oracle acc %.4f, guiding acc %.4f, fd %.6g, cfd %.6g, diverged %zu/%zu\n",
              s.name.c_str(), s.scale, r.target_accuracy_oracle,
              r.target_accuracy_guiding, r.fd, r.cfd, b.n_diverged, c.cfg.n_samples);
  if (b.n_diverged == c.cfg.n_samples) {
    std::fprintf(stderr, "every chain diverged\n");
    return kDiverged;
  }
  return kOk;
}

int cmd_sweep(const Context& c, const std::string& only) {
  std::vector<const SetupConfig*> setups;
  for (const auto& s : c.cfg.setups) {
    if (only.empty() || s.name == only) setups.push_back(&s);
  }
  if (!only.empty()) c.cfg.setup(only);
  if (setups.empty()) throw ConfigError("no guidance setups configured");
  for (const auto* s : setups) {
    if (s->scales.empty()) {
      throw ConfigError("setup '" + s->name + "' has no sweep scales");
    }
  }
  const AnalyticDenoiser dn(c.cfg.data, c.cfg.schedule.build());
  LinePlot acc{"oracle target accuracy vs guidance scale", "s", "accuracy", false, {}};
  LinePlot fd{"fd vs guidance scale", "s", "fd", true, {}};
  LinePlot cfd{"cfd vs guidance scale", "s", "cfd", true, {}};
  std::size_t batches = 0, dead = 0;
  for (const auto* s : setups) {
    const GuidanceConfig g = guidance_for(c, *s);
    const auto rows = sweep(dn, c.cfg.data, g, s->scales, c.cfg.sweep_samples,
                            derive_seed(c.cfg.seed, "sweep:" + s->name));
    c.write_table("sweep_" + s->name, sweep_table(rows, c.hash));
    Series a{s->name, {}, {}}, f{s->name, {}, {}}, cf{s->name, {}, {}};
    for (const auto& r : rows) {
      ++batches;
      dead += r.all_diverged ? 1 : 0;
      a.x.push_back(r.scale);
      a.y.push_back(r.report.target_accuracy_oracle);
      f.x.push_back(r.scale);
      f.y.push_back(r.report.fd);
      cf.x.push_back(r.scale);
      cf.y.push_back(r.report.cfd);
      std::printf("%-20s s=%-10g acc %.4f  guiding %.4f  fd %.6g  cfd %.6g  diverged %zu\n",
                  s->name.c_str(), r.scale, r.report.target_accuracy_oracle,
                  r.report.target_accuracy_guiding, r.report.fd, r.report.cfd,
                  r.report.n_diverged);
    }
    acc.series.push_back(std::move(a));
    fd.series.push_back(std::move(f));
    cfd.series.push_back(std::move(cf));
  }
  write_text(c.path("sweep_accuracy.svg"), render_svg(acc));
  write_text(c.path("sweep_fd.svg"), render_svg(fd));
  write_text(c.path("sweep_cfd.svg"), render_svg(cfd));
  if (dead == batches) {
    std::fprintf(stderr, "every chain of every batch diverged\n");
    return kDiverged;
  }
  return kOk;
}

// Reads sweep_<setup>.csv / .json tables back as string cells.
std::map<std::string, Table> read_sweeps(const fs::path& dir) {
  std::map<std::string, Table> out;
  if (!fs::is_directory(dir)) {
    throw InvalidArgument("output directory '" + dir.string() + "' does not exist");
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string ext = e.path().extension().string();
    if (name.rfind("sweep_", 0) != 0 || (ext != ".csv" && ext != ".json")) continue;
    const std::string setup = e.path().stem().string().substr(6);
    if (out.count(setup)) throw InvalidArgument("sweep '" + setup + "' present in two formats");
    const std::string text = read_text(e.path().string());
    if (ext == ".csv") {
      out[setup] = parse_csv(text);
      continue;
    }
    Json rows;
    try {
      rows = Json::parse(text);
    } catch (const nlohmann::json::parse_error& err) {
      throw InvalidArgument(e.path().string() + ": " + err.what());
    }
    Table t;
    t.columns = {"s", "acc_oracle", "acc_guiding", "fd", "cfd", "n", "n_diverged", "config_hash"};
    for (const auto& r : rows) {
      std::vector<Cell> row;
      for (const auto& col : t.columns) {
        const Json& v = r.at(col);
        if (v.is_string()) {
          row.emplace_back(v.get<std::string>());
        } else if (v.is_null()) {
          row.emplace_back(std::string("nan"));
        } else if (v.is_number_integer()) {
          row.emplace_back(std::to_string(v.get<long long>()));
        } else {
          row.emplace_back(format_double(v.get<double>()));
        }
      }
      t.rows.push_back(std::move(row));
    }
    out[setup] = std::move(t);
  }
  if (out.empty()) throw InvalidArgument("no sweep tables in '" + dir.string() + "' (run `sweep` first)");
  return out;
}

int cmd_report(const fs::path& dir, const std::string& format) {
  struct Best {
    std::string setup;
    double s, acc, guiding, fd, cfd;
    long long n, n_div;
    bool qualifies;
  };
  std::string hash;
  std::vector<Best> best;
  for (const auto& [setup, t] : read_sweeps(dir)) {
    auto col = [&](const char* name) {
      const auto it = std::find(t.columns.begin(), t.columns.end(), name);
      if (it == t.columns.end()) throw InvalidArgument("sweep_" + setup + ": missing column " + name);
      return static_cast<std::size_t>(it - t.columns.begin());
    };
    auto num = [&](const std::vector<Cell>& row, const char* name) {
      return std::stod(std::get<std::string>(row[col(name)]));
    };
    std::optional<Best> pick;
    for (const auto& row : t.rows) {
      const std::string h = std::get<std::string>(row[col("config_hash")]);
      if (hash.empty()) hash = h;
      if (h != hash) throw InvalidArgument("sweep tables come from different configs");
      Best b{setup, num(row, "s"), num(row, "acc_oracle"), num(row, "acc_guiding"),
             num(row, "fd"), num(row, "cfd"), static_cast<long long>(num(row, "n")),
             static_cast<long long>(num(row, "n_diverged")), false};
      if (std::isnan(b.acc)) continue;
      b.qualifies = b.acc >= 0.95;
      // Qualifying rows rank by cfd; otherwise fall back to highest accuracy.
      const bool better =
          !pick || (b.qualifies && !pick->qualifies) ||
          (b.qualifies && pick->qualifies && b.cfd < pick->cfd) ||
          (!b.qualifies && !pick->qualifies && b.acc > pick->acc);
      if (better) pick = b;
    }
    if (pick) best.push_back(*pick);
  }
  std::optional<std::size_t> winner;
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (best[i].qualifies && (!winner || best[i].cfd < best[*winner].cfd)) winner = i;
  }
  Table t;
  t.columns = {"setup", "s", "acc_oracle", "acc_guiding", "fd", "cfd", "n",
               "n_diverged", "qualifies", "best", "config_hash"};
  for (std::size_t i = 0; i < best.size(); ++i) {
    const auto& b = best[i];
    t.add({b.setup, b.s, b.acc, b.guiding, b.fd, b.cfd, b.n, b.n_div,
           static_cast<long long>(b.qualifies), static_cast<long long>(winner == i), hash});
    std::printf("%-20s s=%-10g acc %.4f  fd %.6g  cfd %.6g%s\n", b.setup.c_str(), b.s,
                b.acc, b.fd, b.cfd, winner == i ? "  <- best" : "");
  }
  if (!winner) std::printf("no setup reached oracle accuracy 0.95\n");
  if (format == "json") {
    write_text((dir / "report.json").string(), to_json(t).dump(2) + "\n");
  } else {
    write_text((dir / "report.csv").string(), to_csv(t));
  }
  return kOk;
}

void add_common(CLI::App* sub, CommonOptions& o, bool needs_config = true) {
  auto* cfg = sub->add_option("--config", o.config, "experiment config (JSON)");
  if (needs_config) cfg->required();
  sub->add_option("--out", o.out, "output directory (default: config output_dir)");
  sub->add_option("--seed", o.seed, "override the master seed");
  sub->add_option("--threads", o.threads, "worker thread cap")->check(CLI::PositiveNumber);
  sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"classifier-guidance experiments on synthetic mixtures"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* gen = app.add_subcommand("gen-data", "sample the train/validation datasets");
  add_common(gen, o);

  std::string persona = "all";
  auto* tr = app.add_subcommand("train", "train the non-robust and robust classifiers");
  add_common(tr, o);
  tr->add_option("--persona", persona, "non_robust, robust or all");

  std::string classifier, metric, path, stabilizer;
  auto* sens = app.add_subcommand("sensitivity", "sensitivity curves along coupled trajectories");
  add_common(sens, o);
  sens->add_option("--classifier", classifier, "classifier for a single ad-hoc curve");
  sens->add_option("--metric", metric, "logit or gradient");
  sens->add_option("--path", path, "raw, x0pred or x0pred_stopgrad");
  sens->add_option("--stabilizer", stabilizer, "none, ema:BETA, adam or adam:EPS");

  std::string setup;
  auto* smp = app.add_subcommand("sample", "guided sampling for one setup");
  add_common(smp, o);
  smp->add_option("--setup", setup, "setup name (default: guidance.sample_setup)");

  auto* swp = app.add_subcommand("sweep", "guidance-scale sweep for every setup");
  add_common(swp, o);
  swp->add_option("--setup", setup, "restrict to one setup");

  auto* rep = app.add_subcommand("report", "summarize the sweeps in an output directory");
  add_common(rep, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (rep->parsed()) {
      set_threads(static_cast<unsigned>(o.threads));
      fs::path dir = o.out;
      if (dir.empty()) {
        if (o.config.empty()) throw ConfigError("report needs --out or --config");
        dir = load_config(o.config).output_dir;
      }
      return cmd_report(dir, o.format);
    }
    const Context c = make_context(o);
    if (gen->parsed()) return cmd_gen_data(c);
    if (tr->parsed()) return cmd_train(c, persona);
    if (sens->parsed()) {
      std::vector<CurveConfig> curves;
      if (!classifier.empty() || !metric.empty() || !path.empty() || !stabilizer.empty()) {
        CurveConfig cv;
        if (!classifier.empty()) {
          classifier_kind_from_string(classifier);
          cv.classifier = classifier;
        }
        if (!metric.empty()) cv.metric = metric_from_string(metric);
        if (!path.empty()) cv.path = gradient_path_from_string(path);
        if (!stabilizer.empty()) cv.stabilizer = stabilizer_from_string(stabilizer);
        if (cv.stabilizer && cv.metric != SensitivityMetric::gradient) {
          throw ConfigError("stabilizers apply to the gradient metric only");
        }
        curves.push_back(cv);
      }
      return cmd_sensitivity(c, curves);
    }
    if (smp->parsed()) return cmd_sample(c, setup);
    if (swp->parsed()) return cmd_sweep(c, setup);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
