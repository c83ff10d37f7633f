#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "guidelab/core.hpp"
#include "guidelab/eval.hpp"
#include "guidelab/nn.hpp"
#include "guidelab/sensitivity.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

using Json = nlohmann::json;

// 17 significant digits: enough for any double to read back exactly.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- tables ------------------------------------------------------------------

using Cell = std::variant<double, long long, std::string>;

/// Column-named rows, written either as CSV or as a JSON array of objects.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    require(row.size() == columns.size(), "table: row width != column count");
    rows.push_back(std::move(row));
  }
};

inline std::string csv_field(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    out += (i ? "," : "") + t.columns[i];
  }
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += (i ? "," : "") + csv_field(row[i]);
    }
    out += "\n";
  }
  return out;
}

inline Json to_json(const Table& t) {
  Json rows = Json::array();
  for (const auto& row : t.rows) {
    Json obj = Json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::visit([&](const auto& v) { obj[t.columns[i]] = v; }, row[i]);
    }
    rows.push_back(std::move(obj));
  }
  return rows;
}

// Minimal reader for the files written by to_csv (quoted fields supported).
inline Table parse_csv(const std::string& text) {
  Table t;
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(cur));
      cur.clear();
      lines.push_back(std::move(fields));
      fields.clear();
      any = false;
    } else if (c != '\r') {
      cur += c;
      any = true;
    }
  }
  if (any || !fields.empty()) {
    fields.push_back(std::move(cur));
    lines.push_back(std::move(fields));
  }
  require(!lines.empty(), "csv: empty file");
  t.columns = lines.front();
  for (std::size_t r = 1; r < lines.size(); ++r) {
    require(lines[r].size() == t.columns.size(),
            "csv: line " + std::to_string(r + 1) + " has " +
                std::to_string(lines[r].size()) + " fields, expected " +
                std::to_string(t.columns.size()));
    std::vector<Cell> row;
    for (auto& f : lines[r]) row.emplace_back(std::move(f));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

// --- mixture specs -----------------------------------------------------------

inline Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json mat_to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    a.push_back(vec_to_json(m.row(r).transpose()));
  }
  return a;
}

namespace detail {

// Throws with the offending field path if obj has keys outside allowed.
inline void check_keys(const Json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw InvalidArgument(where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw InvalidArgument(where + ": unknown field '" + k + "'");
  }
}

inline const Json& field(const Json& obj, const std::string& where,
                         const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw InvalidArgument(where + ": missing field '" + key + "'");
  }
  return *it;
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw InvalidArgument(where + ": expected a number");
  return j.get<double>();
}

inline Vec vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InvalidArgument(where + ": expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] =
        number(j[i], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

inline Mat mat_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw InvalidArgument(where + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  Mat m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::string w = where + "[" + std::to_string(r) + "]";
    const Vec row = vec_from_json(j[static_cast<std::size_t>(r)], w);
    if (r == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) throw InvalidArgument(w + ": ragged matrix");
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace detail

inline Json gmm_to_json(const GmmSpec& spec) {
  Json classes = Json::array();
  for (const auto& c : spec.classes) {
    Json comps = Json::array();
    for (const auto& k : c.components) {
      comps.push_back({{"weight", k.weight},
                       {"mean", vec_to_json(k.mean)},
                       {"cov", mat_to_json(k.cov)}});
    }
    classes.push_back({{"prior", c.prior}, {"components", comps}});
  }
  return {{"dim", spec.dim}, {"classes", classes}};
}

inline GmmSpec gmm_from_json(const Json& j, const std::string& where = "spec") {
  using namespace detail;
  check_keys(j, where, {"dim", "classes"});
  GmmSpec spec;
  const Json& dim = field(j, where, "dim");
  if (!dim.is_number_integer()) throw InvalidArgument(where + ".dim: expected an integer");
  spec.dim = dim.get<int>();
  const Json& classes = field(j, where, "classes");
  if (!classes.is_array()) throw InvalidArgument(where + ".classes: expected an array");
  for (std::size_t y = 0; y < classes.size(); ++y) {
    const std::string wc = where + ".classes[" + std::to_string(y) + "]";
    check_keys(classes[y], wc, {"prior", "components"});
    ClassSpec c;
    c.prior = number(field(classes[y], wc, "prior"), wc + ".prior");
    const Json& comps = field(classes[y], wc, "components");
    if (!comps.is_array()) throw InvalidArgument(wc + ".components: expected an array");
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const std::string wk = wc + ".components[" + std::to_string(k) + "]";
      check_keys(comps[k], wk, {"weight", "mean", "cov"});
      Component comp;
      comp.weight = number(field(comps[k], wk, "weight"), wk + ".weight");
      comp.mean = vec_from_json(field(comps[k], wk, "mean"), wk + ".mean");
      comp.cov = mat_from_json(field(comps[k], wk, "cov"), wk + ".cov");
      c.components.push_back(std::move(comp));
    }
    spec.classes.push_back(std::move(c));
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(where + ": " + e.what());
  }
  return spec;
}

// --- checkpoints ---------------------------------------------------------------

/// Weights are stored row-major, one flat array per layer. The JSON writer
/// emits the shortest decimal that reads back to the same double.
inline Json model_to_json(const MlpModel& m) {
  Json w = Json::array(), b = Json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    Json flat = Json::array();
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) {
        flat.push_back(m.weights[l](r, c));
      }
    }
    w.push_back(std::move(flat));
    b.push_back(vec_to_json(m.biases[l]));
  }
  return {{"layer_sizes", m.layer_sizes},
          {"activation", to_string(m.activation)},
          {"weights", w},
          {"biases", b}};
}

inline MlpModel model_from_json(const Json& j,
                                const std::string& where = "checkpoint") {
  using namespace detail;
  if (!j.is_object()) throw InvalidArgument(where + ": expected an object");
  const Json& sizes_j = field(j, where, "layer_sizes");
  if (!sizes_j.is_array()) throw InvalidArgument(where + ".layer_sizes: expected an array");
  std::vector<int> sizes;
  for (const auto& s : sizes_j) {
    if (!s.is_number_integer()) throw InvalidArgument(where + ".layer_sizes: expected integers");
    sizes.push_back(s.get<int>());
  }
  const Json& act = field(j, where, "activation");
  if (!act.is_string()) throw InvalidArgument(where + ".activation: expected a string");
  MlpModel m = MlpModel::zeros(sizes, activation_from_string(act.get<std::string>()));
  const Json& w = field(j, where, "weights");
  const Json& b = field(j, where, "biases");
  if (!w.is_array() || !b.is_array() || w.size() != m.num_layers() ||
      b.size() != m.num_layers()) {
    throw InvalidArgument(where + ": layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const std::string wl = where + ".weights[" + std::to_string(l) + "]";
    const Vec flat = vec_from_json(w[l], wl);
    Mat& W = m.weights[l];
    if (flat.size() != W.size()) throw InvalidArgument(wl + ": wrong length");
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = flat[r * W.cols() + c];
    }
    const std::string bl = where + ".biases[" + std::to_string(l) + "]";
    m.biases[l] = vec_from_json(b[l], bl);
    if (m.biases[l].size() != W.rows()) throw InvalidArgument(bl + ": wrong length");
  }
  m.validate();
  return m;
}

// --- reports -------------------------------------------------------------------

inline Json report_to_json(const MetricsReport& r) {
  return {{"target_accuracy_oracle", r.target_accuracy_oracle},
          {"target_accuracy_guiding_classifier", r.target_accuracy_guiding},
          {"fd", r.fd},
          {"cfd", r.cfd},
          {"n_samples", r.n_samples},
          {"n_diverged", r.n_diverged},
          {"config_hash", r.config_hash}};
}

inline Table dataset_table(const LabeledDataset& data,
                           const std::string& config_hash) {
  Table t;
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    t.columns.push_back("x" + std::to_string(i));
  }
  t.columns.push_back("label");
  t.columns.push_back("config_hash");
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    std::vector<Cell> row;
    for (Eigen::Index i = 0; i < data.dim(); ++i) row.emplace_back(data.points(r, i));
    row.emplace_back(static_cast<long long>(data.labels[static_cast<std::size_t>(r)]));
    row.emplace_back(config_hash);
    t.add(std::move(row));
  }
  return t;
}

inline Table curve_table(const std::vector<SensitivityCurve>& curves,
                         const std::vector<std::string>& classifier_tags,
                         const std::string& config_hash) {
  require(curves.size() == classifier_tags.size(), "curve table: tag count mismatch");
  Table t;
  t.columns = {"t", "mean", "std", "count", "metric", "path",
               "stabilizer", "classifier", "config_hash"};
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& cv = curves[c];
    for (std::size_t i = 0; i < cv.t.size(); ++i) {
      t.add({static_cast<long long>(cv.t[i]), cv.mean[i], cv.std[i],
             static_cast<long long>(cv.count[i]), cv.metric, cv.path,
             cv.stabilizer, classifier_tags[c], config_hash});
    }
  }
  return t;
}

inline Table samples_table(const SampleBatch& b, const std::string& config_hash) {
  Table t;
  const Eigen::Index d = b.samples.cols();
  for (Eigen::Index i = 0; i < d; ++i) t.columns.push_back("x" + std::to_string(i));
  for (const char* c : {"diverged", "diverged_at", "seed", "config_hash"}) {
    t.columns.emplace_back(c);
  }
  for (std::size_t r = 0; r < b.diverged.size(); ++r) {
    std::vector<Cell> row;
    for (Eigen::Index i = 0; i < d; ++i) {
      row.emplace_back(b.samples(static_cast<Eigen::Index>(r), i));
    }
    row.emplace_back(static_cast<long long>(b.diverged[r] ? 1 : 0));
    row.emplace_back(static_cast<long long>(b.diverged_at[r]));
    row.emplace_back(std::to_string(b.seeds[r]));
    row.emplace_back(config_hash);
    t.add(std::move(row));
  }
  return t;
}

inline Table sweep_table(const std::vector<SweepRow>& rows,
                         const std::string& config_hash) {
  Table t;
  t.columns = {"s", "acc_oracle", "acc_guiding", "fd", "cfd",
               "n", "n_diverged", "config_hash"};
  for (const auto& r : rows) {
    t.add({r.scale, r.report.target_accuracy_oracle,
           r.report.target_accuracy_guiding, r.report.fd, r.report.cfd,
           static_cast<long long>(r.report.n_samples + r.report.n_diverged),
           static_cast<long long>(r.report.n_diverged), config_hash});
  }
  return t;
}

}  // namespace guidelab
