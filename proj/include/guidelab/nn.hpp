#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "guidelab/core.hpp"
#include "guidelab/rng.hpp"
#include "guidelab/schedule.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

enum class Activation { tanh, softplus };

inline std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "softplus";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw InvalidArgument("unknown activation '" + s + "'");
}

// What the input gradient differentiates: the target-class log-softmax, or
// the raw target logit.
enum class GradientObjective { log_softmax, raw_logit };

/// Feed-forward network: hidden layers use the activation, the output layer
/// is affine and produces class logits.
struct MlpModel {
  std::vector<int> layer_sizes;  // [d, h1, ..., D]
  Activation activation = Activation::tanh;
  std::vector<Mat> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Vec> biases;

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }

  static MlpModel zeros(std::vector<int> sizes,
                        Activation act = Activation::tanh) {
    require(sizes.size() >= 2, "MlpModel needs at least input and output");
    for (int s : sizes) require(s >= 1, "MlpModel: layer sizes must be >= 1");
    MlpModel m;
    m.layer_sizes = std::move(sizes);
    m.activation = act;
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
      m.weights.push_back(Mat::Zero(m.layer_sizes[l + 1], m.layer_sizes[l]));
      m.biases.push_back(Vec::Zero(m.layer_sizes[l + 1]));
    }
    return m;
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static MlpModel init(std::vector<int> sizes, Activation act,
                       std::uint64_t seed) {
    MlpModel m = zeros(std::move(sizes), act);
    Rng rng(derive_seed(seed, "mlp-init"));
    for (auto& w : m.weights) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          w(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
        }
      }
    }
    return m;
  }

  bool all_finite() const {
    for (const auto& w : weights) {
      if (!w.allFinite()) return false;
    }
    for (const auto& b : biases) {
      if (!b.allFinite()) return false;
    }
    return true;
  }

  void validate() const {
    require(layer_sizes.size() >= 2, "MlpModel: too few layers");
    require(weights.size() + 1 == layer_sizes.size() &&
                biases.size() == weights.size(),
            "MlpModel: parameter count does not match layer sizes");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require(weights[l].rows() == layer_sizes[l + 1] &&
                  weights[l].cols() == layer_sizes[l] &&
                  biases[l].size() == layer_sizes[l + 1],
              "MlpModel: parameter shape mismatch in layer " +
                  std::to_string(l));
    }
    require(all_finite(), "MlpModel: non-finite parameters");
  }
};

namespace detail {

template <typename Derived>
auto activate(const Eigen::ArrayBase<Derived>& z, Activation a) {
  using Plain = typename Derived::PlainObject;
  if (a == Activation::tanh) return Plain(z.tanh());
  // softplus(z) = max(z, 0) + log1p(exp(-|z|))
  return Plain(z.max(0.0) + (-z.abs()).exp().log1p());
}

template <typename Derived>
auto activate_derivative(const Eigen::ArrayBase<Derived>& z, Activation a) {
  using Plain = typename Derived::PlainObject;
  if (a == Activation::tanh) {
    Plain t = z.tanh();
    return Plain(1.0 - t * t);
  }
  return Plain(1.0 / (1.0 + (-z).exp()));
}

// Pre-activations of every layer for one input.
struct ForwardCache {
  std::vector<Vec> inputs;  // input to each layer
  std::vector<Vec> pre;     // pre-activation of each layer
};

inline Vec forward_cached(const MlpModel& m, const Vec& x, ForwardCache& c) {
  c.inputs.resize(m.num_layers());
  c.pre.resize(m.num_layers());
  Vec a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    c.inputs[l] = a;
    c.pre[l] = m.weights[l] * a + m.biases[l];
    if (l + 1 < m.num_layers()) {
      a = activate(c.pre[l].array(), m.activation).matrix();
    } else {
      a = c.pre[l];
    }
  }
  return a;
}

}  // namespace detail

/// Class logits for one input.
inline Vec forward(const MlpModel& m, const Vec& x) {
  require(x.size() == m.input_dim(), "forward: input dimension mismatch");
  Vec a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    Vec z = m.weights[l] * a + m.biases[l];
    a = (l + 1 < m.num_layers())
            ? Vec(detail::activate(z.array(), m.activation).matrix())
            : z;
  }
  return a;
}

inline Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

/// logits[y] - logsumexp(logits), max-subtracted.
inline double log_softmax_target(const Vec& logits, int y) {
  require(y >= 0 && y < logits.size(), "log_softmax_target: bad class");
  return logits[y] - log_sum_exp(logits);
}

/// Gradient of the chosen objective (target log-softmax or raw target logit)
/// with respect to the network input, by reverse-mode accumulation.
inline Vec input_gradient(
    const MlpModel& m, const Vec& x, int y,
    GradientObjective objective = GradientObjective::log_softmax) {
  require(x.size() == m.input_dim(), "input_gradient: input dimension mismatch");
  require(y >= 0 && y < m.num_classes(), "input_gradient: bad class");
  detail::ForwardCache cache;
  const Vec logits = detail::forward_cached(m, x, cache);
  Vec delta;
  if (objective == GradientObjective::log_softmax) {
    delta = -softmax(logits);
    delta[y] += 1.0;
  } else {
    delta = Vec::Zero(logits.size());
    delta[y] = 1.0;
  }
  for (std::size_t l = m.num_layers(); l-- > 0;) {
    Vec upstream = m.weights[l].transpose() * delta;
    if (l == 0) return upstream;
    delta = upstream.cwiseProduct(
        detail::activate_derivative(cache.pre[l - 1].array(), m.activation)
            .matrix());
  }
  return delta;  // unreachable
}

// --- training ---------------------------------------------------------------

enum class NoiseMode { clean, forward_noised };

struct OptimizerConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 128;
};

struct TrainConfig {
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::tanh;
  OptimizerConfig optimizer;
  int epochs = 50;
  NoiseMode noise = NoiseMode::clean;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_curve;  // mean cross-entropy per epoch
};

namespace detail {

// Standard ADAM with bias correction, over a flat parameter list.
class AdamOptimizer {
 public:
  AdamOptimizer(const MlpModel& m, OptimizerConfig cfg) : cfg_(cfg) {
    for (const auto& w : m.weights) {
      mw_.push_back(Mat::Zero(w.rows(), w.cols()));
      vw_.push_back(Mat::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : m.biases) {
      mb_.push_back(Vec::Zero(b.size()));
      vb_.push_back(Vec::Zero(b.size()));
    }
  }

  void step(MlpModel& m, const std::vector<Mat>& gw,
            const std::vector<Vec>& gb) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      update(m.weights[l], mw_[l], vw_[l], gw[l], c1, c2);
      update(m.biases[l], mb_[l], vb_[l], gb[l], c1, c2);
    }
  }

 private:
  template <typename P>
  void update(P& p, P& mom, P& var, const P& g, double c1, double c2) {
    mom = cfg_.beta1 * mom + (1.0 - cfg_.beta1) * g;
    var = cfg_.beta2 * var + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= cfg_.learning_rate * (mom.array() / c1) /
                 ((var.array() / c2).sqrt() + cfg_.epsilon);
  }

  OptimizerConfig cfg_;
  int t_ = 0;
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
};

// Mean cross-entropy of a batch (columns of x) and its parameter gradients.
inline double batch_loss_and_gradients(const MlpModel& m, const Mat& x,
                                       const std::vector<int>& y,
                                       std::vector<Mat>& gw,
                                       std::vector<Vec>& gb) {
  const Eigen::Index n = x.cols();
  std::vector<Mat> inputs(m.num_layers());
  std::vector<Mat> pre(m.num_layers());
  Mat a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    inputs[l] = a;
    pre[l] = (m.weights[l] * a).colwise() + m.biases[l];
    a = (l + 1 < m.num_layers())
            ? Mat(activate(pre[l].array(), m.activation).matrix())
            : pre[l];
  }
  // a holds logits, one column per example.
  double loss = 0.0;
  Mat delta(a.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vec logits = a.col(j);
    const double lse = log_sum_exp(logits);
    loss -= logits[y[j]] - lse;
    delta.col(j) = (logits.array() - lse).exp().matrix();
    delta(y[j], j) -= 1.0;
  }
  delta /= static_cast<double>(n);
  gw.resize(m.num_layers());
  gb.resize(m.num_layers());
  for (std::size_t l = m.num_layers(); l-- > 0;) {
    gw[l] = delta * inputs[l].transpose();
    gb[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (m.weights[l].transpose() * delta)
                  .cwiseProduct(
                      activate_derivative(pre[l - 1].array(), m.activation)
                          .matrix());
    }
  }
  return loss / static_cast<double>(n);
}

}  // namespace detail

/// Minibatch ADAM on cross-entropy. In forward_noised mode every example in
/// every batch is replaced by a forward-process sample at an independent
/// t ~ U{0..T} (t = 0 keeps the clean point). Shuffling and noising draw from
/// separate streams, so a zero-beta schedule reproduces clean training.
inline TrainResult train(const LabeledDataset& data, const TrainConfig& cfg,
                         const Schedule* schedule = nullptr) {
  require(data.size() > 0, "train: empty dataset");
  require(cfg.epochs >= 0, "train: negative epoch count");
  require(cfg.optimizer.batch_size >= 1, "train: batch size must be >= 1");
  require(cfg.noise == NoiseMode::clean || schedule != nullptr,
          "train: forward_noised mode needs a schedule");
  const int num_classes =
      1 + *std::max_element(data.labels.begin(), data.labels.end());
  std::vector<int> sizes{static_cast<int>(data.dim())};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(std::max(num_classes, 2));

  TrainResult result{MlpModel::init(sizes, cfg.activation, cfg.seed), {}};
  MlpModel& m = result.model;
  detail::AdamOptimizer opt(m, cfg.optimizer);
  Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle"));
  Rng noise_rng(derive_seed(cfg.seed, "train-noise"));

  const auto n = static_cast<std::size_t>(data.size());
  const auto d = data.dim();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Mat> gw;
  std::vector<Vec> gb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(cfg.optimizer.batch_size)) {
      const std::size_t stop =
          std::min(n, start + static_cast<std::size_t>(cfg.optimizer.batch_size));
      const auto bs = static_cast<Eigen::Index>(stop - start);
      Mat x(d, bs);
      std::vector<int> y(static_cast<std::size_t>(bs));
      for (Eigen::Index j = 0; j < bs; ++j) {
        const auto idx = static_cast<Eigen::Index>(order[start + j]);
        Vec p = data.points.row(idx).transpose();
        if (cfg.noise == NoiseMode::forward_noised && schedule != nullptr) {
          const int t = noise_rng.uniform_int(0, schedule->steps());
          const Vec eps = noise_rng.normal_vector(d);
          p = forward_sample(*schedule, p, t, eps);
        }
        x.col(j) = p;
        y[static_cast<std::size_t>(j)] = data.labels[order[start + j]];
      }
      const double loss = detail::batch_loss_and_gradients(m, x, y, gw, gb);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite loss in epoch " +
                                  std::to_string(epoch),
                              epoch);
      }
      opt.step(m, gw, gb);
      if (!m.all_finite()) {
        throw DivergenceError(
            "training diverged: non-finite parameters in epoch " +
                std::to_string(epoch),
            epoch);
      }
      epoch_loss += loss * static_cast<double>(bs);
      seen += static_cast<std::size_t>(bs);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(seen));
  }
  return result;
}

}  // namespace guidelab
