#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilm/errors.hpp"
#include "nilm/layers.hpp"
#include "nilm/rng.hpp"
#include "nilm/sampling.hpp"
#include "nilm/tensor.hpp"

// Losses, optimizers and the minibatch training loop.

namespace nilm {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// losses (fused forward+backward nodes; targets are plain value tensors)

namespace detail {

template <typename S>
void check_loss_shapes(const Tensor<S>& pred, const Tensor<S>& target,
                       const char* who) {
  if (!pred.valid() || !target.valid() || pred.shape() != target.shape()) {
    throw ShapeError(std::string(who) + ": prediction " +
                     (pred.valid() ? shape_str(pred.shape()) : "null") +
                     " and target " +
                     (target.valid() ? shape_str(target.shape()) : "null") +
                     " must have equal shapes");
  }
  if (pred.size() == 0) {
    throw ShapeError(std::string(who) + ": empty tensors");
  }
}

}  // namespace detail

// Numerical guard for the crossentropy logs.
constexpr double kProbabilityClamp = 1e-7;

// Pointwise binary crossentropy averaged over all elements.  Targets may be
// any values in [0, 1] (they are normalized power, not hard labels);
// predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::check_loss_shapes(pred, target, "cross_entropy");
  const std::size_t n = pred.size();
  const S lo = static_cast<S>(kProbabilityClamp);
  const S hi = S(1) - lo;
  const S* pp = pred.data();
  const S* pt = target.data();
  double acc = 0;  // accumulate in double; the cost is negligible
  for (std::size_t i = 0; i < n; ++i) {
    const S t = pt[i];
    if (!(t >= S(0)) || t > S(1)) {
      throw DomainError("cross_entropy: target element " + std::to_string(i) +
                        " = " + std::to_string(static_cast<double>(t)) +
                        " lies outside [0, 1]");
    }
    const S p = std::clamp(pp[i], lo, hi);
    acc -= static_cast<double>(t) * std::log(static_cast<double>(p)) +
           (1.0 - static_cast<double>(t)) *
               std::log(1.0 - static_cast<double>(p));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / n));
  detail::record<S>(out, {pred, target}, [lo, hi](TensorImpl<S>& self) {
    const Tensor<S>& pred = self.parents[0];
    const Tensor<S>& target = self.parents[1];
    if (!pred.requires_grad()) return;
    const std::size_t n = pred.size();
    S* gp = pred.impl()->ensure_grad().data();
    const S* pp = pred.data();
    const S* pt = target.data();
    const S g = self.grad[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const S raw = pp[i];
      if (raw <= lo || raw >= hi) continue;  // clamped: zero slope
      gp[i] += g * (raw - pt[i]) / (raw * (S(1) - raw));
    }
  });
  return out;
}

// Mean squared error over all elements.
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::check_loss_shapes(pred, target, "mse");
  const std::size_t n = pred.size();
  const S* pp = pred.data();
  const S* pt = target.data();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pp[i]) - static_cast<double>(pt[i]);
    acc += d * d;
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / n));
  detail::record<S>(out, {pred, target}, [](TensorImpl<S>& self) {
    const Tensor<S>& pred = self.parents[0];
    const Tensor<S>& target = self.parents[1];
    if (!pred.requires_grad()) return;
    const std::size_t n = pred.size();
    S* gp = pred.impl()->ensure_grad().data();
    const S* pp = pred.data();
    const S* pt = target.data();
    const S g = self.grad[0] * S(2) / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pp[i] - pt[i]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// optimizers

// Adam with bias-corrected moment estimates.
template <typename S>
class AdamOptimizer {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  AdamOptimizer(std::vector<Tensor<S>> params, Options opt = {})
      : params_(std::move(params)), opt_(opt) {
    if (!(opt_.lr >= 0)) throw ConfigError("adam: lr must be >= 0");
    if (opt_.beta1 < 0 || opt_.beta1 >= 1 || opt_.beta2 < 0 ||
        opt_.beta2 >= 1) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (!(opt_.epsilon > 0)) throw ConfigError("adam: epsilon must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), S(0));
      v_.emplace_back(p.size(), S(0));
    }
  }

  long step_count() const { return step_; }

  // One update from the gradients currently stored on the parameters.
  void step() {
    ++step_;
    const S b1 = static_cast<S>(opt_.beta1);
    const S b2 = static_cast<S>(opt_.beta2);
    const S lr = static_cast<S>(opt_.lr);
    const S eps = static_cast<S>(opt_.epsilon);
    const S bc1 =
        S(1) - static_cast<S>(std::pow(opt_.beta1, static_cast<double>(step_)));
    const S bc2 =
        S(1) - static_cast<S>(std::pow(opt_.beta2, static_cast<double>(step_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i];
      const std::vector<S>& g = p.grad();
      if (g.size() != p.size()) {
        throw ShapeError("adam: gradient extent mismatch on parameter " +
                         std::to_string(i));
      }
      S* pm = m_[i].data();
      S* pv = v_[i].data();
      S* pw = p.data();
      const S* pg = g.data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        pm[k] = b1 * pm[k] + (S(1) - b1) * pg[k];
        pv[k] = b2 * pv[k] + (S(1) - b2) * pg[k] * pg[k];
        const S mhat = pm[k] / bc1;
        const S vhat = pv[k] / bc2;
        pw[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<Tensor<S>> params_;
  Options opt_;
  std::vector<std::vector<S>> m_, v_;
  long step_ = 0;
};

// Momentum SGD:  v <- mu * v - lr * g;  theta <- theta + v.
// With mu = 0 this is plain gradient descent.
template <typename S>
class MomentumSgdOptimizer {
 public:
  struct Options {
    double lr = 1e-2;
    double momentum = 0.9;
  };

  MomentumSgdOptimizer(std::vector<Tensor<S>> params, Options opt = {})
      : params_(std::move(params)), opt_(opt) {
    if (!(opt_.lr >= 0)) throw ConfigError("sgd: lr must be >= 0");
    if (opt_.momentum < 0 || opt_.momentum >= 1) {
      throw ConfigError("sgd: momentum must lie in [0, 1)");
    }
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.size(), S(0));
  }

  void step() {
    const S mu = static_cast<S>(opt_.momentum);
    const S lr = static_cast<S>(opt_.lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i];
      const std::vector<S>& g = p.grad();
      if (g.size() != p.size()) {
        throw ShapeError("sgd: gradient extent mismatch on parameter " +
                         std::to_string(i));
      }
      S* pv = velocity_[i].data();
      S* pw = p.data();
      const S* pg = g.data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        pv[k] = mu * pv[k] - lr * pg[k];
        pw[k] += pv[k];
      }
    }
  }

 private:
  std::vector<Tensor<S>> params_;
  Options opt_;
  std::vector<std::vector<S>> velocity_;
};

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  int batch_size = 32;
  int epochs = 100;
  std::string loss = "cross_entropy";  // or "mse"
  std::string optimizer = "adam";      // or "sgd"
  double lr = 0;                       // 0 = optimizer default
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  int early_stop_patience = 10;  // epochs without val improvement; 0 = off
  int checkpoint_every_epochs = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (loss != "cross_entropy" && loss != "mse") {
      throw ConfigError("train: loss must be cross_entropy or mse, got " +
                        loss);
    }
    if (optimizer != "adam" && optimizer != "sgd") {
      throw ConfigError("train: optimizer must be adam or sgd, got " +
                        optimizer);
    }
    if (lr < 0) throw ConfigError("train: lr must be >= 0");
    if (val_fraction < 0 || val_fraction >= 1) {
      throw ConfigError("train: val_fraction must lie in [0, 1)");
    }
    if (early_stop_patience < 0) {
      throw ConfigError("train: early_stop_patience must be >= 0");
    }
    if (checkpoint_every_epochs < 0) {
      throw ConfigError("train: checkpoint_every_epochs must be >= 0");
    }
  }

  json to_json() const {
    return json{{"batch_size", batch_size},
                {"epochs", epochs},
                {"loss", loss},
                {"optimizer", optimizer},
                {"lr", lr},
                {"momentum", momentum},
                {"beta1", beta1},
                {"beta2", beta2},
                {"epsilon", epsilon},
                {"seed", seed},
                {"val_fraction", val_fraction},
                {"early_stop_patience", early_stop_patience},
                {"checkpoint_every_epochs", checkpoint_every_epochs}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    try {
      c.batch_size = j.value("batch_size", c.batch_size);
      c.epochs = j.value("epochs", c.epochs);
      c.loss = j.value("loss", c.loss);
      c.optimizer = j.value("optimizer", c.optimizer);
      c.lr = j.value("lr", c.lr);
      c.momentum = j.value("momentum", c.momentum);
      c.beta1 = j.value("beta1", c.beta1);
      c.beta2 = j.value("beta2", c.beta2);
      c.epsilon = j.value("epsilon", c.epsilon);
      c.seed = j.value("seed", c.seed);
      c.val_fraction = j.value("val_fraction", c.val_fraction);
      c.early_stop_patience =
          j.value("early_stop_patience", c.early_stop_patience);
      c.checkpoint_every_epochs =
          j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("train: bad config json: ") + e.what());
    }
    c.validate();
    return c;
  }

  double effective_lr() const {
    if (lr > 0) return lr;
    return optimizer == "adam" ? 1e-3 : 1e-2;
  }
};

// One loss-curve row; val_loss is present on the last batch of each epoch
// when a validation split exists.
struct LossPoint {
  long step = 0;
  int epoch = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  int epochs_run = 0;
  bool early_stopped = false;
  std::optional<double> best_val_loss;
};

inline void write_loss_csv(const std::string& path,
                           const std::vector<LossPoint>& curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os << "step,epoch,train_loss,val_loss\n";
  os << std::setprecision(10);
  for (const auto& p : curve) {
    os << p.step << ',' << p.epoch << ',' << p.train_loss << ',';
    if (p.val_loss) os << *p.val_loss;
    os << '\n';
  }
  if (!os) throw IoError(path + ": write failed");
}

namespace detail {

// Assembles [batch, 1, window] input and target tensors from sample pairs.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> make_batch(
    const std::vector<SamplePair>& pairs,
    const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
    std::size_t window) {
  const std::size_t bsz = end - begin;
  std::vector<S> x(bsz * window), y(bsz * window);
  for (std::size_t b = 0; b < bsz; ++b) {
    const SamplePair& p = pairs[order[begin + b]];
    for (std::size_t t = 0; t < window; ++t) {
      x[b * window + t] = static_cast<S>(p.aggregate[t]);
      y[b * window + t] = static_cast<S>(p.appliance[t]);
    }
  }
  return {Tensor<S>::from({bsz, 1, window}, std::move(x)),
          Tensor<S>::from({bsz, 1, window}, std::move(y))};
}

template <typename S, typename Model>
std::string parameter_norm_report(const Model& model) {
  std::ostringstream os;
  os << std::setprecision(4);
  double total = 0;
  std::size_t non_finite = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    for (const S v : t.values()) {
      if (!std::isfinite(static_cast<double>(v))) {
        ++non_finite;
      } else {
        total += static_cast<double>(v) * static_cast<double>(v);
      }
    }
  }
  os << "parameter l2 norm " << std::sqrt(total) << ", " << non_finite
     << " non-finite values";
  return os.str();
}

}  // namespace detail

// Minibatch training.  All pairs must share one window length.  Gradients are
// zeroed before each backward pass; a non-finite loss aborts with a
// NumericError naming the batch.  When a validation split exists, the model
// is restored to its best-validation parameters before returning.
//
// on_epoch(epoch_index, val_loss_or_nan) fires after every epoch; the CLI
// hangs checkpoint writing onto it.
template <typename S, typename Model>
TrainResult train_model(
    Model& model, const std::vector<SamplePair>& pairs, const TrainConfig& cfg,
    const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  if (pairs.empty()) {
    throw DataError("train: no training pairs (run prepare first?)");
  }
  const std::size_t window = pairs[0].window_length();
  for (const auto& p : pairs) {
    if (p.window_length() != window || p.appliance.size() != window) {
      throw ShapeError("train: pairs disagree on window length");
    }
  }

  // deterministic validation split
  std::vector<std::size_t> index(pairs.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  Rng split_rng(derive_seed(cfg.seed, "train:val-split"));
  shuffle(index, split_rng);
  const auto val_count = static_cast<std::size_t>(
      cfg.val_fraction * static_cast<double>(pairs.size()));
  std::vector<std::size_t> val_idx(index.begin(), index.begin() + val_count);
  std::vector<std::size_t> train_idx(index.begin() + val_count, index.end());
  if (train_idx.empty()) {
    throw DataError("train: validation split leaves no training pairs");
  }

  const auto params = model.parameters();
  std::optional<AdamOptimizer<S>> adam;
  std::optional<MomentumSgdOptimizer<S>> sgd;
  if (cfg.optimizer == "adam") {
    adam.emplace(params, typename AdamOptimizer<S>::Options{
                             cfg.effective_lr(), cfg.beta1, cfg.beta2,
                             cfg.epsilon});
  } else {
    sgd.emplace(params, typename MomentumSgdOptimizer<S>::Options{
                            cfg.effective_lr(), cfg.momentum});
  }

  const auto run_loss = [&cfg](const Tensor<S>& pred, const Tensor<S>& target) {
    return cfg.loss == "mse" ? mse_loss(pred, target)
                             : cross_entropy_loss(pred, target);
  };

  const auto validation_loss = [&]() -> double {
    NoGradGuard guard;
    ForwardCtx ctx{Phase::eval, nullptr};
    double acc = 0;
    std::size_t count = 0;
    const auto bsz = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < val_idx.size(); b += bsz) {
      const std::size_t e = std::min(val_idx.size(), b + bsz);
      auto [x, y] = detail::make_batch<S>(pairs, val_idx, b, e, window);
      const double l =
          static_cast<double>(run_loss(model.forward(x, ctx), y).item());
      acc += l * static_cast<double>(e - b);
      count += e - b;
    }
    return acc / static_cast<double>(count);
  };

  TrainResult result;
  std::vector<std::vector<S>> best_values;
  int since_best = 0;
  long step = 0;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, "train:shuffle",
                              static_cast<std::uint64_t>(epoch)));
    shuffle(train_idx, order_rng);
    const std::size_t batches = (train_idx.size() + bsz - 1) / bsz;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * bsz;
      const std::size_t hi = std::min(train_idx.size(), lo + bsz);
      auto [x, y] = detail::make_batch<S>(pairs, train_idx, lo, hi, window);
      Rng drop_rng(derive_seed(cfg.seed, "train:dropout",
                               static_cast<std::uint64_t>(step)));
      ForwardCtx ctx{Phase::train, &drop_rng};
      const Tensor<S> loss = run_loss(model.forward(x, ctx), y);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(bi) + " (step " +
            std::to_string(step) + "); " +
            detail::parameter_norm_report<S>(model));
      }
      model.zero_grad();
      backward(loss);
      if (adam) {
        adam->step();
      } else {
        sgd->step();
      }
      ++step;
      result.curve.push_back({step, epoch, loss_value, std::nullopt});
    }
    result.epochs_run = epoch + 1;

    double val = std::numeric_limits<double>::quiet_NaN();
    if (!val_idx.empty()) {
      val = validation_loss();
      if (!result.curve.empty()) result.curve.back().val_loss = val;
      if (!result.best_val_loss || val < *result.best_val_loss) {
        result.best_val_loss = val;
        since_best = 0;
        best_values.clear();
        for (const auto& p : params) best_values.push_back(p.values());
      } else {
        ++since_best;
      }
    }
    if (on_epoch) on_epoch(epoch, val);
    if (!val_idx.empty() && cfg.early_stop_patience > 0 &&
        since_best >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }

  // hand back the best-validation parameters when a split existed
  if (!best_values.empty()) {
    auto mutable_params = model.parameters();
    for (std::size_t i = 0; i < mutable_params.size(); ++i) {
      mutable_params[i].values() = best_values[i];
    }
  }
  return result;
}

}  // namespace nilm
