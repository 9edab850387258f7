#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dvme/embedstore.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/model.hpp"
#include "dvme/numerics.hpp"
#include "dvme/rng.hpp"

namespace dvme {

struct TrainConfig {
  double initial_lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint32_t min_epochs = 30;
  std::uint32_t max_epochs = 50;
  std::uint32_t early_stop_patience = 10;
  std::uint32_t scheduler_patience = 5;
  double scheduler_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool oversample = false;
  MetricKind monitor = MetricKind::auc;
  KappaWeighting kappa_weighting = KappaWeighting::quadratic;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam on parallel tensor lists. Non-finite gradients abort
// before any parameter is touched.
template <typename T>
void adam_update(const std::vector<NamedRef<T>>& params,
                 const std::vector<NamedConstRef<T>>& grads, AdamState<T>& state, double lr,
                 const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor->same_shape(*grads[i].tensor)) {
      throw DimensionError("adam: gradient " + grads[i].name + " has shape " +
                           shape_string(grads[i].tensor->shape()) + ", parameter " +
                           params[i].name + " has " + shape_string(params[i].tensor->shape()));
    }
    const auto g = grads[i].tensor->values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NumericError("adam: non-finite gradient in " + grads[i].name + " at index " +
                           std::to_string(j) + " (step " + std::to_string(state.step + 1) + ")");
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape());
      state.v.emplace_back(p.tensor->shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam state does not match parameters");
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor->values();
    const auto g = grads[i].tensor->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double step = lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.adam_eps);
      theta[j] = static_cast<T>(theta[j] - step);
    }
  }
}

template <typename Params, typename T>
void adam_step(Params& params, const Params& grads, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  adam_update<T>(params.tensors(), grads.tensors(), state, lr, cfg);
  params.mark_updated();
}

// ---------------------------------------------------------------------------
// Plateau scheduling and early stopping (validation score is maximized)

class PlateauScheduler {
 public:
  PlateauScheduler(double factor, std::uint32_t patience);

  // Learning rate for the next epoch after observing `score`.
  double step(double current_lr, double score);

  bool reduced_last_step() const noexcept { return reduced_; }
  double best() const noexcept { return best_; }

 private:
  double factor_;
  std::uint32_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::uint32_t bad_epochs_ = 0;
  bool reduced_ = false;
};

class EarlyStopper {
 public:
  EarlyStopper(std::uint32_t patience, std::uint32_t min_epochs, std::uint32_t max_epochs);

  // Feed the score of 1-based `epoch`; true when training should stop after it.
  bool update(std::uint32_t epoch, double score);
  std::uint32_t epochs_since_best() const noexcept { return since_best_; }

 private:
  std::uint32_t patience_, min_epochs_, max_epochs_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::uint32_t since_best_ = 0;
};

enum class StopReason { max_epochs, early_stop };
const char* to_string(StopReason r);

struct EpochRecord {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double val_score = 0.0;
  double lr = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::uint32_t best_epoch = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  StopReason stop_reason = StopReason::max_epochs;

  // Tab-separated table: epoch, train_loss, val_score, lr (fixed column order).
  std::string to_table() const;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

// Replays the early-stop rule over a recorded score sequence; returns the
// 1-based epoch at which training stops.
std::uint32_t early_stop_epoch(std::span<const double> scores, const TrainConfig& cfg);

class NonFiniteLossError : public NumericError {
 public:
  NonFiniteLossError(const std::string& what, TrainHistory history)
      : NumericError(what), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

// ---------------------------------------------------------------------------
// Minibatching

// Index batches over positions [0, n). Without oversampling: a seeded
// permutation cut into batches. With oversampling: n draws with replacement,
// each position weighted by 1 / frequency of its class.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::span<const int> labels, bool oversample,
                                                   Rng& rng);

// ---------------------------------------------------------------------------
// Fit loop

// Dataset columns feeding the model, in the model's input order.
std::vector<std::size_t> resolve_sources(const EmbeddingDataset& data,
                                         const std::vector<std::string>& names);

template <typename T>
std::vector<BasicTensor<T>> gather_inputs(const EmbeddingDataset& data,
                                          std::span<const std::size_t> columns,
                                          std::span<const std::size_t> indices) {
  std::vector<BasicTensor<T>> inputs;
  inputs.reserve(columns.size());
  for (std::size_t col : columns) {
    if constexpr (std::is_same_v<T, float>) {
      inputs.push_back(data.gather(col, indices));
    } else {
      inputs.push_back(data.gather(col, indices).template cast<T>());
    }
  }
  return inputs;
}

// Eval-mode class probabilities ([N x C], softmax computed in double).
template <typename Model>
TensorD predict_proba(const Model& model, const typename Model::Params& params,
                      const EmbeddingDataset& data, std::span<const std::size_t> indices,
                      std::size_t batch_size = 256) {
  using T = typename Model::Scalar;
  const auto columns = resolve_sources(data, model.input_sources());
  TensorD probs({indices.size(), model.num_classes()});
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto inputs = gather_inputs<T>(data, columns, chunk);
    const auto f = model.forward_eval(params, inputs);
    TensorD logits = f.logits.template cast<double>();
    logits = nn::softmax_rows(logits);
    std::copy(logits.values().begin(), logits.values().end(),
              probs.data() + start * model.num_classes());
  }
  return probs;
}

template <typename Model>
double evaluate(const Model& model, const typename Model::Params& params,
                const EmbeddingDataset& data, std::span<const std::size_t> indices,
                const TrainConfig& cfg) {
  const TensorD probs = predict_proba(model, params, data, indices);
  const auto labels = data.gather_labels(indices);
  return score_predictions(probs, labels, cfg.monitor, cfg.kappa_weighting);
}

template <typename Model>
struct FitResult {
  typename Model::Params params;  // parameters of the best validation epoch
  TrainHistory history;
};

// Seed derivation streams used by fit.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kDropoutStream = 2;
inline constexpr std::uint64_t kBatchStream = 3;

template <typename Model>
FitResult<Model> fit(const Model& model, const EmbeddingDataset& data,
                     std::span<const std::size_t> train, std::span<const std::size_t> val,
                     const TrainConfig& cfg) {
  using T = typename Model::Scalar;
  cfg.validate();
  if (train.empty()) throw ConfigError("empty training set");
  if (val.empty()) throw ConfigError("empty validation set");
  {
    std::vector<std::size_t> a(train.begin(), train.end()), b(val.begin(), val.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) {
      throw ConfigError("train and validation sets overlap (sample " + std::to_string(both[0]) + ")");
    }
  }
  const auto columns = resolve_sources(data, model.input_sources());
  const auto train_labels = data.gather_labels(train);

  auto params = model.init(derive_seed(cfg.seed, kInitStream));
  AdamState<T> adam;
  PlateauScheduler scheduler(cfg.scheduler_factor, cfg.scheduler_patience);
  EarlyStopper stopper(cfg.early_stop_patience, cfg.min_epochs, cfg.max_epochs);
  FitResult<Model> result{params, {}};
  double lr = cfg.initial_lr;
  std::uint64_t global_step = 0;

  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng batch_rng(derive_seed(derive_seed(cfg.seed, kBatchStream), epoch));
    const auto batches =
        make_batches(train.size(), cfg.batch_size, train_labels, cfg.oversample, batch_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& positions : batches) {
      std::vector<std::size_t> idx(positions.size());
      std::vector<int> labels(positions.size());
      for (std::size_t i = 0; i < positions.size(); ++i) {
        idx[i] = train[positions[i]];
        labels[i] = train_labels[positions[i]];
      }
      const auto inputs = gather_inputs<T>(data, columns, idx);
      CounterStream dropout_stream(derive_seed(derive_seed(cfg.seed, kDropoutStream), global_step++));
      const auto fwd = model.forward(params, inputs, nn::Mode::train, dropout_stream);
      const auto ce = nn::cross_entropy(fwd.logits, labels);
      if (!std::isfinite(static_cast<double>(ce.loss))) {
        throw NonFiniteLossError("non-finite training loss at epoch " + std::to_string(epoch),
                                 result.history);
      }
      const auto grads = model.backward(params, fwd.cache, ce.dlogits);
      adam_step(params, grads, adam, lr, cfg);
      loss_sum += static_cast<double>(ce.loss) * static_cast<double>(positions.size());
      seen += positions.size();
    }
    const double score = evaluate(model, params, data, val, cfg);
    result.history.epochs.push_back({epoch, loss_sum / static_cast<double>(seen), score, lr});
    if (score > result.history.best_score) {
      result.history.best_score = score;
      result.history.best_epoch = epoch;
      result.params = params;
    }
    lr = scheduler.step(lr, score);
    if (stopper.update(epoch, score)) {
      result.history.stop_reason =
          epoch == cfg.max_epochs ? StopReason::max_epochs : StopReason::early_stop;
      break;
    }
  }
  return result;
}

}  // namespace dvme
