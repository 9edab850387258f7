#include "dvme/training.hpp"

#include <cstdio>

namespace dvme {

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("initial_lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
    throw ConfigError("scheduler_factor must lie in (0, 1)");
  }
  if (early_stop_patience < 1 || scheduler_patience < 1) throw ConfigError("patiences must be >= 1");
  if (min_epochs > max_epochs) throw ConfigError("min_epochs must not exceed max_epochs");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

PlateauScheduler::PlateauScheduler(double factor, std::uint32_t patience)
    : factor_(factor), patience_(patience) {
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("scheduler factor must lie in (0, 1)");
  if (patience < 1) throw ConfigError("scheduler patience must be >= 1");
}

double PlateauScheduler::step(double current_lr, double score) {
  if (!std::isfinite(score)) throw NumericError("scheduler received a non-finite score");
  reduced_ = false;
  if (score > best_) {
    best_ = score;
    bad_epochs_ = 0;
    return current_lr;
  }
  if (++bad_epochs_ >= patience_) {
    bad_epochs_ = 0;
    reduced_ = true;
    return current_lr * factor_;
  }
  return current_lr;
}

EarlyStopper::EarlyStopper(std::uint32_t patience, std::uint32_t min_epochs,
                           std::uint32_t max_epochs)
    : patience_(patience), min_epochs_(min_epochs), max_epochs_(max_epochs) {}

bool EarlyStopper::update(std::uint32_t epoch, double score) {
  if (score > best_) {
    best_ = score;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  if (epoch >= max_epochs_) return true;
  return since_best_ >= patience_ && epoch >= min_epochs_;
}

std::uint32_t early_stop_epoch(std::span<const double> scores, const TrainConfig& cfg) {
  EarlyStopper stopper(cfg.early_stop_patience, cfg.min_epochs, cfg.max_epochs);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto epoch = static_cast<std::uint32_t>(i + 1);
    if (stopper.update(epoch, scores[i])) return epoch;
  }
  return static_cast<std::uint32_t>(scores.size());
}

const char* to_string(StopReason r) {
  return r == StopReason::max_epochs ? "max_epochs" : "early_stop";
}

std::string TrainHistory::to_table() const {
  std::string out = "epoch\ttrain_loss\tval_score\tlr\n";
  char line[128];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof line, "%u\t%.9g\t%.9g\t%.9g\n", e.epoch, e.train_loss, e.val_score,
                  e.lr);
    out += line;
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::span<const int> labels, bool oversample,
                                                   Rng& rng) {
  if (n == 0) throw ConfigError("cannot batch an empty dataset");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  if (!oversample) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
  } else {
    if (labels.size() != n) throw DimensionError("oversampling needs one label per sample");
    int max_label = 0;
    for (int y : labels) {
      if (y < 0) throw ConfigError("negative label in oversampling");
      max_label = std::max(max_label, y);
    }
    std::vector<double> freq(static_cast<std::size_t>(max_label) + 1, 0.0);
    for (int y : labels) freq[static_cast<std::size_t>(y)] += 1.0;
    std::vector<double> cumulative(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += 1.0 / freq[static_cast<std::size_t>(labels[i])];
      cumulative[i] = total;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform() * total;
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      order[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), n - 1);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> resolve_sources(const EmbeddingDataset& data,
                                         const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  cols.reserve(names.size());
  for (const auto& n : names) cols.push_back(data.source_index(n));
  return cols;
}

}  // namespace dvme
