#include <algorithm>
#include <map>
#include <numeric>

#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/rng.hpp"

namespace dvme {

const std::vector<DatasetPreset>& dataset_presets() {
  static const std::vector<DatasetPreset> presets = {
      {"patchcam", 500, 5000, 50000, 57486, MetricKind::auc, 0.51, true},
      {"aptos", 50, 500, 3662, 1928, MetricKind::kappa, 0.85, true},
      {"pneumonia", 50, 500, 5216, 624, MetricKind::auc, std::nullopt, true},
      // heavily imbalanced: classes are filled as far as possible and training oversamples
      {"nih", 20, 200, 2414, 1962, MetricKind::auc, std::nullopt, false},
  };
  return presets;
}

const DatasetPreset& find_preset(const std::string& name) {
  for (const auto& p : dataset_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown dataset preset '" + name + "' (expected patchcam|aptos|pneumonia|nih)");
}

SubtaskSpec subtask_from_preset(const DatasetPreset& preset, const std::string& subtask) {
  SubtaskSpec s;
  s.name = subtask;
  s.balanced = preset.balanced;
  if (subtask == "small") {
    s.sample_count = preset.small;
  } else if (subtask == "medium") {
    s.sample_count = preset.medium;
  } else if (subtask == "full") {
    s.sample_count = preset.full;
  } else {
    throw ConfigError("unknown subtask '" + subtask + "' (expected small|medium|full)");
  }
  return s;
}

namespace {

std::vector<std::size_t> assign_stratified(std::span<const int> labels, std::size_t num_classes,
                                           std::size_t k, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t cursor = 0;  // carries across classes so fold sizes stay within one
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t idx : members) fold_of[idx] = cursor++ % k;
  }
  return fold_of;
}

std::vector<std::size_t> assign_grouped(std::span<const std::int64_t> groups, std::size_t k,
                                        Rng& rng) {
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  std::vector<std::int64_t> ids;
  ids.reserve(members.size());
  for (const auto& [id, _] : members) ids.push_back(id);
  rng.shuffle(std::span<std::int64_t>(ids));
  std::vector<std::size_t> fold_size(k, 0);
  std::vector<std::size_t> fold_of(groups.size());
  for (std::int64_t id : ids) {
    const std::size_t f = static_cast<std::size_t>(
        std::min_element(fold_size.begin(), fold_size.end()) - fold_size.begin());
    for (std::size_t idx : members[id]) fold_of[idx] = f;
    fold_size[f] += members[id].size();
  }
  return fold_of;
}

// Per-class quotas for a training draw of `n` from a pool with `available` per class.
std::vector<std::size_t> class_quotas(const std::vector<std::size_t>& available,
                                      std::optional<std::size_t> n, bool balanced,
                                      std::size_t fold) {
  const std::size_t classes = available.size();
  const std::size_t pool = std::accumulate(available.begin(), available.end(), std::size_t{0});
  std::vector<std::size_t> quota(classes, 0);
  if (!n) {
    if (!balanced) return available;
    const std::size_t per = *std::min_element(available.begin(), available.end());
    if (per == 0) {
      const auto c = std::min_element(available.begin(), available.end()) - available.begin();
      throw CapacityError("fold " + std::to_string(fold) + ": class " + std::to_string(c) +
                          " has no training samples; a balanced draw is impossible");
    }
    std::fill(quota.begin(), quota.end(), per);
    return quota;
  }
  if (*n > pool) {
    throw CapacityError("fold " + std::to_string(fold) + ": subtask size " + std::to_string(*n) +
                        " exceeds the training pool of " + std::to_string(pool));
  }
  if (balanced) {
    for (std::size_t c = 0; c < classes; ++c) {
      quota[c] = *n / classes + (c < *n % classes ? 1 : 0);
      if (quota[c] > available[c]) {
        throw CapacityError("fold " + std::to_string(fold) + ": balanced draw of " +
                            std::to_string(*n) + " needs " + std::to_string(quota[c]) +
                            " samples of class " + std::to_string(c) + " but only " +
                            std::to_string(available[c]) + " are available");
      }
    }
    return quota;
  }
  // Fill one sample per class per round until the request is met (water filling).
  std::size_t remaining = *n;
  while (remaining > 0) {
    for (std::size_t c = 0; c < classes && remaining > 0; ++c) {
      if (quota[c] < available[c]) {
        ++quota[c];
        --remaining;
      }
    }
  }
  return quota;
}

}  // namespace

FoldPlan make_folds(std::span<const int> labels, std::span<const std::int64_t> group_ids,
                    std::size_t num_classes, const SubtaskSpec& subtask, std::uint64_t seed,
                    std::size_t k) {
  if (k < 2) throw ConfigError("need at least 2 folds");
  if (labels.size() < k) {
    throw CapacityError("pool of " + std::to_string(labels.size()) + " samples is smaller than " +
                        std::to_string(k) + " folds");
  }
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  const bool grouped = !group_ids.empty();
  if (grouped && group_ids.size() != labels.size()) {
    throw DimensionError("group id count does not match label count");
  }
  if (subtask.balanced && subtask.sample_count && *subtask.sample_count < num_classes) {
    throw CapacityError("balanced subtask of " + std::to_string(*subtask.sample_count) +
                        " samples cannot cover " + std::to_string(num_classes) + " classes");
  }

  Rng assign_rng(derive_seed(seed, 0));
  const auto fold_of = grouped ? assign_grouped(group_ids, k, assign_rng)
                               : assign_stratified(labels, num_classes, k, assign_rng);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.balanced = subtask.balanced;
  plan.grouped = grouped;
  plan.folds.resize(k);
  for (std::size_t f = 0; f < k; ++f) {
    Fold& fold = plan.folds[f];
    std::vector<std::vector<std::size_t>> pool(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (fold_of[i] == f) {
        fold.val.push_back(i);
      } else {
        pool[static_cast<std::size_t>(labels[i])].push_back(i);
      }
    }
    if (fold.val.empty()) {
      throw CapacityError("fold " + std::to_string(f) + " received no validation samples "
                          "(too few groups for " + std::to_string(k) + " folds)");
    }
    std::vector<std::size_t> available(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) available[c] = pool[c].size();
    const auto quota = class_quotas(available, subtask.sample_count, subtask.balanced, f);
    Rng draw_rng(derive_seed(seed, f + 1));
    for (std::size_t c = 0; c < num_classes; ++c) {
      draw_rng.shuffle(std::span<std::size_t>(pool[c]));
      fold.train.insert(fold.train.end(), pool[c].begin(), pool[c].begin() + quota[c]);
    }
    std::sort(fold.train.begin(), fold.train.end());
  }
  return plan;
}

}  // namespace dvme
