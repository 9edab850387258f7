#pragma once

// k-fold evaluation of probes and fusion heads on one dataset.

#include <algorithm>
#include <future>
#include <span>
#include <string>
#include <vector>

#include "dvme/embedstore.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/model.hpp"
#include "dvme/training.hpp"

namespace dvme {

struct CvOptions {
  SubtaskSpec subtask;
  TrainConfig train;
  std::size_t k = 5;
  std::size_t jobs = 1;  // folds trained concurrently; results do not depend on it
};

template <typename Model>
struct CvResult {
  FoldPlan plan;
  MetricReport metrics;
  std::vector<FitResult<Model>> folds;
  std::size_t best_fold = 0;
};

FoldPlan plan_for(const EmbeddingDataset& data, const CvOptions& options);

template <typename Model>
CvResult<Model> run_cv(const Model& model, const EmbeddingDataset& data, const CvOptions& options) {
  options.train.validate();
  CvResult<Model> result;
  result.plan = plan_for(data, options);
  const std::size_t k = result.plan.folds.size();
  auto run_fold = [&](std::size_t f) {
    TrainConfig cfg = options.train;
    cfg.seed = derive_seed(options.train.seed, f + 1);
    const Fold& fold = result.plan.folds[f];
    return fit(model, data, fold.train, fold.val, cfg);
  };

  std::vector<std::optional<FitResult<Model>>> slots(k);
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  for (std::size_t start = 0; start < k; start += jobs) {
    const std::size_t end = std::min(k, start + jobs);
    if (end - start == 1) {
      slots[start] = run_fold(start);
      continue;
    }
    std::vector<std::future<FitResult<Model>>> pending;
    for (std::size_t f = start; f < end; ++f) {
      pending.push_back(std::async(std::launch::async, run_fold, f));
    }
    for (std::size_t f = start; f < end; ++f) slots[f] = pending[f - start].get();
  }

  std::vector<double> scores;
  for (auto& s : slots) {
    scores.push_back(s->history.best_score);
    result.folds.push_back(std::move(*s));
  }
  result.metrics = aggregate(scores, to_string(options.train.monitor));
  result.best_fold = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                              scores.begin());
  return result;
}

// Linear probe on each named source (all sources when `names` is empty).
std::vector<CvResult<ProbeModel<float>>> run_probe_cv(const EmbeddingDataset& data,
                                                      const std::vector<std::string>& names,
                                                      const CvOptions& options);

CvResult<DvmeModel<float>> run_dvme_cv(const EmbeddingDataset& data, DvmeConfig config,
                                       const CvOptions& options);

// Fusion config whose sources and class count are taken from the dataset.
DvmeConfig config_for(const EmbeddingDataset& data, const DvmeConfig& base = {});

}  // namespace dvme
