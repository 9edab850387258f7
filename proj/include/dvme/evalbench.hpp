#pragma once

// Evaluation protocol: subtask construction, k-fold plans, metrics, aggregation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvme/tensor.hpp"

namespace dvme {

// ---------------------------------------------------------------------------
// Metrics

enum class KappaWeighting { none, quadratic };
enum class MetricKind { auc, kappa };

const char* to_string(KappaWeighting w);
KappaWeighting parse_kappa_weighting(const std::string& s);
const char* to_string(MetricKind m);
MetricKind parse_metric(const std::string& s);

// Mann-Whitney AUC: fraction of (positive, negative) pairs where the positive
// scores higher, ties counting one half. Labels are 0/1 and both must occur.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

// Unweighted mean of one-vs-rest AUCs, class c scored by column c.
double auc_macro_ovr(const TensorD& probabilities, std::span<const int> labels);

// kappa = 1 - sum(w * O) / sum(w * E), E the outer product of the marginals.
// Weights are 0/1 disagreement or (i - j)^2 / (C - 1)^2.
double cohen_kappa(std::span<const int> y_true, std::span<const int> y_pred,
                   std::size_t num_classes, KappaWeighting weighting);

// Headline score of a prediction set: AUC (binary uses column 1, multi-class is
// macro one-vs-rest) or kappa on argmax predictions.
double score_predictions(const TensorD& probabilities, std::span<const int> labels,
                         MetricKind metric, KappaWeighting weighting);

struct LeaderboardWeights {
  double alpha = 0.5;
  double s_private = 0.0;
  double s_public = 0.0;
};

// alpha * s_private + (1 - alpha) * s_public.
double combine_leaderboard(const LeaderboardWeights& w);

struct MetricReport {
  std::string metric;
  std::vector<double> per_fold;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MetricReport aggregate(std::span<const double> per_fold_scores, std::string metric = "auc");

// ---------------------------------------------------------------------------
// Subtasks and fold plans

struct SubtaskSpec {
  std::string name = "full";
  // Training samples drawn per fold; absent means all the pool allows.
  std::optional<std::size_t> sample_count;
  // Equal per-class counts; when false classes are filled as evenly as availability permits.
  bool balanced = true;
};

struct DatasetPreset {
  std::string name;
  std::size_t small = 0, medium = 0, full = 0, test = 0;
  MetricKind metric = MetricKind::auc;
  std::optional<double> leaderboard_alpha;
  bool balanced = true;
};

const std::vector<DatasetPreset>& dataset_presets();
const DatasetPreset& find_preset(const std::string& name);
SubtaskSpec subtask_from_preset(const DatasetPreset& preset, const std::string& subtask);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  bool balanced = true;
  bool grouped = false;
  std::vector<Fold> folds;
};

// Partitions the pool into k validation folds (stratified by class, or by whole
// groups when group ids are given), then draws each fold's training subsample
// from the other k - 1 folds.
FoldPlan make_folds(std::span<const int> labels, std::span<const std::int64_t> group_ids,
                    std::size_t num_classes, const SubtaskSpec& subtask, std::uint64_t seed,
                    std::size_t k = 5);

// ---------------------------------------------------------------------------
// Report documents

struct RunReport {
  std::string dataset;
  std::string subtask;
  std::string variant;
  MetricReport metrics;
  std::optional<double> leaderboard_alpha;
  std::optional<double> leaderboard_score;
  std::string config_json;  // fully resolved run configuration
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

}  // namespace dvme
