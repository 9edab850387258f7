#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"

namespace dvme {

const char* to_string(KappaWeighting w) { return w == KappaWeighting::none ? "none" : "quadratic"; }

KappaWeighting parse_kappa_weighting(const std::string& s) {
  if (s == "none") return KappaWeighting::none;
  if (s == "quadratic") return KappaWeighting::quadratic;
  throw ConfigError("unknown kappa weighting '" + s + "' (expected none|quadratic)");
}

const char* to_string(MetricKind m) { return m == MetricKind::auc ? "auc" : "kappa"; }

MetricKind parse_metric(const std::string& s) {
  if (s == "auc") return MetricKind::auc;
  if (s == "kappa") return MetricKind::kappa;
  throw ConfigError("unknown metric '" + s + "' (expected auc|kappa)");
}

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ParameterError("auc labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ParameterError("auc scores must be finite");
    positives += static_cast<std::uint64_t>(labels[i]);
  }
  const std::uint64_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("auc is undefined when only one class is present");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum with mid-ranks; stays integral so no rounding
  // happens before the final division.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end + 1 < order.size() && scores[order[end + 1]] == scores[order[start]]) ++end;
    const std::uint64_t twice_mid_rank = start + end + 2;
    for (std::size_t i = start; i <= end; ++i) {
      if (labels[order[i]] == 1) twice_rank_sum += twice_mid_rank;
    }
    start = end + 1;
  }
  const std::uint64_t twice_u = twice_rank_sum - positives * (positives + 1);
  const std::uint64_t twice_total = 2 * positives * negatives;
  // Evaluate whichever of U and its complement is smaller and derive the other
  // by subtraction, so auc(s, y) + auc(s, 1 - y) == 1 holds exactly.
  if (2 * twice_u == twice_total) return 0.5;
  if (2 * twice_u < twice_total) {
    return static_cast<double>(twice_u) / static_cast<double>(twice_total);
  }
  return 1.0 - static_cast<double>(twice_total - twice_u) / static_cast<double>(twice_total);
}

double auc_macro_ovr(const TensorD& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.rows() != labels.size()) {
    throw DimensionError("auc_macro_ovr: probability matrix does not match label count");
  }
  const std::size_t classes = probabilities.cols();
  if (classes < 2) throw UndefinedMetricError("auc needs at least two classes");
  std::vector<double> column(labels.size());
  std::vector<int> binary(labels.size());
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    bool present = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
        throw ParameterError("label " + std::to_string(labels[i]) + " outside [0, " +
                             std::to_string(classes) + ")");
      }
      column[i] = probabilities(i, c);
      binary[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
      present = present || binary[i] == 1;
    }
    if (!present) {
      throw UndefinedMetricError("class " + std::to_string(c) +
                                 " is absent; one-vs-rest auc is undefined");
    }
    total += auc_binary(column, binary);
  }
  return total / static_cast<double>(classes);
}

double cohen_kappa(std::span<const int> y_true, std::span<const int> y_pred,
                   std::size_t num_classes, KappaWeighting weighting) {
  if (y_true.size() != y_pred.size()) throw DimensionError("kappa: rating vectors differ in length");
  if (y_true.empty()) throw UndefinedMetricError("kappa of an empty rating set");
  if (num_classes == 0) throw ParameterError("kappa needs at least one class");
  const std::size_t c = num_classes;
  std::vector<std::uint64_t> observed(c * c, 0), rows(c, 0), cols(c, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int a = y_true[i], b = y_pred[i];
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= c || static_cast<std::size_t>(b) >= c) {
      throw ParameterError("kappa rating outside [0, " + std::to_string(c) + ")");
    }
    ++observed[static_cast<std::size_t>(a) * c + static_cast<std::size_t>(b)];
    ++rows[static_cast<std::size_t>(a)];
    ++cols[static_cast<std::size_t>(b)];
  }
  // Integer weights: the (C - 1)^2 normaliser of the quadratic form cancels in the ratio.
  auto weight = [&](std::size_t i, std::size_t j) -> std::uint64_t {
    const std::uint64_t d = i > j ? i - j : j - i;
    return weighting == KappaWeighting::none ? (d != 0 ? 1 : 0) : d * d;
  };
  const std::uint64_t n = y_true.size();
  std::uint64_t w_observed = 0, w_expected = 0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::uint64_t w = weight(i, j);
      w_observed += w * observed[i * c + j] * n;
      w_expected += w * rows[i] * cols[j];
    }
  }
  if (w_expected == 0) {
    throw UndefinedMetricError("kappa is undefined: expected disagreement is zero "
                               "(a single rating value on both sides)");
  }
  return 1.0 - static_cast<double>(w_observed) / static_cast<double>(w_expected);
}

double score_predictions(const TensorD& probabilities, std::span<const int> labels,
                         MetricKind metric, KappaWeighting weighting) {
  if (probabilities.rank() != 2 || probabilities.rows() != labels.size()) {
    throw DimensionError("prediction matrix does not match label count");
  }
  const std::size_t classes = probabilities.cols();
  if (metric == MetricKind::auc) {
    if (classes == 2) {
      std::vector<double> positive(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) positive[i] = probabilities(i, 1);
      return auc_binary(positive, labels);
    }
    return auc_macro_ovr(probabilities, labels);
  }
  std::vector<int> predicted(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probabilities.row(i);
    predicted[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return cohen_kappa(labels, predicted, classes, weighting);
}

double combine_leaderboard(const LeaderboardWeights& w) {
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) {
    throw ParameterError("leaderboard alpha must lie in [0, 1]");
  }
  if (!std::isfinite(w.s_private) || !std::isfinite(w.s_public)) {
    throw ParameterError("leaderboard scores must be finite");
  }
  const double combined = w.alpha * w.s_private + (1.0 - w.alpha) * w.s_public;
  // rounding can leave the convex combination an ulp outside its endpoints
  return std::clamp(combined, std::min(w.s_private, w.s_public),
                    std::max(w.s_private, w.s_public));
}

MetricReport aggregate(std::span<const double> scores, std::string metric) {
  if (scores.empty()) throw ConfigError("aggregate needs at least one fold score");
  MetricReport r;
  r.metric = std::move(metric);
  r.per_fold.assign(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  r.mean = sum / static_cast<double>(scores.size());
  double sq = 0.0;
  for (double s : scores) sq += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(sq / static_cast<double>(scores.size()));
  return r;
}

}  // namespace dvme
