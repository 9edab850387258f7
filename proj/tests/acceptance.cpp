// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/gradsuite.hpp"
#include "dvme/model.hpp"
#include "dvme/protocol.hpp"
#include "dvme/synth.hpp"
#include "dvme/training.hpp"
#include "oracles.hpp"

using namespace dvme;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string one_decimal(double v, double unit) {
  return fmt("%.1f", v / unit);
}

// ---------------------------------------------------------------------------

Outcome parameter_counts() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto p2048 = count_probe_params(2048, 5), p1536 = count_probe_params(1536, 5);
  o.require(p2048 == 10245, "probe(2048,5) = " + std::to_string(p2048));
  o.require(p1536 == 7685, "probe(1536,5) = " + std::to_string(p1536));
  o.require(one_decimal(p2048, 1e3) == "10.2" && one_decimal(p1536, 1e3) == "7.7",
            "probe counts do not round to 10.2 K / 7.7 K");

  DvmeConfig c;
  c.num_classes = 5;
  const auto n = count_params(c);
  o.require(n == 3677709, "dvme count " + std::to_string(n) + " != 3677709");
  o.require(n >= 3550000 && n <= 3700000, "dvme count outside [3.55 M, 3.70 M]");

  const auto params = DvmeModel<float>(c).init(0);
  auto updated = params;
  auto grads = params.zeros_like();
  for (auto& r : grads.tensors()) r.tensor->fill(1.0f);
  AdamState<float> state;
  adam_step(updated, grads, state, 1e-3, TrainConfig{});
  std::uint64_t touched = 0;
  const auto before = params.tensors();
  const auto after = updated.tensors();
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i].tensor->size(); ++j)
      touched += (*before[i].tensor)[j] != (*after[i].tensor)[j];
  o.require(touched == n, "adam touched " + std::to_string(touched) + " scalars");

  const double t = seconds_since(t0);
  o.require(t < 1.0, fmt("took %.2f s", t));
  if (o.pass) {
    o.detail = "probe 10245 / 7685, dvme " + std::to_string(n) + " = adam-updated scalars" +
               fmt(" (%.2f s)", t);
  }
  return o;
}

Outcome leaderboard() {
  Outcome o;
  Rng rng(51);
  double worst = 0.0;
  for (double alpha : {0.51, 0.85}) {
    for (int i = 0; i < 100; ++i) {
      const double priv = rng.uniform(), pub = rng.uniform();
      const double expected = alpha * priv + (1.0 - alpha) * pub;
      worst = std::max(worst, std::abs(combine_leaderboard({alpha, priv, pub}) - expected));
    }
  }
  o.require(worst == 0.0, fmt("max error %.3g", worst));
  if (o.pass) o.detail = "200 pairs at alpha 0.51 / 0.85, max error 0";
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_grad_suite({seed, {}});
    if (r.max_rel_error() > worst) {
      worst = r.max_rel_error();
      where = r.worst();
    }
    o.require(r.passed(1e-4), "seed " + std::to_string(seed) + " worst " + r.worst());
  }
  const double t = seconds_since(t0);
  o.require(t < 60.0, fmt("took %.1f s", t));
  if (o.pass) o.detail = fmt("5 seeds, max rel. error %.2e (%.2f s)", worst, t) + " at " + where;
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(1000);
  double worst_auc = 0.0, worst_kappa = 0.0;
  int auc_done = 0;
  while (auc_done < 1000) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(20)) / 7.0;
      y[i] = static_cast<int>(rng.below(2));
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    worst_auc = std::max(worst_auc, std::abs(auc_binary(s, y) - oracle::auc_pairs(s, y)));
    ++auc_done;
  }
  int kappa_done = 0;
  while (kappa_done < 1000) {
    const std::size_t n = 1 + rng.below(50), c = 2 + rng.below(5);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(c));
      b[i] = static_cast<int>(rng.below(c));
    }
    double got_none, got_quad;
    try {
      got_none = cohen_kappa(a, b, c, KappaWeighting::none);
      got_quad = cohen_kappa(a, b, c, KappaWeighting::quadratic);
    } catch (const UndefinedMetricError&) {
      continue;
    }
    worst_kappa = std::max(worst_kappa, std::abs(got_none - oracle::kappa(a, b, c, false)));
    worst_kappa = std::max(worst_kappa, std::abs(got_quad - oracle::kappa(a, b, c, true)));
    ++kappa_done;
  }
  o.require(worst_auc <= 1e-12, fmt("auc error %.3g", worst_auc));
  o.require(worst_kappa <= 1e-12, fmt("kappa error %.3g", worst_kappa));
  if (o.pass) {
    o.detail = fmt("1000 auc / 1000 kappa instances, max error %.2e / %.2e", worst_auc, worst_kappa);
  }
  return o;
}

Outcome protocol_properties() {
  Outcome o;
  Rng rng(200);
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t classes = 2 + rng.below(4);
    const std::size_t n = 10 * classes + rng.below(150);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i < 10 * classes ? i % classes : rng.below(classes));
    }
    std::vector<std::int64_t> g;
    if (seed % 2) {
      for (std::size_t i = 0; i < n; ++i) g.push_back(static_cast<std::int64_t>(rng.below(n / 3)));
    }
    const SubtaskSpec subtask = seed % 3 == 0 ? SubtaskSpec{} : SubtaskSpec{"small", classes * 2, true};
    const auto plan = make_folds(y, g, classes, subtask, seed);
    const auto v = oracle::plan_violations(plan, y, g, classes, true);
    if (!v.empty()) {
      if (violations == 0) o.require(false, "seed " + std::to_string(seed) + ": " + v.front());
      ++violations;
    }
  }
  std::vector<int> labels(1000, 0);
  for (std::size_t i = 0; i < 100; ++i) labels[i * 10] = 1;
  Rng draw(7);
  std::size_t minority = 0, total = 0;
  for (int round = 0; round < 100; ++round) {
    for (const auto& batch : make_batches(labels.size(), 1000, labels, true, draw)) {
      for (std::size_t i : batch) minority += labels[i];
      total += batch.size();
    }
  }
  const double share = static_cast<double>(minority) / static_cast<double>(total);
  o.require(total == 100000, "drew " + std::to_string(total) + " samples");
  o.require(std::abs(share - 0.5) <= 0.02, fmt("minority share %.4f", share));
  if (o.pass) {
    o.detail = fmt("200 seeded plans clean, minority share %.4f over %.0f draws", share,
                   static_cast<double>(total));
  }
  return o;
}

std::vector<double> replay_lr(const std::vector<double>& scores) {
  PlateauScheduler s(0.1, 5);
  std::vector<double> lrs;
  double lr = 1e-3;
  for (double v : scores) {
    lr = s.step(lr, v);
    lrs.push_back(lr);
  }
  return lrs;
}

std::uint32_t stop_epoch(const std::vector<double>& scores) {
  EarlyStopper stop(10, 30, 50);
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (stop.update(static_cast<std::uint32_t>(e + 1), scores[e])) return static_cast<std::uint32_t>(e + 1);
  }
  return 0;
}

Outcome state_machines() {
  Outcome o;
  // plateau: one improvement then flat, fires at the 5th stall and again 5 later
  std::vector<double> flat(12, 0.69);
  flat[0] = 0.7;
  const auto lrs = replay_lr(flat);
  std::vector<double> expect_lr(12, 1e-3);
  for (std::size_t i = 5; i < 10; ++i) expect_lr[i] = 1e-3 * 0.1;
  for (std::size_t i = 10; i < 12; ++i) expect_lr[i] = 1e-3 * 0.1 * 0.1;
  o.require(lrs == expect_lr, "plateau schedule differs");
  // an improvement inside the window resets the count
  std::vector<double> reset{0.5, 0.4, 0.4, 0.4, 0.4, 0.6, 0.6, 0.3, 0.3, 0.3};
  const auto lr2 = replay_lr(reset);
  o.require(std::all_of(lr2.begin(), lr2.end(), [](double v) { return v == 1e-3; }),
            "reset sequence reduced lr");

  std::vector<double> rising(60);
  for (std::size_t i = 0; i < 60; ++i) rising[i] = static_cast<double>(i);
  o.require(stop_epoch(rising) == 50, "monotone run stopped at " + std::to_string(stop_epoch(rising)));
  o.require(stop_epoch(std::vector<double>(60, 0.3)) == 30, "flat run not clamped to 30");
  std::vector<double> late(60, 0.1);
  for (std::size_t i = 0; i < 25; ++i) late[i] = static_cast<double>(i);
  o.require(stop_epoch(late) == 35, "stall after 25 stopped at " + std::to_string(stop_epoch(late)));
  late[31] = 99.0;
  o.require(stop_epoch(late) == 42, "new best at 32 stopped at " + std::to_string(stop_epoch(late)));
  if (o.pass) o.detail = "lr x0.1 after 5 stalls; stops at 50 / 30 / 35 / 42";
  return o;
}

Outcome fusion_benefit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double probe_sum = 0.0, dvme_sum = 0.0, plain_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;  // complementary, 4 classes x 150, sigma 0.5
    sc.seed = seed;
    const auto data = synth_generate(sc);
    CvOptions opt;
    opt.train.seed = seed;
    double best_probe = 0.0;
    for (const auto& r : run_probe_cv(data, {}, opt)) best_probe = std::max(best_probe, r.metrics.mean);
    DvmeConfig base;
    base.proj_dim = 32;
    const double with = run_dvme_cv(data, config_for(data, base), opt).metrics.mean;
    base.use_attention = false;
    const double without = run_dvme_cv(data, config_for(data, base), opt).metrics.mean;
    probe_sum += best_probe;
    dvme_sum += with;
    plain_sum += without;
  }
  const double probe = probe_sum / 5, dvme = dvme_sum / 5, plain = plain_sum / 5;
  const double t = seconds_since(t0);
  o.require(dvme - probe >= 0.05, fmt("dvme %.4f vs best probe %.4f", dvme, probe));
  o.require(plain > probe, fmt("no-attention %.4f vs best probe %.4f", plain, probe));
  o.require(t < 300.0, fmt("took %.0f s", t));
  if (o.pass) {
    o.detail = fmt("best probe %.4f, dvme %.4f, no-attention %.4f", probe, dvme, plain) +
               fmt(" (%.0f s)", t);
  }
  return o;
}

Outcome attention_summary_properties() {
  Outcome o;
  DvmeConfig c;
  c.sources = {{"simclr", 6}, {"swav", 5}, {"dino", 4}};
  c.proj_dim = 4;
  c.num_classes = 3;
  const DvmeModel<double> m(c);
  SynthConfig sc;
  sc.num_classes = 3;
  sc.sources = c.sources;
  sc.samples_per_class = 4;
  const auto data = synth_generate(sc);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  double worst_row = 0.0, worst_brute = 0.0, worst_uniform = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = m.init(seed);
    Rng rng(seed);
    for (auto& r : p.tensors())
      for (double& v : r.tensor->values()) v += 0.5 * rng.normal();
    const auto s = m.attention_summary(p, data, idx, 5);
    for (std::size_t r = 0; r < 3; ++r) {
      worst_row = std::max(worst_row, std::abs(s.matrix(r, 0) + s.matrix(r, 1) + s.matrix(r, 2) - 1.0));
    }
    const auto x = gather_inputs<double>(data, resolve_sources(data, m.input_sources()), idx);
    TensorD expected({3, 3});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto b = oracle::block_summary(m.attention_matrix(p, x, i), 3, c.proj_dim);
      for (std::size_t k = 0; k < 9; ++k) expected[k] += b[k] / static_cast<double>(idx.size());
    }
    for (std::size_t k = 0; k < 9; ++k) worst_brute = std::max(worst_brute, std::abs(s.matrix[k] - expected[k]));

    auto zero = m.init(seed);
    zero.attention->qkv_weight.fill(0.0);
    zero.attention->qkv_bias.fill(0.0);
    const auto uniform = m.attention_summary(zero, data, idx);
    for (double v : uniform.matrix.values()) {
      worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / 3.0));
    }
  }
  o.require(worst_row <= 1e-5, fmt("row sum error %.3g", worst_row));
  o.require(worst_brute <= 1e-12, fmt("brute-force mismatch %.3g", worst_brute));
  o.require(worst_uniform <= 1e-12, fmt("non-uniform at zero weights by %.3g", worst_uniform));
  if (o.pass) {
    o.detail = fmt("row error %.1e, brute-force error %.1e, uniform error %.1e", worst_row,
                   worst_brute, worst_uniform);
  }
  return o;
}

std::pair<std::vector<std::uint8_t>, std::string> reproducible_run(std::size_t jobs) {
  SynthConfig sc;
  sc.samples_per_class = 40;
  sc.sources = {{"simclr", 12}, {"swav", 10}, {"dino", 8}};
  sc.seed = 21;
  const auto data = synth_generate(sc);
  DvmeConfig base;
  base.proj_dim = 4;
  const auto config = config_for(data, base);
  CvOptions opt;
  opt.train.seed = 5;
  opt.train.min_epochs = 4;
  opt.train.max_epochs = 6;
  opt.jobs = jobs;
  const auto cv = run_dvme_cv(data, config, opt);
  RunReport report;
  report.dataset = "synthetic";
  report.subtask = opt.subtask.name;
  report.variant = "dvme";
  report.metrics = cv.metrics;
  report.config_json = "{\"seed\":5}";
  std::ostringstream hist;
  for (const auto& f : cv.folds) hist << f.history.to_table();
  return {encode_checkpoint(config, cv.folds[cv.best_fold].params), report_to_json(report) + hist.str()};
}

Outcome reproducibility() {
  Outcome o;
  const auto a = reproducible_run(1), b = reproducible_run(1), c = reproducible_run(3);
  o.require(a.first == b.first, "checkpoints differ between identical runs");
  o.require(a.second == b.second, "reports differ between identical runs");
  o.require(a.first == c.first && a.second == c.second, "parallel folds change the result");
  if (o.pass) {
    o.detail = "checkpoint (" + std::to_string(a.first.size()) +
               " bytes) and report bit-identical across reruns and job counts";
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"parameter-counts", parameter_counts},
      {"leaderboard-formula", leaderboard},
      {"gradient-suite", gradient_suite},
      {"metric-oracles", metric_oracles},
      {"protocol-properties", protocol_properties},
      {"scheduler-early-stop", state_machines},
      {"fusion-benefit", fusion_benefit},
      {"attention-summary", attention_summary_properties},
      {"reproducibility", reproducibility},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
