// dvme: command-line front end for synthetic data, probes, fusion heads,
// attention summaries, report aggregation, gradient checks and file inspection.
//
// Exit codes: 0 success, 2 usage/config error, 3 data/corruption error,
// 4 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dvme/binary_io.hpp"
#include "dvme/embedstore.hpp"
#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/gradsuite.hpp"
#include "dvme/model.hpp"
#include "dvme/protocol.hpp"
#include "dvme/synth.hpp"

namespace {

using ojson = nlohmann::ordered_json;
using namespace dvme;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Config files: a JSON object whose keys are long flag names without the
// dashes, or a report document whose "config" member is such an object.
// Flags given on the command line win.

void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  ojson j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config file " + path + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "command" || key == "config") continue;
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) {
      throw ConfigError("config key '" + key + "' is not an option of '" + sub.get_name() + "'");
    }
    if (opt->count() > 0 || value.is_null()) continue;
    auto as_text = [](const ojson& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      return v.dump();
    };
    if (value.is_array()) {
      for (const auto& item : value) opt->add_result(as_text(item));
    } else {
      opt->add_result(as_text(value));
    }
    opt->run_callback();
  }
}

// Seed precedence: flag, then config file, then DVME_SEED, then 0.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t parsed) {
  if (opt->count() > 0) return parsed;
  if (const char* env = std::getenv("DVME_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("DVME_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return parsed;
}

struct Seeded {
  std::uint64_t seed = 0;
  CLI::Option* opt = nullptr;
  std::string config;
  std::uint64_t resolved() const { return resolve_seed(opt, seed); }
};

void add_seed_and_config(CLI::App* sub, Seeded& s) {
  s.opt = sub->add_option("--seed", s.seed, "Random seed (fallback: DVME_SEED, then 0)");
  sub->add_option("--config", s.config, "JSON config file; keys mirror long flag names");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  Seeded seeded;
  std::string out, mode = "complementary", name;
  std::uint32_t classes = 4, samples_per_class = 150, group_size = 0;
  double sigma = 0.5;
  std::vector<std::string> sources;
};

std::vector<SourceSpec> parse_sources(const std::vector<std::string>& items) {
  std::vector<SourceSpec> out;
  for (const auto& item : items) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw ConfigError("--source expects NAME:DIM, got '" + item + "'");
    }
    SourceSpec s;
    s.name = item.substr(0, colon);
    try {
      const long dim = std::stol(item.substr(colon + 1));
      if (dim <= 0) throw std::out_of_range("dim");
      s.dim = static_cast<std::uint32_t>(dim);
    } catch (const std::exception&) {
      throw ConfigError("bad dimension in --source '" + item + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_synth(const SynthFlags& f) {
  if (f.out.empty()) throw ConfigError("synth: --out is required");
  SynthConfig cfg;
  cfg.num_classes = f.classes;
  if (!f.sources.empty()) cfg.sources = parse_sources(f.sources);
  cfg.samples_per_class = f.samples_per_class;
  cfg.sigma = f.sigma;
  cfg.mode = parse_synth_mode(f.mode);
  cfg.seed = f.seeded.resolved();
  cfg.group_size = f.group_size;
  const EmbeddingDataset data = synth_generate(cfg);
  write_embx(data, f.out);

  Manifest m;
  m.dataset_name = f.name.empty() ? "synthetic-" + f.mode : f.name;
  for (const auto& s : data.sources) m.source_models.push_back(s.name);
  m.notes = "synthetic Gaussian class-conditional embeddings";
  m.generator_json = synth_config_json(cfg);
  write_manifest(m, manifest_path_for(f.out));

  std::printf("wrote %s\n", f.out.c_str());
  std::printf("  samples  %zu\n  classes  %u\n  mode     %s\n", data.size(), data.num_classes,
              to_string(cfg.mode));
  for (const auto& s : data.sources) std::printf("  source   %-10s dim %u\n", s.name.c_str(), s.dim);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// probe / dvme

struct RunFlags {
  Seeded seeded;
  std::string data, preset, subtask = "full", metric, kappa_weighting = "quadratic", out;
  std::size_t samples = 0, jobs = 1, folds = 5, batch_size = 64;
  bool oversample = false;
  double lr = 1e-3;
  std::uint32_t min_epochs = 30, max_epochs = 50;
  CLI::Option* samples_opt = nullptr;
};

void add_run_flags(CLI::App* sub, RunFlags& f) {
  add_seed_and_config(sub, f.seeded);
  sub->add_option("--data", f.data, "EMBX input file");
  sub->add_option("--preset", f.preset, "Dataset preset: patchcam|aptos|pneumonia|nih");
  sub->add_option("--subtask", f.subtask, "small|medium|full");
  f.samples_opt = sub->add_option("--samples", f.samples, "Training samples per fold (overrides the subtask size)");
  sub->add_option("--metric", f.metric, "Monitor metric: auc|kappa (default: preset metric, else auc)");
  sub->add_option("--kappa-weighting", f.kappa_weighting, "none|quadratic");
  sub->add_flag("--oversample", f.oversample, "Inverse-frequency sampling with replacement");
  sub->add_option("--jobs", f.jobs, "Folds trained concurrently");
  sub->add_option("--folds", f.folds, "Number of folds");
  sub->add_option("--lr", f.lr, "Initial learning rate");
  sub->add_option("--batch-size", f.batch_size, "Minibatch size");
  sub->add_option("--min-epochs", f.min_epochs, "Earliest epoch at which early stopping may fire");
  sub->add_option("--max-epochs", f.max_epochs, "Epoch cap");
  sub->add_option("--out", f.out, "Write the JSON report here");
}

struct ResolvedRun {
  EmbeddingDataset data;
  CvOptions cv;
  std::optional<double> leaderboard_alpha;
  std::string dataset_name;
  ojson config;
};

ResolvedRun resolve_run(const RunFlags& f, const std::string& command) {
  if (f.data.empty()) throw ConfigError(command + ": --data is required");
  ResolvedRun r;
  r.data = read_embx(f.data);
  const auto problems = validate(r.data);
  if (!problems.empty()) {
    throw FormatError(f.data + ": " + problems.front().message + " (" +
                      std::to_string(problems.size()) + " problem(s))");
  }

  std::optional<DatasetPreset> preset;
  if (!f.preset.empty()) preset = find_preset(f.preset);
  if (f.subtask != "small" && f.subtask != "medium" && f.subtask != "full") {
    throw ConfigError("unknown subtask '" + f.subtask + "' (expected small|medium|full)");
  }
  if (preset) {
    r.cv.subtask = subtask_from_preset(*preset, f.subtask);
    r.leaderboard_alpha = preset->leaderboard_alpha;
  } else {
    r.cv.subtask.name = f.subtask;
    if (f.subtask != "full" && f.samples_opt->count() == 0) {
      throw ConfigError("subtask '" + f.subtask + "' needs --preset or --samples");
    }
  }
  if (f.samples_opt->count() > 0) {
    if (f.samples == 0) throw ConfigError("--samples must be positive");
    r.cv.subtask.sample_count = f.samples;
  }

  TrainConfig& t = r.cv.train;
  t.seed = f.seeded.resolved();
  t.initial_lr = f.lr;
  t.batch_size = f.batch_size;
  t.min_epochs = f.min_epochs;
  t.max_epochs = f.max_epochs;
  t.oversample = f.oversample;
  t.monitor = !f.metric.empty() ? parse_metric(f.metric)
                                : (preset ? preset->metric : MetricKind::auc);
  t.kappa_weighting = parse_kappa_weighting(f.kappa_weighting);
  t.validate();
  r.cv.k = f.folds;
  r.cv.jobs = f.jobs == 0 ? 1 : f.jobs;
  r.dataset_name = preset ? preset->name : f.data;

  ojson& c = r.config;
  c["command"] = command;
  c["data"] = f.data;
  if (preset) c["preset"] = preset->name;
  c["subtask"] = f.subtask;
  if (r.cv.subtask.sample_count) c["samples"] = *r.cv.subtask.sample_count;
  c["seed"] = t.seed;
  c["metric"] = to_string(t.monitor);
  c["kappa-weighting"] = to_string(t.kappa_weighting);
  c["oversample"] = t.oversample;
  c["folds"] = r.cv.k;
  c["lr"] = t.initial_lr;
  c["batch-size"] = t.batch_size;
  c["min-epochs"] = t.min_epochs;
  c["max-epochs"] = t.max_epochs;
  c["jobs"] = r.cv.jobs;
  return r;
}

template <typename Model>
RunReport make_report(const ResolvedRun& run, const CvResult<Model>& cv, std::string variant) {
  RunReport rep;
  rep.dataset = run.dataset_name;
  rep.subtask = run.cv.subtask.name;
  rep.variant = std::move(variant);
  rep.metrics = cv.metrics;
  rep.leaderboard_alpha = run.leaderboard_alpha;
  rep.config_json = run.config.dump();
  return rep;
}

void print_report(const RunReport& rep) {
  std::printf("dataset  %s\nsubtask  %s\nvariant  %s\n", rep.dataset.c_str(), rep.subtask.c_str(),
              rep.variant.c_str());
  std::printf("fold\t%s\n", rep.metrics.metric.c_str());
  for (std::size_t i = 0; i < rep.metrics.per_fold.size(); ++i) {
    std::printf("%zu\t%.6f\n", i, rep.metrics.per_fold[i]);
  }
  std::printf("mean\t%.6f +/- %.6f\n", rep.metrics.mean, rep.metrics.std);
}

template <typename Model>
void print_histories(const CvResult<Model>& cv) {
  for (std::size_t f = 0; f < cv.folds.size(); ++f) {
    const auto& h = cv.folds[f].history;
    std::printf("fold %zu: %zu epochs, best epoch %u, stop %s\n", f, h.epochs.size(), h.best_epoch,
                to_string(h.stop_reason));
  }
}

int cmd_probe(const RunFlags& f, const std::string& source) {
  const ResolvedRun run = [&] {
    auto r = resolve_run(f, "probe");
    if (source.empty()) throw ConfigError("probe: --source is required");
    r.config["source"] = source;
    return r;
  }();
  run.data.source_index(source);
  auto results = run_probe_cv(run.data, {source}, run.cv);
  const auto rep = make_report(run, results.front(), "probe:" + source);
  print_report(rep);
  print_histories(results.front());
  if (!f.out.empty()) write_text(f.out, report_to_json(rep));
  return kExitOk;
}

struct DvmeFlags {
  std::uint32_t proj_dim = 512;
  bool no_attention = false;
  std::string checkpoint;
};

int cmd_dvme(const RunFlags& f, const DvmeFlags& d) {
  ResolvedRun run = resolve_run(f, "dvme");
  DvmeConfig base;
  base.proj_dim = d.proj_dim;
  base.use_attention = !d.no_attention;
  const DvmeConfig cfg = config_for(run.data, base);
  cfg.validate();
  run.config["proj-dim"] = cfg.proj_dim;
  run.config["no-attention"] = !cfg.use_attention;
  if (!d.checkpoint.empty()) run.config["checkpoint"] = d.checkpoint;

  const auto cv = run_dvme_cv(run.data, cfg, run.cv);
  const auto rep = make_report(run, cv, cfg.use_attention ? "dvme" : "dvme_no_attention");
  print_report(rep);
  print_histories(cv);
  if (!d.checkpoint.empty()) {
    save_checkpoint(d.checkpoint, cfg, cv.folds[cv.best_fold].params);
    std::printf("checkpoint (fold %zu) -> %s\n", cv.best_fold, d.checkpoint.c_str());
  }
  if (!f.out.empty()) write_text(f.out, report_to_json(rep));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// attn

int cmd_attn(const std::string& checkpoint, const std::string& data_path, std::size_t limit,
             const std::string& out) {
  if (checkpoint.empty() || data_path.empty()) {
    throw ConfigError("attn: --checkpoint and --data are required");
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!ck.config.use_attention) {
    throw ConfigError("checkpoint " + checkpoint + " has no attention block (no-attention variant)");
  }
  const EmbeddingDataset data = read_embx(data_path);
  const DvmeModel<float> model(ck.config);
  std::vector<std::size_t> idx(limit == 0 ? data.size() : std::min(limit, data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto s = model.attention_summary(ck.params, data, idx);

  std::printf("%-10s", "");
  for (const auto& n : s.sources) std::printf(" %10s", n.c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < s.sources.size(); ++i) {
    std::printf("%-10s", s.sources[i].c_str());
    for (std::size_t j = 0; j < s.sources.size(); ++j) std::printf(" %10.6f", s.matrix(i, j));
    std::printf("\n");
  }
  std::printf("samples %zu\n", s.sample_count);
  if (!out.empty()) {
    ojson j;
    j["sources"] = s.sources;
    ojson rows = ojson::array();
    for (std::size_t i = 0; i < s.sources.size(); ++i) {
      std::vector<double> row(s.matrix.row(i).begin(), s.matrix.row(i).end());
      rows.push_back(row);
    }
    j["matrix"] = rows;
    j["sample_count"] = s.sample_count;
    write_text(out, j.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportFlags {
  std::vector<double> scores;
  std::vector<std::string> inputs;
  std::string metric = "auc", out;
  std::optional<double> alpha, s_private, s_public;
};

int cmd_report(const ReportFlags& f) {
  const bool have_pair = f.s_private || f.s_public;
  if (have_pair && !(f.s_private && f.s_public && f.alpha)) {
    throw ConfigError("report: --alpha, --private and --public go together");
  }
  if (f.scores.empty() && f.inputs.empty() && !have_pair) {
    throw ConfigError("report: give --scores, --inputs, or --alpha/--private/--public");
  }
  if (!f.scores.empty() && !f.inputs.empty()) {
    throw ConfigError("report: --scores and --inputs are mutually exclusive");
  }

  RunReport rep;
  bool aggregated = false;
  if (!f.scores.empty()) {
    rep.metrics = aggregate(f.scores, f.metric);
    aggregated = true;
  } else if (!f.inputs.empty()) {
    std::vector<double> all;
    std::string metric;
    for (const auto& path : f.inputs) {
      const auto bytes = io::read_file(path);
      const RunReport in = report_from_json(std::string(bytes.begin(), bytes.end()));
      if (metric.empty()) {
        metric = in.metrics.metric;
        rep.dataset = in.dataset;
        rep.subtask = in.subtask;
        rep.variant = in.variant;
      } else if (in.metrics.metric != metric) {
        throw ConfigError("report: mixed metrics '" + metric + "' and '" + in.metrics.metric +
                          "' (" + path + ")");
      }
      all.insert(all.end(), in.metrics.per_fold.begin(), in.metrics.per_fold.end());
    }
    rep.metrics = aggregate(all, metric);
    aggregated = true;
  }
  if (aggregated) {
    std::printf("fold\t%s\n", rep.metrics.metric.c_str());
    for (std::size_t i = 0; i < rep.metrics.per_fold.size(); ++i) {
      std::printf("%zu\t%.6f\n", i, rep.metrics.per_fold[i]);
    }
    std::printf("mean\t%.6f +/- %.6f\n", rep.metrics.mean, rep.metrics.std);
  }
  if (have_pair) {
    const double s = combine_leaderboard({*f.alpha, *f.s_private, *f.s_public});
    std::printf("leaderboard\t%.6f (alpha %.4g, private %.6f, public %.6f)\n", s, *f.alpha,
                *f.s_private, *f.s_public);
    rep.leaderboard_alpha = f.alpha;
    rep.leaderboard_score = s;
  }
  if (!f.out.empty()) {
    ojson c;
    c["command"] = "report";
    c["metric"] = f.metric;
    if (!f.scores.empty()) c["scores"] = f.scores;
    if (!f.inputs.empty()) c["inputs"] = f.inputs;
    if (f.alpha) c["alpha"] = *f.alpha;
    if (f.s_private) c["private"] = *f.s_private;
    if (f.s_public) c["public"] = *f.s_public;
    rep.config_json = c.dump();
    if (!aggregated) rep.metrics.metric = f.metric;
    write_text(f.out, report_to_json(rep));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck / inspect

int cmd_gradcheck(std::uint64_t seed, const std::string& flip, double tol) {
  const auto report = run_grad_suite({seed, flip});
  std::printf("%-18s %8s %14s  %s\n", "case", "checked", "max_rel_err", "worst tensor");
  for (const auto& c : report.cases) {
    std::printf("%-18s %8zu %14.3e  %s[%zu]\n", c.name.c_str(), c.result.checked,
                c.result.max_rel_error, c.result.worst_tensor.c_str(), c.result.worst_index);
  }
  const bool ok = report.passed(tol);
  std::printf("%s: max rel. error %.3e (worst %s, tolerance %.1e)\n", ok ? "PASS" : "FAIL",
              report.max_rel_error(), report.worst().c_str(), tol);
  return ok ? kExitOk : kExitNumeric;
}

int cmd_inspect(const std::string& path) {
  const auto bytes = io::read_file(path);
  const EmbxHeader h = inspect_embx(bytes);
  std::printf("file     %s\nversion  %u\nsamples  %llu\nclasses  %u\ngroups   %s\n", path.c_str(),
              h.version, static_cast<unsigned long long>(h.count), h.num_classes,
              h.has_group_ids ? "yes" : "no");
  for (const auto& s : h.sources) std::printf("source   %-10s dim %u\n", s.name.c_str(), s.dim);
  const EmbeddingDataset data = decode_embx(bytes);
  std::printf("crc32    %08x ok\n", h.crc);
  const auto problems = validate(data);
  for (const auto& v : problems) {
    std::printf("problem  %s: %s\n", to_string(v.kind), v.message.c_str());
  }
  return problems.empty() ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DVME toolkit: fusion heads and linear probes on pre-extracted embeddings"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic EMBX dataset");
  add_seed_and_config(synth_cmd, synth.seeded);
  synth_cmd->add_option("--out", synth.out, "Output EMBX path");
  synth_cmd->add_option("--mode", synth.mode, "redundant|complementary");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes");
  synth_cmd->add_option("--source", synth.sources, "Source as NAME:DIM (repeatable)");
  synth_cmd->add_option("--samples-per-class", synth.samples_per_class, "Samples per class");
  synth_cmd->add_option("--sigma", synth.sigma, "Noise standard deviation");
  synth_cmd->add_option("--group-size", synth.group_size, "Group-id chunk size (0: no groups)");
  synth_cmd->add_option("--name", synth.name, "Dataset name recorded in the manifest");

  RunFlags probe;
  std::string probe_source;
  auto* probe_cmd = app.add_subcommand("probe", "k-fold linear probe on one source");
  add_run_flags(probe_cmd, probe);
  probe_cmd->add_option("--source", probe_source, "Source name");

  RunFlags dvme_run;
  DvmeFlags dvme_flags;
  auto* dvme_cmd = app.add_subcommand("dvme", "k-fold DVME fusion head");
  add_run_flags(dvme_cmd, dvme_run);
  dvme_cmd->add_option("--proj-dim", dvme_flags.proj_dim, "Per-source projection width");
  dvme_cmd->add_flag("--no-attention", dvme_flags.no_attention, "Ablation without self-attention");
  dvme_cmd->add_option("--checkpoint", dvme_flags.checkpoint, "Save the best fold's weights here");

  std::string attn_ckpt, attn_data, attn_out;
  std::size_t attn_limit = 0;
  Seeded attn_seeded;
  auto* attn_cmd = app.add_subcommand("attn", "Source-block attention summary of a checkpoint");
  attn_cmd->add_option("--config", attn_seeded.config, "JSON config file");
  attn_cmd->add_option("--checkpoint", attn_ckpt, "DVMW checkpoint");
  attn_cmd->add_option("--data", attn_data, "EMBX samples to average over");
  attn_cmd->add_option("--limit", attn_limit, "Use only the first N samples (0: all)");
  attn_cmd->add_option("--out", attn_out, "Write the summary as JSON");

  ReportFlags report;
  std::string report_config;
  double alpha = 0, s_private = 0, s_public = 0;
  auto* report_cmd = app.add_subcommand("report", "Aggregate fold scores; combine leaderboard scores");
  report_cmd->add_option("--config", report_config, "JSON config file");
  report_cmd->add_option("--scores", report.scores, "Fold scores")->delimiter(',');
  report_cmd->add_option("--inputs", report.inputs, "Report JSON files to pool")->delimiter(',');
  report_cmd->add_option("--metric", report.metric, "Metric name for --scores");
  auto* alpha_opt = report_cmd->add_option("--alpha", alpha, "Private-score weight");
  auto* private_opt = report_cmd->add_option("--private", s_private, "Private leaderboard score");
  auto* public_opt = report_cmd->add_option("--public", s_public, "Public leaderboard score");
  report_cmd->add_option("--out", report.out, "Write the JSON report here");

  Seeded grad_seeded;
  std::string sign_flip;
  double grad_tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  add_seed_and_config(grad_cmd, grad_seeded);
  grad_cmd->add_option("--tol", grad_tol, "Maximum relative error");
  grad_cmd->add_option("--inject-sign-flip", sign_flip)->group("");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Dump and verify an EMBX file");
  inspect_cmd->add_option("path", inspect_path, "EMBX file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    auto with_config = [](CLI::App* sub, const std::string& path) {
      if (!path.empty()) apply_config_file(*sub, path);
    };
    if (*synth_cmd) {
      with_config(synth_cmd, synth.seeded.config);
      return cmd_synth(synth);
    }
    if (*probe_cmd) {
      with_config(probe_cmd, probe.seeded.config);
      return cmd_probe(probe, probe_source);
    }
    if (*dvme_cmd) {
      with_config(dvme_cmd, dvme_run.seeded.config);
      return cmd_dvme(dvme_run, dvme_flags);
    }
    if (*attn_cmd) {
      with_config(attn_cmd, attn_seeded.config);
      return cmd_attn(attn_ckpt, attn_data, attn_limit, attn_out);
    }
    if (*report_cmd) {
      with_config(report_cmd, report_config);
      if (alpha_opt->count()) report.alpha = alpha;
      if (private_opt->count()) report.s_private = s_private;
      if (public_opt->count()) report.s_public = s_public;
      return cmd_report(report);
    }
    if (*grad_cmd) {
      with_config(grad_cmd, grad_seeded.config);
      return cmd_gradcheck(grad_seeded.resolved(), sign_flip, grad_tol);
    }
    if (*inspect_cmd) return cmd_inspect(inspect_path);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const UndefinedMetricError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
