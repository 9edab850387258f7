#include "dvme/synth.hpp"

#include <bit>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dvme/rng.hpp"

namespace dvme {

namespace {

std::vector<double> random_unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

void check_config(const SynthConfig& c) {
  if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) {
    throw ParameterError("sigma must be a positive finite number");
  }
  if (c.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (c.num_classes > 0xFFFF) throw ConfigError("too many classes for the EMBX label field");
  if (c.sources.empty()) throw ConfigError("synthetic data needs at least one source");
  for (const auto& s : c.sources) {
    if (s.dim == 0) throw ConfigError("source '" + s.name + "' has zero dimension");
  }
  if (c.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
}

}  // namespace

const char* to_string(SynthMode mode) {
  return mode == SynthMode::redundant ? "redundant" : "complementary";
}

SynthMode parse_synth_mode(const std::string& s) {
  if (s == "redundant") return SynthMode::redundant;
  if (s == "complementary") return SynthMode::complementary;
  throw ConfigError("unknown synth mode '" + s + "' (expected redundant|complementary)");
}

std::vector<std::uint32_t> complementary_codes(std::uint32_t num_classes,
                                               std::size_t num_sources) {
  if (num_classes < 3) {
    throw ConfigError("complementary mode needs at least 3 classes; with 2 a single source "
                      "would carry the whole label");
  }
  if (num_sources < 2 || num_sources >= 32 || num_classes > (1u << num_sources)) {
    throw ConfigError("complementary mode cannot give " + std::to_string(num_classes) +
                      " classes distinct codes with " + std::to_string(num_sources) +
                      " sources (need num_classes <= 2^sources)");
  }
  const std::uint32_t words = 1u << num_sources;
  std::vector<std::uint32_t> codes;
  const bool parity_fits = num_classes <= words / 2;
  for (std::uint32_t w = 0; w < words && codes.size() < num_classes; ++w) {
    if (!parity_fits || std::popcount(w) % 2 == 0) codes.push_back(w);
  }
  return codes;
}

EmbeddingDataset synth_generate(const SynthConfig& c) {
  check_config(c);
  const std::size_t k = c.sources.size();
  const std::size_t classes = c.num_classes;
  Rng rng(c.seed);

  // means[s][class] -> dim vector
  std::vector<std::vector<std::vector<double>>> means(k);
  if (c.mode == SynthMode::redundant) {
    for (std::size_t s = 0; s < k; ++s) {
      for (std::size_t y = 0; y < classes; ++y) {
        means[s].push_back(random_unit_vector(rng, c.sources[s].dim));
      }
    }
  } else {
    const auto codes = complementary_codes(c.num_classes, k);
    for (std::size_t s = 0; s < k; ++s) {
      const auto u = random_unit_vector(rng, c.sources[s].dim);
      for (std::size_t y = 0; y < classes; ++y) {
        const double sign = (codes[y] >> s) & 1u ? 1.0 : -1.0;
        std::vector<double> m(u);
        for (double& x : m) x *= sign;
        means[s].push_back(std::move(m));
      }
    }
  }

  EmbeddingDataset ds;
  ds.sources = c.sources;
  ds.num_classes = c.num_classes;
  const std::size_t n = classes * c.samples_per_class;
  ds.labels.resize(n);
  ds.features.resize(k);
  for (std::size_t s = 0; s < k; ++s) ds.features[s].resize(n * c.sources[s].dim);
  if (c.group_size > 0) ds.group_ids.emplace(n);
  const std::size_t groups_per_class =
      c.group_size > 0 ? (c.samples_per_class + c.group_size - 1) / c.group_size : 0;

  // Samples interleave classes: sample i has class i % C.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    const std::size_t rank_in_class = i / classes;
    ds.labels[i] = static_cast<int>(y);
    if (ds.group_ids) {
      (*ds.group_ids)[i] =
          static_cast<std::int64_t>(y * groups_per_class + rank_in_class / c.group_size);
    }
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t d = c.sources[s].dim;
      float* dst = ds.features[s].data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        dst[j] = static_cast<float>(means[s][y][j] + c.sigma * rng.normal());
      }
    }
  }
  return ds;
}

std::string synth_config_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.mode);
  j["complementary"] = c.mode == SynthMode::complementary;
  j["num_classes"] = c.num_classes;
  nlohmann::ordered_json src = nlohmann::ordered_json::array();
  for (const auto& s : c.sources) src.push_back({{"name", s.name}, {"dim", s.dim}});
  j["sources"] = src;
  j["samples_per_class"] = c.samples_per_class;
  j["sigma"] = c.sigma;
  j["seed"] = c.seed;
  j["group_size"] = c.group_size;
  return j.dump();
}

}  // namespace dvme
