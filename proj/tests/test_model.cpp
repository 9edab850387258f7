#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "dvme/binary_io.hpp"
#include "dvme/gradsuite.hpp"
#include "dvme/model.hpp"
#include "dvme/training.hpp"
#include "oracles.hpp"

using namespace dvme;

namespace {

DvmeConfig small_config(bool attention = true) {
  DvmeConfig c;
  c.sources = {{"simclr", 6}, {"swav", 5}, {"dino", 4}};
  c.proj_dim = 4;
  c.num_classes = 3;
  c.use_attention = attention;
  return c;
}

template <typename T>
std::vector<BasicTensor<T>> random_inputs(const DvmeConfig& c, std::size_t batch, Rng& rng) {
  std::vector<BasicTensor<T>> out;
  for (const auto& s : c.sources) {
    BasicTensor<T> x({batch, s.dim});
    for (T& v : x.values()) v = static_cast<T>(rng.normal());
    out.push_back(std::move(x));
  }
  return out;
}

EmbeddingDataset random_dataset(const DvmeConfig& c, std::size_t n, Rng& rng) {
  EmbeddingDataset d;
  d.sources = c.sources;
  d.num_classes = c.num_classes;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % c.num_classes));
  for (const auto& s : c.sources) {
    std::vector<float> f(n * s.dim);
    for (float& v : f) v = static_cast<float>(rng.normal());
    d.features.push_back(std::move(f));
  }
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dvme_test_" + name)).string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter counts

TEST(ParamCount, ProbeAnchors) {
  EXPECT_EQ(count_probe_params(2048, 5), 10245u);
  EXPECT_EQ(count_probe_params(1536, 5), 7685u);
}

TEST(ParamCount, DefaultFusionHead) {
  DvmeConfig c;
  c.num_classes = 5;
  const auto n = count_params(c);
  // projections + qkv/out + layernorm + proj_head + classifier, summed by hand
  const std::uint64_t by_hand = (2048 * 512 + 512) * 2 + (1536 * 512 + 512) + (3 + 3 + 1 + 1) +
                                1536 * 2 + (1536 * 512 + 512) + (512 * 5 + 5);
  EXPECT_EQ(n, by_hand);
  EXPECT_EQ(n, 3677709u);
  EXPECT_GE(n, 3550000u);
  EXPECT_LE(n, 3700000u);
  EXPECT_EQ(std::round(static_cast<double>(n) / 1e5) / 10.0, 3.7);
}

TEST(ParamCount, AblationDropsOnlyAttentionTensors) {
  DvmeConfig with = small_config(true), without = small_config(false);
  const auto a = DvmeModel<float>(with).init(1), b = DvmeModel<float>(without).init(1);
  std::vector<std::string> na, nb;
  for (const auto& r : a.tensors())
    if (r.name.rfind("attn.", 0) != 0) na.push_back(r.name);
  for (const auto& r : b.tensors()) nb.push_back(r.name);
  EXPECT_EQ(na, nb);
  EXPECT_EQ(count_params(with) - count_params(without), 8u);
  with.qkv_bias = false;
  EXPECT_EQ(count_params(small_config(true)) - count_params(with), 3u);
}

TEST(ParamCount, EqualsScalarsTouchedByOneAdamStep) {
  DvmeConfig c;
  c.num_classes = 5;
  const auto params = DvmeModel<float>(c).init(3);
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
  EXPECT_EQ(touched, count_params(c));
  EXPECT_EQ(params.scalar_count(), count_params(c));
}

TEST(Config, HeadsMustBeOneWithAttention) {
  auto c = small_config();
  c.attention_heads = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.use_attention = false;
  EXPECT_NO_THROW(c.validate());
}

// ---------------------------------------------------------------------------
// Initialization

TEST(Init, DeterministicPerSeed) {
  const DvmeModel<float> m(small_config());
  EXPECT_TRUE(same_values(m.init(9), m.init(9)));
  EXPECT_FALSE(same_values(m.init(9), m.init(10)));
}

TEST(Init, DefaultLayerNormAndBiases) {
  const auto p = DvmeModel<float>(DvmeConfig{}).init(0);
  ASSERT_EQ(p.norm_gamma.size(), 1536u);
  for (float g : p.norm_gamma.values()) EXPECT_EQ(g, 1.0f);
  for (float b : p.norm_beta.values()) EXPECT_EQ(b, 0.0f);
  for (const auto& l : p.source_proj)
    for (float b : l.bias.values()) EXPECT_EQ(b, 0.0f);
}

TEST(Init, HeUniformBoundsAndMean) {
  const auto c = small_config();
  const DvmeModel<double> m(c);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = m.init(seed);
    double sum = 0.0, var_sum = 0.0;
    std::size_t n = 0;
    auto check = [&](const TensorD& w) {
      const double bound = std::sqrt(6.0 / static_cast<double>(w.rows()));
      for (double v : w.values()) {
        EXPECT_LE(std::abs(v), bound);
        sum += v;
        var_sum += bound * bound / 3.0;
        ++n;
      }
    };
    for (const auto& l : p.source_proj) check(l.weight);
    check(p.proj_head.weight);
    check(p.classifier.weight);
    const double mean = sum / static_cast<double>(n);
    const double sigma = std::sqrt(var_sum) / static_cast<double>(n);
    EXPECT_LT(std::abs(mean), 3.0 * sigma) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------
// Forward

TEST(Forward, OutputShape) {
  DvmeConfig c = small_config();
  c.num_classes = 5;
  const DvmeModel<float> m(c);
  Rng rng(1);
  const auto f = m.forward_eval(m.init(1), random_inputs<float>(c, 7, rng));
  EXPECT_EQ(f.logits.shape(), (std::vector<std::size_t>{7, 5}));
  EXPECT_EQ(f.cache.tokens.shape(), (std::vector<std::size_t>{7, 12}));
  EXPECT_EQ(f.cache.hidden.shape(), (std::vector<std::size_t>{7, 4}));
}

TEST(Forward, EvalIsDeterministic) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  const auto p = m.init(2);
  Rng rng(2);
  const auto x = random_inputs<float>(c, 5, rng);
  EXPECT_EQ(m.forward_eval(p, x).logits, m.forward_eval(p, x).logits);
}

TEST(Forward, ZeroInputYieldsClassifierBias) {
  for (bool attention : {true, false}) {
    const auto c = small_config(attention);
    const DvmeModel<float> m(c);
    auto p = m.init(4);
    p.classifier.bias = Tensor::vector({0.25f, -1.5f, 3.0f});
    std::vector<Tensor> x;
    for (const auto& s : c.sources) x.emplace_back(std::vector<std::size_t>{3, s.dim});
    const auto logits = m.forward_eval(p, x).logits;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(logits(r, k), p.classifier.bias[k]);
  }
}

TEST(Forward, RejectsBadInputs) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  const auto p = m.init(0);
  Rng rng(3);
  auto x = random_inputs<float>(c, 2, rng);
  auto fewer = x;
  fewer.pop_back();
  EXPECT_THROW(m.forward_eval(p, fewer), DimensionError);
  auto wrong = x;
  wrong[1] = Tensor({2, 9});
  EXPECT_THROW(m.forward_eval(p, wrong), DimensionError);
  x[0][0] = std::nanf("");
  EXPECT_THROW(m.forward_eval(p, x), NumericError);
}

TEST(Forward, TrainModeDropoutUsesStream) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  const auto p = m.init(5);
  Rng rng(5);
  const auto x = random_inputs<float>(c, 4, rng);
  CounterStream a(1), b(1), d(2);
  const auto fa = m.forward(p, x, nn::Mode::train, a);
  EXPECT_EQ(fa.logits, m.forward(p, x, nn::Mode::train, b).logits);
  EXPECT_NE(fa.logits, m.forward(p, x, nn::Mode::train, d).logits);
  EXPECT_FALSE(fa.cache.dropout_mask.empty());
}

// ---------------------------------------------------------------------------
// Backward

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto c = small_config();
  const DvmeModel<double> m(c);
  const auto p = m.init(6);
  Rng rng(6);
  const auto f = m.forward_eval(p, random_inputs<double>(c, 3, rng));
  const auto g = m.backward(p, f.cache, TensorD({3, 3}));
  for (const auto& r : g.tensors())
    for (double v : r.tensor->values()) EXPECT_EQ(v, 0.0) << r.name;
}

TEST(Backward, StaleCacheIsRejected) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  auto p = m.init(7);
  Rng rng(7);
  const auto f = m.forward_eval(p, random_inputs<float>(c, 2, rng));
  const Tensor dl({2, 3}, 1.0f);
  EXPECT_NO_THROW(m.backward(p, f.cache, dl));
  EXPECT_THROW(m.backward(m.init(7), f.cache, dl), StaleCacheError);
  p.mark_updated();
  EXPECT_THROW(m.backward(p, f.cache, dl), StaleCacheError);

  ProbeModel<float> probe({"simclr", 6}, 3);
  auto pp = probe.init(1);
  const auto pf = probe.forward_eval(pp, std::vector<Tensor>{f.cache.inputs[0]});
  pp.mark_updated();
  EXPECT_THROW(probe.backward(pp, pf.cache, dl), StaleCacheError);
}

TEST(Backward, GradientSuiteOverSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_grad_suite({seed, ""});
    for (const auto& c : r.cases) {
      EXPECT_LT(c.result.max_rel_error, 1e-4) << c.name << " seed " << seed;
      EXPECT_GT(c.result.checked, 0u);
    }
    const auto& probe = *std::find_if(r.cases.begin(), r.cases.end(),
                                      [](const auto& c) { return c.name == "probe"; });
    EXPECT_LT(probe.result.max_rel_error, 1e-6);
  }
}

TEST(Backward, SignFlipIsCaught) {
  for (const char* name : {"attn.qkv.weight", "norm.gamma", "proj.swav.weight", "x"}) {
    const auto r = run_grad_suite({0, name});
    EXPECT_FALSE(r.passed(1e-4)) << name;
  }
}

// ---------------------------------------------------------------------------
// Attention

TEST(Attention, MatrixMatchesDirectSoftmax) {
  const auto c = small_config();
  const DvmeModel<double> m(c);
  auto p = m.init(8);
  Rng rng(8);
  for (auto& r : p.tensors())
    for (double& v : r.tensor->values()) v += 0.3 * rng.normal();
  const auto x = random_inputs<double>(c, 2, rng);
  const std::size_t t = c.token_count();
  for (std::size_t sample = 0; sample < 2; ++sample) {
    std::vector<double> tok;
    for (std::size_t s = 0; s < c.sources.size(); ++s) {
      TensorD row({1, c.sources[s].dim});
      for (std::size_t j = 0; j < c.sources[s].dim; ++j) row[j] = x[s](sample, j);
      const auto y = oracle::matmul(row, p.source_proj[s].weight);
      for (std::size_t j = 0; j < c.proj_dim; ++j) tok.push_back(y[j] + p.source_proj[s].bias[j]);
    }
    const auto& a = *p.attention;
    const auto got = m.attention_matrix(p, x, sample);
    for (std::size_t r = 0; r < t; ++r) {
      const double q = a.qkv_weight[0] * tok[r] + a.qkv_bias[0];
      std::vector<double> e(t);
      double z = 0.0, mx = -1e300;
      for (std::size_t col = 0; col < t; ++col) mx = std::max(mx, q * (a.qkv_weight[1] * tok[col] + a.qkv_bias[1]));
      for (std::size_t col = 0; col < t; ++col) {
        e[col] = std::exp(q * (a.qkv_weight[1] * tok[col] + a.qkv_bias[1]) - mx);
        z += e[col];
      }
      for (std::size_t col = 0; col < t; ++col) EXPECT_NEAR(got(r, col), e[col] / z, 1e-12);
    }
  }
}

TEST(Attention, UniformAtZeroQueryKeyWeights) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  auto p = m.init(9);
  p.attention->qkv_weight.fill(0.0f);
  p.attention->qkv_bias.fill(0.0f);
  Rng rng(9);
  const auto d = random_dataset(c, 10, rng);
  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  const auto s = m.attention_summary(p, d, idx, 4);
  EXPECT_EQ(s.sample_count, 10u);
  for (double v : s.matrix.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Attention, SummaryMatchesBruteForceOnToySet) {
  const auto c = small_config();
  const DvmeModel<double> m(c);
  auto p = m.init(10);
  Rng rng(10);
  for (auto& r : p.tensors())
    for (double& v : r.tensor->values()) v += 0.5 * rng.normal();
  const auto d = random_dataset(c, 2, rng);
  const std::vector<std::size_t> idx{0, 1};
  const auto s = m.attention_summary(p, d, idx, 1);

  const auto x = gather_inputs<double>(d, resolve_sources(d, m.input_sources()), idx);
  TensorD expected({3, 3});
  for (std::size_t i = 0; i < 2; ++i) {
    const auto b = oracle::block_summary(m.attention_matrix(p, x, i), 3, c.proj_dim);
    for (std::size_t k = 0; k < 9; ++k) expected[k] += b[k] / 2.0;
  }
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(s.matrix[k], expected[k], 1e-12);
  for (std::size_t r = 0; r < 3; ++r)
    EXPECT_NEAR(s.matrix(r, 0) + s.matrix(r, 1) + s.matrix(r, 2), 1.0, 1e-5);
  EXPECT_EQ(s.sources, (std::vector<std::string>{"simclr", "swav", "dino"}));
}

TEST(Attention, RefusedWithoutAttention) {
  const auto c = small_config(false);
  const DvmeModel<float> m(c);
  Rng rng(11);
  const auto d = random_dataset(c, 3, rng);
  const std::vector<std::size_t> idx{0};
  EXPECT_THROW(m.attention_summary(m.init(1), d, idx), ConfigError);
}

// ---------------------------------------------------------------------------
// Probe

TEST(Probe, ZeroWeightsGiveLnC) {
  ProbeModel<double> probe({"dino", 4}, 5);
  auto p = probe.init(0);
  p.linear.weight.fill(0.0);
  Rng rng(12);
  TensorD x({6, 4});
  for (double& v : x.values()) v = rng.normal();
  const std::vector<int> y{0, 1, 2, 3, 4, 0};
  const auto ce = nn::cross_entropy(probe.forward_eval(p, std::vector<TensorD>{x}).logits, y);
  EXPECT_NEAR(ce.loss, std::log(5.0), 1e-12);
}

TEST(Probe, SeparableToyReachesFullTrainAccuracy) {
  ProbeModel<double> probe({"toy", 2}, 2);
  auto p = probe.init(1);
  Rng rng(13);
  TensorD x({40, 2});
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) = (y[i] ? 1.0 : -1.0) * (0.5 + rng.uniform());
    x(i, 1) = rng.normal();
  }
  const std::vector<TensorD> in{x};
  AdamState<double> state;
  TrainConfig cfg;
  int steps = 0;
  auto accuracy = [&] {
    const auto logits = probe.forward_eval(p, in).logits;
    int ok = 0;
    for (std::size_t i = 0; i < 40; ++i) ok += (logits(i, 1) > logits(i, 0)) == (y[i] == 1);
    return ok / 40.0;
  };
  while (accuracy() < 1.0 && steps < 200) {
    const auto f = probe.forward_eval(p, in);
    adam_step(p, probe.backward(p, f.cache, nn::cross_entropy(f.logits, y).dlogits), state, 0.05, cfg);
    ++steps;
  }
  EXPECT_EQ(accuracy(), 1.0) << "after " << steps << " steps";
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripReproducesLogitsBitExactly) {
  const auto c = small_config();
  const DvmeModel<float> m(c);
  const auto p = m.init(14);
  const auto path = temp_path("roundtrip.dvmw");
  save_checkpoint(path, c, p);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config, c);
  EXPECT_TRUE(same_values(loaded.params, p));
  Rng rng(14);
  const auto x = random_inputs<float>(c, 6, rng);
  EXPECT_EQ(DvmeModel<float>(loaded.config).forward_eval(loaded.params, x).logits,
            m.forward_eval(p, x).logits);
  EXPECT_EQ(encode_checkpoint(loaded.config, loaded.params), encode_checkpoint(c, p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, NoAttentionVariantRoundTrips) {
  auto c = small_config(false);
  c.dropout_p = 0.35;
  const auto p = DvmeModel<float>(c).init(15);
  const auto ck = decode_checkpoint(encode_checkpoint(c, p));
  EXPECT_EQ(ck.config, c);
  EXPECT_FALSE(ck.params.attention.has_value());
  EXPECT_TRUE(same_values(ck.params, p));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto c = small_config();
  const auto bytes = encode_checkpoint(c, DvmeModel<float>(c).init(16));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), CrcError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), MagicError);
  EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 9)), DataError);
  EXPECT_THROW(decode_checkpoint({}), MagicError);
}
