#include "dvme/model.hpp"

#include <atomic>
#include <cmath>

#include "dvme/binary_io.hpp"

namespace dvme {

namespace {

std::atomic<std::uint64_t> g_next_identity{1};

template <typename T>
BasicTensor<T> he_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  BasicTensor<T> w({fan_in, fan_out});
  for (T& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

template <typename T>
LinearParams<T> init_linear(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return {he_uniform<T>(rng, fan_in, fan_out), BasicTensor<T>({fan_out})};
}

template <typename T>
LinearParams<T> zeros_linear(const LinearParams<T>& l) {
  return {BasicTensor<T>(l.weight.shape()), BasicTensor<T>(l.bias.shape())};
}

template <typename T>
void check_stamp(const ParamStamp& cache, const ParamStamp& params) {
  if (!(cache == params)) {
    throw StaleCacheError("forward cache was computed for different parameters (cache " +
                          std::to_string(cache.identity) + "/" + std::to_string(cache.version) +
                          ", params " + std::to_string(params.identity) + "/" +
                          std::to_string(params.version) + ")");
  }
}

// Softmax weights of query q against all keys, written to `weights`; returns
// the normaliser. Scores q*k are shifted by their maximum, which for a scalar
// query is q*max(k) or q*min(k) depending on the sign of q.
template <typename T>
T attention_row(T q, std::span<const T> keys, T kmin, T kmax, std::span<T> weights) {
  const T shift = q >= T{0} ? q * kmax : q * kmin;
  T sum{0};
  for (std::size_t c = 0; c < keys.size(); ++c) {
    weights[c] = std::exp(q * keys[c] - shift);
    sum += weights[c];
  }
  return sum;
}

}  // namespace

ParamStamp ParamStamp::fresh() { return {g_next_identity.fetch_add(1), 0}; }

void DvmeConfig::validate() const {
  if (sources.empty()) throw ConfigError("DVME needs at least one source");
  for (const auto& s : sources) {
    if (s.dim == 0) throw ConfigError("source '" + s.name + "' has zero dimension");
  }
  if (proj_dim == 0) throw ConfigError("proj_dim must be at least 1");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  nn::check_dropout_p(dropout_p);
  // Tokens are scalars, so the head count must divide 1.
  if (use_attention && attention_heads != 1) {
    throw ConfigError("attention_heads must be 1: token feature dim is 1");
  }
}

std::uint64_t count_probe_params(std::uint64_t dim, std::uint64_t num_classes) {
  return dim * num_classes + num_classes;
}

std::uint64_t count_params(const DvmeConfig& c) {
  c.validate();
  const std::uint64_t p = c.proj_dim;
  const std::uint64_t tokens = c.token_count();
  std::uint64_t total = 0;
  for (const auto& s : c.sources) total += std::uint64_t{s.dim} * p + p;
  if (c.use_attention) total += 3 + (c.qkv_bias ? 3 : 0) + 1 + 1;
  total += 2 * tokens;              // layernorm gamma, beta
  total += tokens * p + p;          // proj_head
  total += p * c.num_classes + c.num_classes;
  return total;
}

// ---------------------------------------------------------------------------
// DvmeParams

template <typename T>
std::vector<NamedRef<T>> DvmeParams<T>::tensors() {
  std::vector<NamedRef<T>> out;
  for (std::size_t s = 0; s < source_proj.size(); ++s) {
    out.push_back({"proj." + source_names[s] + ".weight", &source_proj[s].weight});
    out.push_back({"proj." + source_names[s] + ".bias", &source_proj[s].bias});
  }
  if (attention) {
    out.push_back({"attn.qkv.weight", &attention->qkv_weight});
    if (!attention->qkv_bias.empty()) out.push_back({"attn.qkv.bias", &attention->qkv_bias});
    out.push_back({"attn.out.weight", &attention->out_weight});
    out.push_back({"attn.out.bias", &attention->out_bias});
  }
  out.push_back({"norm.gamma", &norm_gamma});
  out.push_back({"norm.beta", &norm_beta});
  out.push_back({"proj_head.weight", &proj_head.weight});
  out.push_back({"proj_head.bias", &proj_head.bias});
  out.push_back({"classifier.weight", &classifier.weight});
  out.push_back({"classifier.bias", &classifier.bias});
  return out;
}

template <typename T>
std::vector<NamedConstRef<T>> DvmeParams<T>::tensors() const {
  auto refs = const_cast<DvmeParams*>(this)->tensors();
  std::vector<NamedConstRef<T>> out;
  out.reserve(refs.size());
  for (auto& r : refs) out.push_back({std::move(r.name), r.tensor});
  return out;
}

template <typename T>
DvmeParams<T> DvmeParams<T>::zeros_like() const {
  DvmeParams z;
  z.source_names = source_names;
  for (const auto& p : source_proj) z.source_proj.push_back(zeros_linear(p));
  if (attention) {
    z.attention = AttentionParams<T>{
        BasicTensor<T>(attention->qkv_weight.shape()),
        attention->qkv_bias.empty() ? BasicTensor<T>() : BasicTensor<T>(attention->qkv_bias.shape()),
        BasicTensor<T>(attention->out_weight.shape()), BasicTensor<T>(attention->out_bias.shape())};
  }
  z.norm_gamma = BasicTensor<T>(norm_gamma.shape());
  z.norm_beta = BasicTensor<T>(norm_beta.shape());
  z.proj_head = zeros_linear(proj_head);
  z.classifier = zeros_linear(classifier);
  z.stamp = stamp;
  return z;
}

template <typename T>
std::uint64_t DvmeParams<T>::scalar_count() const {
  std::uint64_t n = 0;
  for (const auto& r : tensors()) n += r.tensor->size();
  return n;
}

// ---------------------------------------------------------------------------
// DvmeModel

template <typename T>
DvmeModel<T>::DvmeModel(DvmeConfig config) : config_(std::move(config)) {
  config_.validate();
}

template <typename T>
std::vector<std::string> DvmeModel<T>::input_sources() const {
  std::vector<std::string> names;
  for (const auto& s : config_.sources) names.push_back(s.name);
  return names;
}

template <typename T>
typename DvmeModel<T>::Params DvmeModel<T>::init(std::uint64_t seed) const {
  Rng rng(seed);
  const std::size_t p = config_.proj_dim;
  const std::size_t tokens = config_.token_count();
  Params params;
  for (const auto& s : config_.sources) {
    params.source_names.push_back(s.name);
    params.source_proj.push_back(init_linear<T>(rng, s.dim, p));
  }
  if (config_.use_attention) {
    AttentionParams<T> a;
    a.qkv_weight = he_uniform<T>(rng, 1, 3);
    if (config_.qkv_bias) a.qkv_bias = BasicTensor<T>({3});
    a.out_weight = he_uniform<T>(rng, 1, 1);
    a.out_bias = BasicTensor<T>({1});
    params.attention = std::move(a);
  }
  params.norm_gamma = BasicTensor<T>({tokens}, T{1});
  params.norm_beta = BasicTensor<T>({tokens});
  params.proj_head = init_linear<T>(rng, tokens, p);
  params.classifier = init_linear<T>(rng, p, config_.num_classes);
  params.stamp = ParamStamp::fresh();
  return params;
}

template <typename T>
void DvmeModel<T>::check_inputs(std::span<const BasicTensor<T>> inputs) const {
  if (inputs.size() != config_.sources.size()) {
    throw DimensionError("DVME expects " + std::to_string(config_.sources.size()) +
                         " source inputs, got " + std::to_string(inputs.size()));
  }
  const std::size_t batch = inputs.empty() ? 0 : inputs[0].rows();
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto& x = inputs[s];
    if (x.rank() != 2 || x.rows() != batch || x.cols() != config_.sources[s].dim) {
      throw DimensionError("source '" + config_.sources[s].name + "' input has shape " +
                           shape_string(x.shape()) + ", expected (" + std::to_string(batch) +
                           "," + std::to_string(config_.sources[s].dim) + ")");
    }
    require_finite(x, "source '" + config_.sources[s].name + "' input");
  }
  if (batch == 0) throw DimensionError("DVME forward on an empty batch");
}

template <typename T>
BasicTensor<T> DvmeModel<T>::project(const Params& params,
                                     std::span<const BasicTensor<T>> inputs) const {
  const std::size_t batch = inputs[0].rows();
  const std::size_t p = config_.proj_dim;
  const std::size_t tokens = config_.token_count();
  BasicTensor<T> meta({batch, tokens});
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto y = nn::linear_forward(inputs[s], params.source_proj[s].weight,
                                      params.source_proj[s].bias);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(y.data() + b * p, p, meta.data() + b * tokens + s * p);
    }
  }
  return meta;
}

template <typename T>
typename DvmeModel<T>::Forward DvmeModel<T>::forward(const Params& params,
                                                     std::span<const BasicTensor<T>> inputs,
                                                     nn::Mode mode,
                                                     CounterStream& dropout_stream) const {
  check_inputs(inputs);
  if (params.attention.has_value() != config_.use_attention) {
    throw ConfigError("parameters do not match the configured attention variant");
  }
  Forward f;
  auto& c = f.cache;
  c.stamp = params.stamp;
  c.batch = inputs[0].rows();
  c.inputs.assign(inputs.begin(), inputs.end());
  c.tokens = project(params, inputs);

  const std::size_t batch = c.batch;
  const std::size_t tokens = config_.token_count();
  const BasicTensor<T>* normed_input = &c.tokens;
  BasicTensor<T> attn_y;
  if (params.attention) {
    const auto& a = *params.attention;
    const T wq = a.qkv_weight[0], wk = a.qkv_weight[1], wv = a.qkv_weight[2];
    const T bq = a.qkv_bias.empty() ? T{0} : a.qkv_bias[0];
    const T bk = a.qkv_bias.empty() ? T{0} : a.qkv_bias[1];
    const T bv = a.qkv_bias.empty() ? T{0} : a.qkv_bias[2];
    const T wo = a.out_weight[0], bo = a.out_bias[0];
    c.q = BasicTensor<T>({batch, tokens});
    c.k = BasicTensor<T>({batch, tokens});
    c.v = BasicTensor<T>({batch, tokens});
    c.attn_out = BasicTensor<T>({batch, tokens});
    std::vector<T> weights(tokens);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto x = c.tokens.row(b);
      auto q = c.q.row(b), k = c.k.row(b), v = c.v.row(b), o = c.attn_out.row(b);
      for (std::size_t t = 0; t < tokens; ++t) {
        q[t] = wq * x[t] + bq;
        k[t] = wk * x[t] + bk;
        v[t] = wv * x[t] + bv;
      }
      const auto [kmin_it, kmax_it] = std::minmax_element(k.begin(), k.end());
      for (std::size_t r = 0; r < tokens; ++r) {
        const T sum = attention_row<T>(q[r], k, *kmin_it, *kmax_it, weights);
        T acc{0};
        for (std::size_t col = 0; col < tokens; ++col) acc += weights[col] * v[col];
        o[r] = acc / sum;
      }
    }
    // output projection (1 -> 1) applied per token; the pre-projection values stay cached
    attn_y = BasicTensor<T>({batch, tokens});
    for (std::size_t i = 0; i < c.attn_out.size(); ++i) attn_y[i] = wo * c.attn_out[i] + bo;
    normed_input = &attn_y;
  }

  auto ln = nn::layernorm_forward(*normed_input, params.norm_gamma, params.norm_beta);
  c.norm = std::move(ln.cache);
  c.normed = std::move(ln.y);
  BasicTensor<T> pre =
      nn::linear_forward(c.normed, params.proj_head.weight, params.proj_head.bias);
  auto drop = nn::dropout(nn::relu(pre), config_.dropout_p, mode, dropout_stream);
  c.hidden_pre = std::move(pre);
  c.dropout_mask = std::move(drop.mask);
  c.hidden = std::move(drop.y);
  f.logits =
      nn::linear_forward(c.hidden, params.classifier.weight, params.classifier.bias);
  return f;
}

template <typename T>
typename DvmeModel<T>::Forward DvmeModel<T>::forward_eval(
    const Params& params, std::span<const BasicTensor<T>> inputs) const {
  CounterStream unused;
  return forward(params, inputs, nn::Mode::eval, unused);
}

template <typename T>
typename DvmeModel<T>::Params DvmeModel<T>::backward(const Params& params, const Cache& c,
                                                     const BasicTensor<T>& dlogits) const {
  check_stamp<T>(c.stamp, params.stamp);
  if (dlogits.rank() != 2 || dlogits.rows() != c.batch ||
      dlogits.cols() != config_.num_classes) {
    throw DimensionError("dlogits shape " + shape_string(dlogits.shape()) +
                         " does not match the cached batch");
  }
  Params g = params.zeros_like();
  const std::size_t batch = c.batch;
  const std::size_t tokens = config_.token_count();
  const std::size_t p = config_.proj_dim;

  auto cls = nn::linear_backward(c.hidden, params.classifier.weight, dlogits);
  g.classifier.weight = std::move(cls.dw);
  g.classifier.bias = std::move(cls.db);

  BasicTensor<T> dpre = nn::relu_backward(c.hidden_pre, nn::dropout_backward(c.dropout_mask, cls.dx));
  auto head = nn::linear_backward(c.normed, params.proj_head.weight, dpre);
  g.proj_head.weight = std::move(head.dw);
  g.proj_head.bias = std::move(head.db);

  auto ln = nn::layernorm_backward(c.norm, params.norm_gamma, head.dx);
  g.norm_gamma = std::move(ln.dgamma);
  g.norm_beta = std::move(ln.dbeta);

  BasicTensor<T> dtokens;
  if (params.attention) {
    const auto& a = *params.attention;
    auto& ga = *g.attention;
    const T wq = a.qkv_weight[0], wk = a.qkv_weight[1], wv = a.qkv_weight[2];
    const T wo = a.out_weight[0];
    dtokens = BasicTensor<T>({batch, tokens});
    std::vector<T> weights(tokens), dq(tokens), dk(tokens), dv(tokens);
    T dwq{0}, dwk{0}, dwv{0}, dbq{0}, dbk{0}, dbv{0}, dwo{0}, dbo{0};
    for (std::size_t b = 0; b < batch; ++b) {
      const auto x = c.tokens.row(b);
      const auto q = c.q.row(b), k = c.k.row(b), v = c.v.row(b), o = c.attn_out.row(b);
      const auto dy = ln.dx.row(b);
      std::fill(dq.begin(), dq.end(), T{0});
      std::fill(dk.begin(), dk.end(), T{0});
      std::fill(dv.begin(), dv.end(), T{0});
      const auto [kmin_it, kmax_it] = std::minmax_element(k.begin(), k.end());
      for (std::size_t r = 0; r < tokens; ++r) {
        dwo += dy[r] * o[r];
        dbo += dy[r];
        const T dout = dy[r] * wo;
        const T sum = attention_row<T>(q[r], k, *kmin_it, *kmax_it, weights);
        const T inv = T{1} / sum;
        T dqr{0};
        for (std::size_t col = 0; col < tokens; ++col) {
          const T w = weights[col] * inv;
          dv[col] += w * dout;
          // softmax Jacobian: dS = A * (dA - sum_c A dA), with dA = dout * v
          const T ds = w * dout * (v[col] - o[r]);
          dqr += ds * k[col];
          dk[col] += ds * q[r];
        }
        dq[r] = dqr;
      }
      auto dx = dtokens.row(b);
      for (std::size_t t = 0; t < tokens; ++t) {
        dwq += dq[t] * x[t];
        dwk += dk[t] * x[t];
        dwv += dv[t] * x[t];
        dbq += dq[t];
        dbk += dk[t];
        dbv += dv[t];
        dx[t] = dq[t] * wq + dk[t] * wk + dv[t] * wv;
      }
    }
    ga.qkv_weight[0] = dwq;
    ga.qkv_weight[1] = dwk;
    ga.qkv_weight[2] = dwv;
    if (!ga.qkv_bias.empty()) {
      ga.qkv_bias[0] = dbq;
      ga.qkv_bias[1] = dbk;
      ga.qkv_bias[2] = dbv;
    }
    ga.out_weight[0] = dwo;
    ga.out_bias[0] = dbo;
  } else {
    dtokens = std::move(ln.dx);
  }

  for (std::size_t s = 0; s < c.inputs.size(); ++s) {
    BasicTensor<T> dys({batch, p});
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(dtokens.data() + b * tokens + s * p, p, dys.data() + b * p);
    }
    auto lg = nn::linear_backward(c.inputs[s], params.source_proj[s].weight, dys,
                                  /*need_dx=*/false);
    g.source_proj[s].weight = std::move(lg.dw);
    g.source_proj[s].bias = std::move(lg.db);
  }
  return g;
}

template <typename T>
TensorD DvmeModel<T>::attention_matrix(const Params& params,
                                       std::span<const BasicTensor<T>> inputs,
                                       std::size_t sample) const {
  if (!params.attention) throw ConfigError("attention matrix requested on a model without attention");
  check_inputs(inputs);
  if (sample >= inputs[0].rows()) throw DimensionError("sample index out of range");
  const BasicTensor<T> meta = project(params, inputs);
  const auto& a = *params.attention;
  const std::size_t tokens = config_.token_count();
  const T bq = a.qkv_bias.empty() ? T{0} : a.qkv_bias[0];
  const T bk = a.qkv_bias.empty() ? T{0} : a.qkv_bias[1];
  std::vector<T> q(tokens), k(tokens), weights(tokens);
  const auto x = meta.row(sample);
  for (std::size_t t = 0; t < tokens; ++t) {
    q[t] = a.qkv_weight[0] * x[t] + bq;
    k[t] = a.qkv_weight[1] * x[t] + bk;
  }
  const auto [kmin_it, kmax_it] = std::minmax_element(k.begin(), k.end());
  TensorD out({tokens, tokens});
  for (std::size_t r = 0; r < tokens; ++r) {
    const T sum = attention_row<T>(q[r], k, *kmin_it, *kmax_it, weights);
    for (std::size_t col = 0; col < tokens; ++col) {
      out(r, col) = static_cast<double>(weights[col] / sum);
    }
  }
  return out;
}

template <typename T>
AttentionSummary DvmeModel<T>::attention_summary(const Params& params,
                                                 const EmbeddingDataset& data,
                                                 std::span<const std::size_t> indices,
                                                 std::size_t batch_size) const {
  if (!config_.use_attention || !params.attention) {
    throw ConfigError("attention summary requires the attention variant");
  }
  if (indices.empty()) throw ConfigError("attention summary over an empty sample set");
  const std::size_t k_src = config_.sources.size();
  const std::size_t p = config_.proj_dim;
  const std::size_t tokens = config_.token_count();
  std::vector<std::size_t> columns;
  for (const auto& s : config_.sources) columns.push_back(data.source_index(s.name));

  const auto& a = *params.attention;
  const T bq = a.qkv_bias.empty() ? T{0} : a.qkv_bias[0];
  const T bk = a.qkv_bias.empty() ? T{0} : a.qkv_bias[1];
  AttentionSummary summary;
  summary.sources = input_sources();
  summary.matrix = TensorD({k_src, k_src});
  std::vector<T> q(tokens), k(tokens), weights(tokens);
  std::vector<double> block_mass(k_src);
  if (batch_size == 0) batch_size = 64;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    std::vector<BasicTensor<T>> inputs;
    for (std::size_t col : columns) {
      if constexpr (std::is_same_v<T, float>) {
        inputs.push_back(data.gather(col, chunk));
      } else {
        inputs.push_back(data.gather(col, chunk).template cast<T>());
      }
    }
    check_inputs(inputs);
    const BasicTensor<T> meta = project(params, inputs);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto x = meta.row(b);
      for (std::size_t t = 0; t < tokens; ++t) {
        q[t] = a.qkv_weight[0] * x[t] + bq;
        k[t] = a.qkv_weight[1] * x[t] + bk;
      }
      const auto [kmin_it, kmax_it] = std::minmax_element(k.begin(), k.end());
      for (std::size_t r = 0; r < tokens; ++r) {
        const T sum = attention_row<T>(q[r], k, *kmin_it, *kmax_it, weights);
        std::fill(block_mass.begin(), block_mass.end(), 0.0);
        for (std::size_t col = 0; col < tokens; ++col) {
          block_mass[col / p] += static_cast<double>(weights[col] / sum);
        }
        const std::size_t i = r / p;
        for (std::size_t j = 0; j < k_src; ++j) summary.matrix(i, j) += block_mass[j];
      }
    }
  }
  const double denom = static_cast<double>(p) * static_cast<double>(indices.size());
  for (double& v : summary.matrix.values()) v /= denom;
  summary.sample_count = indices.size();
  return summary;
}

// ---------------------------------------------------------------------------
// ProbeModel

template <typename T>
ProbeModel<T>::ProbeModel(SourceSpec source, std::uint32_t num_classes)
    : source_(std::move(source)), num_classes_(num_classes) {
  if (source_.dim == 0) throw ConfigError("probe source has zero dimension");
  if (num_classes_ < 2) throw ConfigError("num_classes must be at least 2");
}

template <typename T>
typename ProbeModel<T>::Params ProbeModel<T>::init(std::uint64_t seed) const {
  Rng rng(seed);
  return {init_linear<T>(rng, source_.dim, num_classes_), ParamStamp::fresh()};
}

template <typename T>
typename ProbeModel<T>::Forward ProbeModel<T>::forward(const Params& params,
                                                       std::span<const BasicTensor<T>> inputs,
                                                       nn::Mode, CounterStream&) const {
  if (inputs.size() != 1) throw DimensionError("probe expects exactly one input source");
  const auto& x = inputs[0];
  if (x.rank() != 2 || x.cols() != source_.dim || x.rows() == 0) {
    throw DimensionError("probe input shape " + shape_string(x.shape()) + ", expected (B," +
                         std::to_string(source_.dim) + ")");
  }
  require_finite(x, "probe input");
  Forward f;
  f.logits = nn::linear_forward(x, params.linear.weight, params.linear.bias);
  f.cache = {params.stamp, x};
  return f;
}

template <typename T>
typename ProbeModel<T>::Forward ProbeModel<T>::forward_eval(
    const Params& params, std::span<const BasicTensor<T>> inputs) const {
  CounterStream unused;
  return forward(params, inputs, nn::Mode::eval, unused);
}

template <typename T>
typename ProbeModel<T>::Params ProbeModel<T>::backward(const Params& params, const Cache& cache,
                                                       const BasicTensor<T>& dlogits) const {
  check_stamp<T>(cache.stamp, params.stamp);
  auto lg = nn::linear_backward(cache.input, params.linear.weight, dlogits, /*need_dx=*/false);
  return {{std::move(lg.dw), std::move(lg.db)}, params.stamp};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'V', 'M', 'W'};

void write_config(io::ByteWriter& w, const DvmeConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.sources.size()));
  for (const auto& s : c.sources) {
    w.short_string(s.name);
    w.u32(s.dim);
  }
  w.u32(c.proj_dim);
  w.u32(c.num_classes);
  w.f64(c.dropout_p);
  w.u8(c.use_attention ? 1 : 0);
  w.u32(c.attention_heads);
  w.u8(c.qkv_bias ? 1 : 0);
}

DvmeConfig read_config(io::ByteReader& r) {
  DvmeConfig c;
  c.sources.clear();
  const std::uint32_t k = r.u32();
  if (k > r.remaining()) throw TruncationError("checkpoint source table runs past end of file");
  for (std::uint32_t i = 0; i < k; ++i) {
    SourceSpec s;
    s.name = r.short_string();
    s.dim = r.u32();
    c.sources.push_back(std::move(s));
  }
  c.proj_dim = r.u32();
  c.num_classes = r.u32();
  c.dropout_p = r.f64();
  c.use_attention = r.u8() != 0;
  c.attention_heads = r.u32();
  c.qkv_bias = r.u8() != 0;
  return c;
}
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const DvmeConfig& config,
                                            const DvmeParams<float>& params) {
  io::ByteWriter w;
  for (char ch : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  write_config(w, config);
  const auto refs = params.tensors();
  w.u32(static_cast<std::uint32_t>(refs.size()));
  for (const auto& r : refs) {
    w.short_string(r.name);
    w.u32(static_cast<std::uint32_t>(r.tensor->rank()));
    for (std::size_t d : r.tensor->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : r.tensor->values()) w.f32(v);
  }
  w.append_crc();
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin(),
                                      [](char a, std::uint8_t b) {
                                        return static_cast<std::uint8_t>(a) == b;
                                      })) {
    throw MagicError("not a DVME checkpoint: bad magic");
  }
  io::verify_trailing_crc(bytes, "checkpoint");
  io::ByteReader r(bytes.subspan(4, bytes.size() - 8));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = read_config(r);
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  // Build the expected layout from the config, then fill it by name and shape.
  ck.params = DvmeModel<float>(ck.config).init(0);
  auto refs = ck.params.tensors();
  const std::uint32_t count = r.u32();
  if (count != refs.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(refs.size()));
  }
  for (auto& ref : refs) {
    const std::string name = r.short_string();
    if (name != ref.name) throw FormatError("expected tensor " + ref.name + ", found " + name);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    if (shape != ref.tensor->shape()) {
      throw FormatError("tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                        shape_string(ref.tensor->shape()));
    }
    for (float& v : ref.tensor->values()) v = r.f32();
  }
  if (r.remaining() != 0) throw FormatError("unexpected trailing bytes in checkpoint");
  ck.params.stamp = ParamStamp::fresh();
  return ck;
}

void save_checkpoint(const std::string& path, const DvmeConfig& config,
                     const DvmeParams<float>& params) {
  io::write_file(path, encode_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

template struct DvmeParams<float>;
template struct DvmeParams<double>;
template class DvmeModel<float>;
template class DvmeModel<double>;
template class ProbeModel<float>;
template class ProbeModel<double>;

}  // namespace dvme
