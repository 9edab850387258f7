#pragma once

// DVME fusion head and single-source linear probes.
//
// Forward graph of the fusion head for a batch of B samples and K sources:
//
//   x_s [B x d_s] --proj_s--> [B x P]  (per source)
//   concat -> [B x K*P] viewed as K*P scalar tokens per sample
//   single-head self-attention over the tokens (head dim 1, scale 1)   [optional]
//   layernorm(K*P) -> proj_head [B x P] -> relu -> dropout -> classifier [B x C]
//
// With attention disabled the concatenated projections feed the layernorm directly.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvme/embedstore.hpp"
#include "dvme/numerics.hpp"
#include "dvme/rng.hpp"
#include "dvme/tensor.hpp"

namespace dvme {

struct DvmeConfig {
  std::vector<SourceSpec> sources = {{"simclr", 2048}, {"swav", 2048}, {"dino", 1536}};
  std::uint32_t proj_dim = 512;
  std::uint32_t num_classes = 2;
  double dropout_p = 0.2;
  bool use_attention = true;
  std::uint32_t attention_heads = 1;
  bool qkv_bias = true;

  std::size_t token_count() const noexcept { return sources.size() * proj_dim; }
  void validate() const;

  friend bool operator==(const DvmeConfig&, const DvmeConfig&) = default;
};

// Trainable scalar count of the fusion head, from tensor sizes in closed form.
std::uint64_t count_params(const DvmeConfig& config);
std::uint64_t count_probe_params(std::uint64_t dim, std::uint64_t num_classes);

// Identifies which parameter values a forward cache was computed against.
struct ParamStamp {
  std::uint64_t identity = 0;
  std::uint64_t version = 0;

  static ParamStamp fresh();
  friend bool operator==(const ParamStamp&, const ParamStamp&) = default;
};

template <typename T>
struct NamedRef {
  std::string name;
  BasicTensor<T>* tensor;
};
template <typename T>
struct NamedConstRef {
  std::string name;
  const BasicTensor<T>* tensor;
};

template <typename T>
struct LinearParams {
  BasicTensor<T> weight;  // [in x out]
  BasicTensor<T> bias;    // [out]
};

template <typename T>
struct AttentionParams {
  BasicTensor<T> qkv_weight;  // [1 x 3]: columns q, k, v
  BasicTensor<T> qkv_bias;    // [3], empty when the config disables qkv bias
  BasicTensor<T> out_weight;  // [1 x 1]
  BasicTensor<T> out_bias;    // [1]
};

template <typename T>
struct DvmeParams {
  std::vector<std::string> source_names;
  std::vector<LinearParams<T>> source_proj;
  std::optional<AttentionParams<T>> attention;
  BasicTensor<T> norm_gamma;
  BasicTensor<T> norm_beta;
  LinearParams<T> proj_head;
  LinearParams<T> classifier;
  ParamStamp stamp;

  // Every trainable tensor in a fixed order; this order is also the checkpoint order.
  std::vector<NamedRef<T>> tensors();
  std::vector<NamedConstRef<T>> tensors() const;

  DvmeParams zeros_like() const;
  std::uint64_t scalar_count() const;

  template <typename U>
  DvmeParams<U> cast() const;

  void mark_updated() noexcept { ++stamp.version; }
};

template <typename T>
struct ProbeParams {
  LinearParams<T> linear;
  ParamStamp stamp;

  std::vector<NamedRef<T>> tensors() { return {{"linear.weight", &linear.weight},
                                               {"linear.bias", &linear.bias}}; }
  std::vector<NamedConstRef<T>> tensors() const {
    return {{"linear.weight", &linear.weight}, {"linear.bias", &linear.bias}};
  }
  ProbeParams zeros_like() const {
    return {{BasicTensor<T>(linear.weight.shape()), BasicTensor<T>(linear.bias.shape())}, stamp};
  }
  void mark_updated() noexcept { ++stamp.version; }
};

template <typename T>
struct DvmeCache {
  ParamStamp stamp;
  std::size_t batch = 0;
  std::vector<BasicTensor<T>> inputs;  // per source [B x d_s]
  BasicTensor<T> tokens;               // [B x K*P] concatenated projections
  BasicTensor<T> q, k, v, attn_out;    // [B x K*P] when attention is on
  nn::LayerNormCache<T> norm;
  BasicTensor<T> normed;        // layernorm output
  BasicTensor<T> hidden_pre;    // proj_head output before relu
  BasicTensor<T> dropout_mask;  // empty in eval mode
  BasicTensor<T> hidden;        // classifier input
};

template <typename T>
struct DvmeForward {
  BasicTensor<T> logits;
  DvmeCache<T> cache;
};

// Block-averaged token attention: entry (i, j) is the mean over query tokens
// of source block i of the attention mass placed on key tokens of block j,
// averaged over samples.
struct AttentionSummary {
  std::vector<std::string> sources;
  TensorD matrix;  // [K x K]
  std::size_t sample_count = 0;
};

template <typename T>
class DvmeModel {
 public:
  using Scalar = T;
  using Params = DvmeParams<T>;
  using Cache = DvmeCache<T>;
  using Forward = DvmeForward<T>;

  explicit DvmeModel(DvmeConfig config);

  const DvmeConfig& config() const noexcept { return config_; }
  std::uint32_t num_classes() const noexcept { return config_.num_classes; }
  std::vector<std::string> input_sources() const;

  // He-uniform weights (bound sqrt(6 / fan_in)), zero biases, gamma = 1, beta = 0.
  Params init(std::uint64_t seed) const;

  Forward forward(const Params& params, std::span<const BasicTensor<T>> inputs, nn::Mode mode,
                  CounterStream& dropout_stream) const;
  Forward forward_eval(const Params& params, std::span<const BasicTensor<T>> inputs) const;

  // Gradients in the layout of Params. Inputs are constants: no gradient is produced for them.
  Params backward(const Params& params, const Cache& cache, const BasicTensor<T>& dlogits) const;

  // Full post-softmax token attention matrix for one sample ([K*P x K*P]).
  TensorD attention_matrix(const Params& params, std::span<const BasicTensor<T>> inputs,
                           std::size_t sample) const;

  AttentionSummary attention_summary(const Params& params, const EmbeddingDataset& data,
                                     std::span<const std::size_t> indices,
                                     std::size_t batch_size = 64) const;

 private:
  void check_inputs(std::span<const BasicTensor<T>> inputs) const;
  BasicTensor<T> project(const Params& params, std::span<const BasicTensor<T>> inputs) const;

  DvmeConfig config_;
};

template <typename T>
struct ProbeCache {
  ParamStamp stamp;
  BasicTensor<T> input;
};

template <typename T>
struct ProbeForward {
  BasicTensor<T> logits;
  ProbeCache<T> cache;
};

// Linear layer on one frozen embedding source.
template <typename T>
class ProbeModel {
 public:
  using Scalar = T;
  using Params = ProbeParams<T>;
  using Cache = ProbeCache<T>;
  using Forward = ProbeForward<T>;

  ProbeModel(SourceSpec source, std::uint32_t num_classes);

  std::uint32_t num_classes() const noexcept { return num_classes_; }
  const SourceSpec& source() const noexcept { return source_; }
  std::vector<std::string> input_sources() const { return {source_.name}; }

  Params init(std::uint64_t seed) const;
  Forward forward(const Params& params, std::span<const BasicTensor<T>> inputs, nn::Mode mode,
                  CounterStream& dropout_stream) const;
  Forward forward_eval(const Params& params, std::span<const BasicTensor<T>> inputs) const;
  Params backward(const Params& params, const Cache& cache, const BasicTensor<T>& dlogits) const;

 private:
  SourceSpec source_;
  std::uint32_t num_classes_;
};

// Checkpoint file ("DVMW"): magic, u32 version, serialized config (dropout as
// f64), u32 tensor count, tensors as (u16 name len, name, u32 rank, u32 dims,
// f32 payload), trailing CRC32 of all preceding bytes. Little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DvmeConfig config;
  DvmeParams<float> params;
};

std::vector<std::uint8_t> encode_checkpoint(const DvmeConfig& config,
                                            const DvmeParams<float>& params);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const DvmeConfig& config,
                     const DvmeParams<float>& params);
Checkpoint load_checkpoint(const std::string& path);

// Value equality of every tensor (stamps ignored).
template <typename T>
bool same_values(const DvmeParams<T>& a, const DvmeParams<T>& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || !(*ta[i].tensor == *tb[i].tensor)) return false;
  }
  return true;
}

template <typename T>
template <typename U>
DvmeParams<U> DvmeParams<T>::cast() const {
  auto cast_linear = [](const LinearParams<T>& l) {
    return LinearParams<U>{l.weight.template cast<U>(), l.bias.template cast<U>()};
  };
  DvmeParams<U> out;
  out.source_names = source_names;
  for (const auto& p : source_proj) out.source_proj.push_back(cast_linear(p));
  if (attention) {
    out.attention = AttentionParams<U>{
        attention->qkv_weight.template cast<U>(), attention->qkv_bias.template cast<U>(),
        attention->out_weight.template cast<U>(), attention->out_bias.template cast<U>()};
  }
  out.norm_gamma = norm_gamma.template cast<U>();
  out.norm_beta = norm_beta.template cast<U>();
  out.proj_head = cast_linear(proj_head);
  out.classifier = cast_linear(classifier);
  out.stamp = ParamStamp::fresh();
  return out;
}

extern template struct DvmeParams<float>;
extern template struct DvmeParams<double>;
extern template class DvmeModel<float>;
extern template class DvmeModel<double>;
extern template class ProbeModel<float>;
extern template class ProbeModel<double>;

}  // namespace dvme
