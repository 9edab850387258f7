#pragma once

// Labeled multi-source embedding datasets and the EMBX v1 container.
//
// EMBX v1 layout, little-endian throughout:
//   "DVME" magic | u32 version (=1) | u32 K
//   K x { u16 name_len | name bytes (UTF-8) | u32 dim }
//   u32 num_classes | u8 has_group_ids | u64 N
//   N x { u16 label | i64 group_id (only if has_group_ids) | per source dim x f32 }
//   u32 CRC32 (IEEE) of every preceding byte

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvme/tensor.hpp"

namespace dvme {

inline constexpr std::uint32_t kEmbxVersion = 1;

struct SourceSpec {
  std::string name;
  std::uint32_t dim = 0;

  friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

struct EmbeddingDataset {
  std::vector<SourceSpec> sources;
  std::uint32_t num_classes = 0;
  std::vector<int> labels;
  std::optional<std::vector<std::int64_t>> group_ids;
  // One row-major N x dim block per source.
  std::vector<std::vector<float>> features;

  std::size_t size() const noexcept { return labels.size(); }

  // Index of the named source; throws ConfigError listing the known names.
  std::size_t source_index(const std::string& name) const;

  std::span<const float> feature(std::size_t source, std::size_t sample) const {
    const std::size_t d = sources[source].dim;
    return {features[source].data() + sample * d, d};
  }

  // Rows `indices` of one source as a [len x dim] tensor.
  Tensor gather(std::size_t source, std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

struct Violation {
  enum class Kind { dim_mismatch, non_finite, label_range, class_absent, empty, structure };
  Kind kind;
  std::optional<std::size_t> sample;
  std::optional<std::size_t> source;
  std::string message;
};

const char* to_string(Violation::Kind kind);

// Every problem found, in deterministic order; empty means the dataset is usable.
std::vector<Violation> validate(const EmbeddingDataset& dataset);

std::vector<std::uint8_t> encode_embx(const EmbeddingDataset& dataset);
EmbeddingDataset decode_embx(std::span<const std::uint8_t> bytes);

void write_embx(const EmbeddingDataset& dataset, const std::string& path);
EmbeddingDataset read_embx(const std::string& path);

// Header fields only, for inspection of files without decoding every record.
struct EmbxHeader {
  std::uint32_t version = 0;
  std::vector<SourceSpec> sources;
  std::uint32_t num_classes = 0;
  bool has_group_ids = false;
  std::uint64_t count = 0;
  std::uint32_t crc = 0;
};
EmbxHeader inspect_embx(std::span<const std::uint8_t> bytes);

// Informative sidecar next to an EMBX file; the binary file stays authoritative.
struct Manifest {
  std::string dataset_name;
  std::vector<std::string> source_models;
  std::string notes;
  std::string generator_json;  // serialized generator settings, if synthetic
};

std::string manifest_path_for(const std::string& embx_path);
void write_manifest(const Manifest& manifest, const std::string& path);
Manifest read_manifest(const std::string& path);

}  // namespace dvme
