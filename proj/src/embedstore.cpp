#include "dvme/embedstore.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dvme/binary_io.hpp"

namespace dvme {

namespace {

constexpr std::uint8_t kMagic[4] = {0x44, 0x56, 0x4D, 0x45};  // "DVME"

void check_structure(const EmbeddingDataset& ds) {
  if (ds.features.size() != ds.sources.size()) {
    throw ConfigError("dataset has " + std::to_string(ds.features.size()) +
                      " feature blocks for " + std::to_string(ds.sources.size()) + " sources");
  }
  for (std::size_t s = 0; s < ds.sources.size(); ++s) {
    if (ds.features[s].size() != ds.size() * ds.sources[s].dim) {
      throw DimensionError("source '" + ds.sources[s].name + "' holds " +
                           std::to_string(ds.features[s].size()) + " values, expected " +
                           std::to_string(ds.size()) + " x " +
                           std::to_string(ds.sources[s].dim));
    }
  }
  if (ds.group_ids && ds.group_ids->size() != ds.size()) {
    throw DimensionError("group id count does not match sample count");
  }
}

struct ParsedHeader {
  EmbxHeader header;
  std::size_t records_offset = 0;
};

ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw MagicError("not an EMBX file: bad magic");
  }
  io::ByteReader r(bytes.subspan(4));
  ParsedHeader p;
  auto& h = p.header;
  h.version = r.u32();
  if (h.version != kEmbxVersion) {
    throw VersionError("unsupported EMBX version " + std::to_string(h.version));
  }
  const std::uint32_t k = r.u32();
  if (k > r.remaining()) throw TruncationError("source table runs past end of file");
  for (std::uint32_t i = 0; i < k; ++i) {
    SourceSpec s;
    s.name = r.short_string();
    s.dim = r.u32();
    h.sources.push_back(std::move(s));
  }
  h.num_classes = r.u32();
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw FormatError("has_group_ids flag must be 0 or 1");
  h.has_group_ids = flag == 1;
  h.count = r.u64();
  p.records_offset = 4 + r.position();
  return p;
}

// Bytes taken by the N records; throws TruncationError when the file is too short.
std::size_t checked_record_bytes(const EmbxHeader& h, std::size_t available) {
  std::uint64_t per_record = 2 + (h.has_group_ids ? 8 : 0);
  for (const auto& s : h.sources) per_record += 4ull * s.dim;
  if (h.count > 0 && per_record > 0 && h.count > available / per_record) {
    throw TruncationError("file holds fewer than the declared " + std::to_string(h.count) +
                          " records");
  }
  return static_cast<std::size_t>(h.count * per_record);
}

}  // namespace

std::size_t EmbeddingDataset::source_index(const std::string& name) const {
  std::string known;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].name == name) return i;
    known += (i ? ", " : "") + sources[i].name;
  }
  throw ConfigError("unknown source '" + name + "' (available: " + known + ")");
}

Tensor EmbeddingDataset::gather(std::size_t source, std::span<const std::size_t> indices) const {
  const std::size_t d = sources.at(source).dim;
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = feature(source, indices[i]);
    std::copy(src.begin(), src.end(), out.data() + i * d);
  }
  return out;
}

std::vector<int> EmbeddingDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

const char* to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::dim_mismatch: return "dim_mismatch";
    case Violation::Kind::non_finite: return "non_finite";
    case Violation::Kind::label_range: return "label_range";
    case Violation::Kind::class_absent: return "class_absent";
    case Violation::Kind::empty: return "empty";
    case Violation::Kind::structure: return "structure";
  }
  return "unknown";
}

std::vector<Violation> validate(const EmbeddingDataset& ds) {
  using K = Violation::Kind;
  std::vector<Violation> out;
  const std::size_t n = ds.size();
  if (n == 0) out.push_back({K::empty, {}, {}, "dataset has no samples"});
  if (ds.features.size() != ds.sources.size()) {
    out.push_back({K::structure, {}, {}, "feature block count differs from source count"});
    return out;
  }
  if (ds.group_ids && ds.group_ids->size() != n) {
    out.push_back({K::structure, {}, {}, "group id count differs from sample count"});
  }
  std::vector<bool> dims_ok(ds.sources.size(), true);
  for (std::size_t s = 0; s < ds.sources.size(); ++s) {
    if (ds.features[s].size() != n * ds.sources[s].dim) {
      dims_ok[s] = false;
      out.push_back({K::dim_mismatch, {}, s,
                     "source '" + ds.sources[s].name + "' holds " +
                         std::to_string(ds.features[s].size()) + " values, expected " +
                         std::to_string(n) + " x " + std::to_string(ds.sources[s].dim)});
    }
  }
  std::vector<std::size_t> class_counts(ds.num_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = ds.labels[i];
    if (y < 0 || static_cast<std::uint32_t>(y) >= ds.num_classes) {
      out.push_back({K::label_range, i, {},
                     "sample " + std::to_string(i) + " has label " + std::to_string(y) +
                         " outside [0, " + std::to_string(ds.num_classes) + ")"});
    } else {
      ++class_counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t s = 0; s < ds.sources.size(); ++s) {
      if (!dims_ok[s]) continue;
      for (float v : ds.feature(s, i)) {
        if (!std::isfinite(v)) {
          out.push_back({K::non_finite, i, s,
                         "sample " + std::to_string(i) + " source '" + ds.sources[s].name +
                             "' contains a non-finite value"});
          break;
        }
      }
    }
  }
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (n > 0 && class_counts[c] == 0) {
      out.push_back({K::class_absent, {}, {}, "class " + std::to_string(c) + " has no samples"});
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_embx(const EmbeddingDataset& ds) {
  check_structure(ds);
  io::ByteWriter w;
  for (std::uint8_t b : kMagic) w.u8(b);
  w.u32(kEmbxVersion);
  w.u32(static_cast<std::uint32_t>(ds.sources.size()));
  for (const auto& s : ds.sources) {
    w.short_string(s.name);
    w.u32(s.dim);
  }
  w.u32(ds.num_classes);
  w.u8(ds.group_ids ? 1 : 0);
  w.u64(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = ds.labels[i];
    if (y < 0 || y > 0xFFFF) {
      throw ConfigError("label " + std::to_string(y) + " does not fit the u16 label field");
    }
    w.u16(static_cast<std::uint16_t>(y));
    if (ds.group_ids) w.i64((*ds.group_ids)[i]);
    for (std::size_t s = 0; s < ds.sources.size(); ++s) {
      for (float v : ds.feature(s, i)) w.f32(v);
    }
  }
  w.append_crc();
  return w.take();
}

EmbxHeader inspect_embx(std::span<const std::uint8_t> bytes) {
  auto p = parse_header(bytes);
  const std::size_t record_bytes = checked_record_bytes(p.header, bytes.size() - p.records_offset);
  const std::size_t expected = p.records_offset + record_bytes + 4;
  if (bytes.size() < expected) throw TruncationError("missing CRC trailer");
  io::verify_trailing_crc(bytes.first(expected), "EMBX");
  if (bytes.size() != expected) {
    throw FormatError("EMBX file has " + std::to_string(bytes.size() - expected) +
                      " unexpected trailing bytes");
  }
  io::ByteReader tail(bytes.subspan(expected - 4, 4));
  p.header.crc = tail.u32();
  return p.header;
}

EmbeddingDataset decode_embx(std::span<const std::uint8_t> bytes) {
  const EmbxHeader h = inspect_embx(bytes);
  EmbeddingDataset ds;
  ds.sources = h.sources;
  ds.num_classes = h.num_classes;
  const std::size_t n = static_cast<std::size_t>(h.count);
  ds.labels.resize(n);
  if (h.has_group_ids) ds.group_ids.emplace(n);
  ds.features.resize(h.sources.size());
  for (std::size_t s = 0; s < h.sources.size(); ++s) {
    ds.features[s].resize(n * h.sources[s].dim);
  }
  io::ByteReader r(bytes.subspan(parse_header(bytes).records_offset));
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = r.u16();
    if (h.has_group_ids) (*ds.group_ids)[i] = r.i64();
    for (std::size_t s = 0; s < h.sources.size(); ++s) {
      float* dst = ds.features[s].data() + i * h.sources[s].dim;
      for (std::uint32_t j = 0; j < h.sources[s].dim; ++j) dst[j] = r.f32();
    }
  }
  return ds;
}

void write_embx(const EmbeddingDataset& dataset, const std::string& path) {
  io::write_file(path, encode_embx(dataset));
}

EmbeddingDataset read_embx(const std::string& path) { return decode_embx(io::read_file(path)); }

std::string manifest_path_for(const std::string& embx_path) { return embx_path + ".manifest.json"; }

void write_manifest(const Manifest& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["dataset_name"] = m.dataset_name;
  j["source_models"] = m.source_models;
  j["notes"] = m.notes;
  j["generator"] = m.generator_json.empty() ? nlohmann::ordered_json()
                                            : nlohmann::ordered_json::parse(m.generator_json);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + path + ": " + e.what());
  }
  Manifest m;
  m.dataset_name = j.value("dataset_name", "");
  m.source_models = j.value("source_models", std::vector<std::string>{});
  m.notes = j.value("notes", "");
  if (j.contains("generator") && !j["generator"].is_null()) m.generator_json = j["generator"].dump();
  return m;
}

}  // namespace dvme
