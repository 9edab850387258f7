#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvme/embedstore.hpp"

namespace dvme {

enum class SynthMode {
  redundant,      // every source separates every class
  complementary,  // each source sees one binary split of the classes
};

const char* to_string(SynthMode mode);
SynthMode parse_synth_mode(const std::string& s);

struct SynthConfig {
  std::uint32_t num_classes = 4;
  std::vector<SourceSpec> sources = {{"simclr", 64}, {"swav", 64}, {"dino", 48}};
  std::uint32_t samples_per_class = 150;
  double sigma = 0.5;
  SynthMode mode = SynthMode::complementary;
  std::uint64_t seed = 0;
  // Consecutive same-class samples share a group id in chunks of this size; 0 = no groups.
  std::uint32_t group_size = 0;
};

// Class codes used in complementary mode: codes[c] bit s says which side of
// source s's split class c falls on. Even-parity codes are preferred so every
// source splits the classes and any single source leaves classes ambiguous.
std::vector<std::uint32_t> complementary_codes(std::uint32_t num_classes,
                                               std::size_t num_sources);

// Gaussian class-conditional embeddings. Class means lie on the unit sphere:
// redundant mode draws one mean per (source, class); complementary mode draws
// one direction u per source and places class c at +u or -u by its code bit, so
// the union of sources identifies the class while each source alone cannot.
EmbeddingDataset synth_generate(const SynthConfig& config);

std::string synth_config_json(const SynthConfig& config);

}  // namespace dvme
