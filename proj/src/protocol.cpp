#include "dvme/protocol.hpp"

namespace dvme {

FoldPlan plan_for(const EmbeddingDataset& data, const CvOptions& options) {
  std::span<const std::int64_t> groups;
  if (data.group_ids) groups = *data.group_ids;
  return make_folds(data.labels, groups, data.num_classes, options.subtask, options.train.seed,
                    options.k);
}

std::vector<CvResult<ProbeModel<float>>> run_probe_cv(const EmbeddingDataset& data,
                                                      const std::vector<std::string>& names,
                                                      const CvOptions& options) {
  std::vector<std::size_t> columns;
  if (names.empty()) {
    for (std::size_t s = 0; s < data.sources.size(); ++s) columns.push_back(s);
  } else {
    for (const auto& n : names) columns.push_back(data.source_index(n));
  }
  std::vector<CvResult<ProbeModel<float>>> out;
  for (std::size_t s : columns) {
    ProbeModel<float> probe(data.sources[s], data.num_classes);
    out.push_back(run_cv(probe, data, options));
  }
  return out;
}

DvmeConfig config_for(const EmbeddingDataset& data, const DvmeConfig& base) {
  DvmeConfig cfg = base;
  cfg.sources = data.sources;
  cfg.num_classes = data.num_classes;
  return cfg;
}

CvResult<DvmeModel<float>> run_dvme_cv(const EmbeddingDataset& data, DvmeConfig config,
                                       const CvOptions& options) {
  if (config.sources != data.sources) {
    throw DimensionError("fusion config sources do not match the dataset");
  }
  if (config.num_classes != data.num_classes) {
    throw DimensionError("fusion config has " + std::to_string(config.num_classes) +
                         " classes, dataset has " + std::to_string(data.num_classes));
  }
  DvmeModel<float> model(std::move(config));
  return run_cv(model, data, options);
}

}  // namespace dvme
