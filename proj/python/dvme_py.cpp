#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dvme/embedstore.hpp"
#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"
#include "dvme/gradsuite.hpp"
#include "dvme/model.hpp"
#include "dvme/protocol.hpp"
#include "dvme/synth.hpp"

namespace py = pybind11;
using namespace dvme;

namespace {

std::vector<SourceSpec> to_sources(const std::vector<std::pair<std::string, std::uint32_t>>& in) {
  std::vector<SourceSpec> out;
  for (const auto& [name, dim] : in) out.push_back({name, dim});
  return out;
}

std::vector<std::pair<std::string, std::uint32_t>> from_sources(const std::vector<SourceSpec>& in) {
  std::vector<std::pair<std::string, std::uint32_t>> out;
  for (const auto& s : in) out.emplace_back(s.name, s.dim);
  return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

EmbeddingDataset make_dataset(const std::vector<std::pair<std::string, std::uint32_t>>& sources,
                              std::uint32_t num_classes, std::vector<int> labels,
                              const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& features,
                              std::optional<std::vector<std::int64_t>> group_ids) {
  EmbeddingDataset ds;
  ds.sources = to_sources(sources);
  ds.num_classes = num_classes;
  ds.labels = std::move(labels);
  ds.group_ids = std::move(group_ids);
  if (features.size() != ds.sources.size()) {
    throw DimensionError("expected one feature array per source");
  }
  for (const auto& a : features) {
    ds.features.emplace_back(a.data(), a.data() + a.size());
  }
  return ds;
}

py::array_t<float> feature_block(const EmbeddingDataset& ds, const std::string& name) {
  const std::size_t s = ds.source_index(name);
  const std::size_t d = ds.sources[s].dim;
  py::array_t<float> out({ds.size(), d});
  std::copy(ds.features[s].begin(), ds.features[s].end(), out.mutable_data());
  return out;
}

TensorD to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D probability array");
  TensorD t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::dict header_dict(const EmbxHeader& h) {
  py::dict d;
  d["version"] = h.version;
  d["sources"] = from_sources(h.sources);
  d["num_classes"] = h.num_classes;
  d["has_group_ids"] = h.has_group_ids;
  d["count"] = h.count;
  d["crc"] = h.crc;
  return d;
}

py::dict metric_dict(const MetricReport& m) {
  py::dict d;
  d["metric"] = m.metric;
  d["per_fold"] = m.per_fold;
  d["mean"] = m.mean;
  d["std"] = m.std;
  return d;
}

CvOptions cv_options(std::uint64_t seed, std::size_t folds, std::uint32_t max_epochs,
                     std::uint32_t min_epochs, const std::string& metric) {
  CvOptions opt;
  opt.k = folds;
  opt.train.seed = seed;
  opt.train.max_epochs = max_epochs;
  opt.train.min_epochs = min_epochs;
  opt.train.monitor = parse_metric(metric);
  return opt;
}

}  // namespace

PYBIND11_MODULE(_dvme, m) {
  m.doc() = "Multi-source embedding fusion toolkit: EMBX container, metrics, folds, models.";

  // Bases first: translators run newest first, so subclasses win.
  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", config_error.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<MagicError>(m, "MagicError", data_error.ptr());
  py::register_exception<VersionError>(m, "VersionError", data_error.ptr());
  py::register_exception<CrcError>(m, "CrcError", data_error.ptr());
  py::register_exception<TruncationError>(m, "TruncationError", data_error.ptr());
  py::register_exception<FormatError>(m, "FormatError", data_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", error.ptr());

  py::class_<EmbeddingDataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("sources"), py::arg("num_classes"), py::arg("labels"),
           py::arg("features"), py::arg("group_ids") = std::nullopt)
      .def_property_readonly("sources", [](const EmbeddingDataset& d) { return from_sources(d.sources); })
      .def_readonly("num_classes", &EmbeddingDataset::num_classes)
      .def_readonly("labels", &EmbeddingDataset::labels)
      .def_readonly("group_ids", &EmbeddingDataset::group_ids)
      .def("features", &feature_block, py::arg("source"))
      .def("__len__", &EmbeddingDataset::size)
      .def("__eq__", [](const EmbeddingDataset& a, const EmbeddingDataset& b) { return a == b; })
      .def("encode", [](const EmbeddingDataset& d) { return to_bytes(encode_embx(d)); })
      .def("validate", [](const EmbeddingDataset& d) {
        py::list out;
        for (const auto& v : validate(d)) {
          py::dict item;
          item["kind"] = to_string(v.kind);
          item["sample"] = v.sample;
          item["source"] = v.source;
          item["message"] = v.message;
          out.append(item);
        }
        return out;
      });

  m.def("decode_embx", [](const py::bytes& b) { return decode_embx(from_bytes(b)); });
  m.def("inspect_embx", [](const py::bytes& b) { return header_dict(inspect_embx(from_bytes(b))); });
  m.def("read_embx", &read_embx, py::arg("path"));
  m.def("write_embx", &write_embx, py::arg("dataset"), py::arg("path"));

  m.def(
      "synth",
      [](std::uint32_t num_classes, const std::vector<std::pair<std::string, std::uint32_t>>& sources,
         std::uint32_t samples_per_class, double sigma, const std::string& mode, std::uint64_t seed,
         std::uint32_t group_size) {
        SynthConfig c;
        c.num_classes = num_classes;
        c.sources = to_sources(sources);
        c.samples_per_class = samples_per_class;
        c.sigma = sigma;
        c.mode = parse_synth_mode(mode);
        c.seed = seed;
        c.group_size = group_size;
        return synth_generate(c);
      },
      py::arg("num_classes") = 4,
      py::arg("sources") = from_sources(SynthConfig{}.sources),
      py::arg("samples_per_class") = 150, py::arg("sigma") = 0.5,
      py::arg("mode") = "complementary", py::arg("seed") = 0, py::arg("group_size") = 0);

  m.def(
      "count_params",
      [](const std::vector<std::pair<std::string, std::uint32_t>>& sources, std::uint32_t proj_dim,
         std::uint32_t num_classes, bool use_attention, bool qkv_bias) {
        DvmeConfig c;
        c.sources = to_sources(sources);
        c.proj_dim = proj_dim;
        c.num_classes = num_classes;
        c.use_attention = use_attention;
        c.qkv_bias = qkv_bias;
        return count_params(c);
      },
      py::arg("sources") = from_sources(DvmeConfig{}.sources), py::arg("proj_dim") = 512,
      py::arg("num_classes") = 2, py::arg("use_attention") = true, py::arg("qkv_bias") = true);
  m.def("count_probe_params", &count_probe_params, py::arg("dim"), py::arg("num_classes"));

  m.def("auc_binary", [](const std::vector<double>& s, const std::vector<int>& y) { return auc_binary(s, y); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "auc_macro_ovr",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
         const std::vector<int>& y) { return auc_macro_ovr(to_tensor(p), y); },
      py::arg("probabilities"), py::arg("labels"));
  m.def(
      "cohen_kappa",
      [](const std::vector<int>& a, const std::vector<int>& b, std::size_t c, const std::string& w) {
        return cohen_kappa(a, b, c, parse_kappa_weighting(w));
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("num_classes"), py::arg("weighting") = "quadratic");
  m.def(
      "combine_leaderboard",
      [](double alpha, double s_private, double s_public) {
        return combine_leaderboard({alpha, s_private, s_public});
      },
      py::arg("alpha"), py::arg("s_private"), py::arg("s_public"));
  m.def(
      "aggregate",
      [](const std::vector<double>& scores, const std::string& metric) {
        return metric_dict(aggregate(scores, metric));
      },
      py::arg("scores"), py::arg("metric") = "auc");

  m.def(
      "make_folds",
      [](const std::vector<int>& labels, const std::vector<std::int64_t>& groups,
         std::size_t num_classes, std::optional<std::size_t> sample_count, bool balanced,
         std::uint64_t seed, std::size_t k) {
        const auto plan = make_folds(labels, groups, num_classes,
                                     SubtaskSpec{"custom", sample_count, balanced}, seed, k);
        std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
        for (const auto& f : plan.folds) out.emplace_back(f.train, f.val);
        return out;
      },
      py::arg("labels"), py::arg("groups") = std::vector<std::int64_t>{}, py::arg("num_classes"),
      py::arg("sample_count") = std::nullopt, py::arg("balanced") = true, py::arg("seed") = 0,
      py::arg("k") = 5);

  m.def(
      "run_grad_suite",
      [](std::uint64_t seed) {
        const auto r = run_grad_suite({seed, {}});
        py::dict out;
        for (const auto& c : r.cases) out[py::str(c.name)] = c.result.max_rel_error;
        return out;
      },
      py::arg("seed") = 0);

  m.def(
      "run_probe_cv",
      [](const EmbeddingDataset& data, const std::string& source, std::uint64_t seed,
         std::size_t folds, std::uint32_t max_epochs, std::uint32_t min_epochs,
         const std::string& metric) {
        const auto opt = cv_options(seed, folds, max_epochs, min_epochs, metric);
        MetricReport report;
        {
          py::gil_scoped_release release;
          report = run_probe_cv(data, {source}, opt).front().metrics;
        }
        return metric_dict(report);
      },
      py::arg("dataset"), py::arg("source"), py::arg("seed") = 0, py::arg("folds") = 5,
      py::arg("max_epochs") = 50, py::arg("min_epochs") = 30, py::arg("metric") = "auc");

  m.def(
      "run_dvme_cv",
      [](const EmbeddingDataset& data, std::uint32_t proj_dim, bool use_attention, std::uint64_t seed,
         std::size_t folds, std::uint32_t max_epochs, std::uint32_t min_epochs,
         const std::string& metric) {
        DvmeConfig base;
        base.proj_dim = proj_dim;
        base.use_attention = use_attention;
        const auto opt = cv_options(seed, folds, max_epochs, min_epochs, metric);
        MetricReport report;
        {
          py::gil_scoped_release release;
          report = run_dvme_cv(data, config_for(data, base), opt).metrics;
        }
        return metric_dict(report);
      },
      py::arg("dataset"), py::arg("proj_dim") = 512, py::arg("use_attention") = true,
      py::arg("seed") = 0, py::arg("folds") = 5, py::arg("max_epochs") = 50,
      py::arg("min_epochs") = 30, py::arg("metric") = "auc");
}
