#include "dvme/gradsuite.hpp"

#include <algorithm>

#include "dvme/model.hpp"
#include "dvme/numerics.hpp"
#include "dvme/rng.hpp"

namespace dvme {

namespace {

TensorD random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

double weighted_sum(const TensorD& y, const TensorD& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

struct Case {
  std::string name;
  std::function<double()> objective;
  std::vector<std::pair<std::string, TensorD*>> params;
  std::vector<TensorD> analytic;
};

GradSuiteCase finish(Case& c, const std::string& flip) {
  std::vector<GradcheckEntry> entries;
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    if (c.params[i].first == flip) {
      for (double& v : c.analytic[i].values()) v = -v;
    }
    entries.push_back({c.params[i].first, c.params[i].second, &c.analytic[i]});
  }
  return {c.name, gradcheck(c.objective, entries)};
}

template <typename P>
void collect(const P& grads, P& params, Case& c) {
  auto live = params.tensors();
  const auto g = grads.tensors();
  for (std::size_t i = 0; i < live.size(); ++i) {
    c.params.emplace_back(live[i].name, live[i].tensor);
    c.analytic.push_back(*g[i].tensor);
  }
}

template <typename P>
void randomize(P& params, Rng& rng, double scale) {
  for (auto& ref : params.tensors()) {
    for (double& v : ref.tensor->values()) v = scale * rng.normal();
  }
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
  rng.shuffle(std::span<int>(y));
  return y;
}

GradSuiteCase dvme_case(const std::string& name, DvmeConfig cfg, Rng& rng,
                        const std::string& flip) {
  const std::size_t batch = 4;
  DvmeModel<double> model(cfg);
  auto params = model.init(rng.next());
  randomize(params, rng, 0.5);
  // keep gamma away from zero so the layernorm Jacobian is well conditioned
  for (double& g : params.norm_gamma.values()) g = 1.0 + 0.3 * g;
  std::vector<TensorD> inputs;
  for (const auto& s : cfg.sources) inputs.push_back(random_tensor(rng, {batch, s.dim}));
  const auto labels = random_labels(rng, batch, cfg.num_classes);

  auto fwd = model.forward_eval(params, inputs);
  const auto ce = nn::cross_entropy(fwd.logits, labels);
  const auto grads = model.backward(params, fwd.cache, ce.dlogits);

  Case c;
  c.name = name;
  c.objective = [&model, &params, &inputs, labels] {
    return nn::cross_entropy(model.forward_eval(params, inputs).logits, labels).loss;
  };
  collect(grads, params, c);
  return finish(c, flip);
}

}  // namespace

double GradSuiteReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.result.max_rel_error);
  return m;
}

std::string GradSuiteReport::worst() const {
  const GradSuiteCase* w = nullptr;
  for (const auto& c : cases) {
    if (!w || c.result.max_rel_error > w->result.max_rel_error) w = &c;
  }
  return w ? w->name + ":" + w->result.worst_tensor : std::string();
}

GradSuiteReport run_grad_suite(const GradSuiteOptions& options) {
  Rng rng(derive_seed(options.seed, 0x67726164));
  GradSuiteReport report;
  const std::string& flip = options.sign_flip;

  {
    TensorD x = random_tensor(rng, {3, 4}), w = random_tensor(rng, {4, 2}),
            b = random_tensor(rng, {2}), r = random_tensor(rng, {3, 2});
    const auto g = nn::linear_backward(x, w, r, true);
    Case c{"linear", [&] { return weighted_sum(nn::linear_forward(x, w, b), r); },
           {{"x", &x}, {"weight", &w}, {"bias", &b}}, {g.dx, g.dw, g.db}};
    report.cases.push_back(finish(c, flip));
  }
  {
    TensorD x = random_tensor(rng, {2, 4}), r = random_tensor(rng, {2, 4});
    const auto dx = nn::softmax_rows_backward(nn::softmax_rows(x), r);
    Case c{"softmax", [&] { return weighted_sum(nn::softmax_rows(x), r); }, {{"x", &x}}, {dx}};
    report.cases.push_back(finish(c, flip));
  }
  {
    TensorD x = random_tensor(rng, {3, 5}), gamma = random_tensor(rng, {5}),
            beta = random_tensor(rng, {5}), r = random_tensor(rng, {3, 5});
    const auto fwd = nn::layernorm_forward(x, gamma, beta);
    const auto g = nn::layernorm_backward(fwd.cache, gamma, r);
    Case c{"layernorm",
           [&] { return weighted_sum(nn::layernorm_forward(x, gamma, beta).y, r); },
           {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}},
           {g.dx, g.dgamma, g.dbeta}};
    report.cases.push_back(finish(c, flip));
  }
  {
    TensorD x = random_tensor(rng, {3, 4}), r = random_tensor(rng, {3, 4});
    for (double& v : x.values()) v += v >= 0.0 ? 0.1 : -0.1;  // away from the kink
    const auto dx = nn::relu_backward(x, r);
    Case c{"relu", [&] { return weighted_sum(nn::relu(x), r); }, {{"x", &x}}, {dx}};
    report.cases.push_back(finish(c, flip));
  }
  {
    TensorD x = random_tensor(rng, {3, 4}), r = random_tensor(rng, {3, 4});
    const std::uint64_t key = rng.next();
    auto run = [&] {
      CounterStream s(key);
      return nn::dropout(x, 0.3, nn::Mode::train, s);
    };
    const auto dx = nn::dropout_backward(run().mask, r);
    Case c{"dropout", [&] { return weighted_sum(run().y, r); }, {{"x", &x}}, {dx}};
    report.cases.push_back(finish(c, flip));
  }
  {
    TensorD logits = random_tensor(rng, {4, 3});
    const auto labels = random_labels(rng, 4, 3);
    const auto ce = nn::cross_entropy(logits, labels);
    Case c{"cross_entropy", [&] { return nn::cross_entropy(logits, labels).loss; },
           {{"logits", &logits}}, {ce.dlogits}};
    report.cases.push_back(finish(c, flip));
  }
  {
    ProbeModel<double> probe({"probe", 6}, 3);
    auto params = probe.init(rng.next());
    randomize(params, rng, 0.5);
    std::vector<TensorD> inputs{random_tensor(rng, {4, 6})};
    const auto labels = random_labels(rng, 4, 3);
    const auto fwd = probe.forward_eval(params, inputs);
    const auto grads =
        probe.backward(params, fwd.cache, nn::cross_entropy(fwd.logits, labels).dlogits);
    Case c;
    c.name = "probe";
    c.objective = [&] {
      return nn::cross_entropy(probe.forward_eval(params, inputs).logits, labels).loss;
    };
    collect(grads, params, c);
    report.cases.push_back(finish(c, flip));
  }

  DvmeConfig cfg;
  cfg.sources = {{"simclr", 5}, {"swav", 4}, {"dino", 3}};
  cfg.proj_dim = 3;
  cfg.num_classes = 3;
  report.cases.push_back(dvme_case("dvme", cfg, rng, flip));
  cfg.qkv_bias = false;
  report.cases.push_back(dvme_case("dvme_no_qkv_bias", cfg, rng, flip));
  cfg.qkv_bias = true;
  cfg.use_attention = false;
  report.cases.push_back(dvme_case("dvme_no_attention", cfg, rng, flip));
  return report;
}

}  // namespace dvme
