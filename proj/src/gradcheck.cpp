#include "v4d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

namespace v4d {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Coordinates to probe: all of them for small tensors, else a sorted sample.
std::vector<std::size_t> pick_coords(std::size_t size, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (size <= limit) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Difference {
  double value = 0.0;  // <out+ - out-, r>
  double noise = 0.0;  // rounding noise of that value
};

// Each recomputed output carries rounding error of order eps*|out|; only
// outputs that moved contribute. The noise is combined in quadrature (three
// standard deviations).
Difference dot_diff(const Tensor& plus, const Tensor& minus, const Tensor& r) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  Difference d;
  double var = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (plus[i] == minus[i]) continue;
    d.value += r[i] * (plus[i] - minus[i]);
    const double e = r[i] * eps * (std::abs(plus[i]) + std::abs(minus[i]));
    var += e * e;
  }
  d.noise = 3.0 * std::sqrt(var);
  return d;
}

// Probe one tensor. `eval` runs a forward pass and returns the output plus the
// switching fingerprint it produced.
template <class Eval>
void probe(const std::string& name, Tensor& target, const Tensor& analytic, const std::vector<std::size_t>& coords,
           const Tensor& r, std::uint64_t base_fp, double h, Eval&& eval, GradCheckResult& res) {
  for (std::size_t c : coords) {
    const double saved = target[c];
    target[c] = saved + h;
    auto [plus, fp_plus] = eval();
    target[c] = saved - h;
    auto [minus, fp_minus] = eval();
    target[c] = saved;
    if (fp_plus != base_fp || fp_minus != base_fp) {
      ++res.skipped;
      continue;
    }
    const Difference d = dot_diff(plus, minus, r);
    const double numeric = d.value / (2.0 * h);
    const double raw = relative_error(analytic[c], numeric);
    const double err = relative_error(analytic[c], numeric, d.noise / (2.0 * h));
    res.max_rel_error = std::max(res.max_rel_error, err);
    ++res.checked;
    if (raw > res.max_raw_rel_error || res.worst.empty()) {
      res.max_raw_rel_error = raw;
      char buf[96];
      std::snprintf(buf, sizeof buf, "[%zu] a=%.6e n=%.6e", c, analytic[c], numeric);
      res.worst = name + buf;
    }
  }
}

bool is_bias(const std::string& name) { return name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0; }

}  // namespace

double relative_error(double analytic, double numeric, double noise) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::max(0.0, std::abs(analytic - numeric) - noise) / denom;
}

GradCheckResult check_layer(const std::string& label, Layer& layer, ParameterStore& params, ParameterStore& grads,
                            const Tensor& input, const GradCheckOptions& opt) {
  GradCheckResult res;
  res.layer = label;
  res.tol = opt.tol;
  std::mt19937_64 rng(mix_seed(opt.seed, hash_string(label)));

  for (auto& [name, g] : grads) g.fill(0.0);
  Tensor x = input;
  const Tensor out = layer.forward(x);
  std::uint64_t base_fp = 0;
  layer.fingerprint(base_fp);
  const Tensor r = random_tensor(out.shape(), rng);
  const Tensor dx = layer.backward(r);

  ParameterStore analytic = grads;
  if (opt.inject_dense_bias_sign_fault && layer.kind() == "dense_affine") {
    for (auto& [name, g] : analytic)
      if (is_bias(name)) g.scale_inplace(-1.0);
  }

  auto eval = [&]() {
    Tensor o = layer.forward(x);
    std::uint64_t fp = 0;
    layer.fingerprint(fp);
    return std::pair{std::move(o), fp};
  };

  probe("input", x, dx, pick_coords(x.size(), opt.max_coords, rng()), r, base_fp, opt.h, eval, res);
  for (auto& [name, value] : params)
    probe(name, value, analytic.at(name), pick_coords(value.size(), opt.max_coords, rng()), r, base_fp, opt.h, eval,
          res);
  res.passed = res.checked > 0 && res.max_rel_error <= opt.tol;
  return res;
}

GradCheckResult check_network(const std::string& label, Network& net, const Tensor& input,
                              const GradCheckOptions& opt) {
  GradCheckResult res;
  res.layer = label;
  res.tol = opt.network_tol;
  std::mt19937_64 rng(mix_seed(opt.seed, hash_string(label)));

  net.zero_grad();
  Tensor x = input;
  const Tensor out = net.forward(x);
  const std::uint64_t base_fp = net.activation_fingerprint();
  const Tensor r = random_tensor(out.shape(), rng);
  const Tensor dx = net.backward(r);

  ParameterStore analytic = net.gradients();
  if (opt.inject_dense_bias_sign_fault) {
    for (auto& [name, g] : analytic)
      if (name.rfind("fc.", 0) == 0 && is_bias(name)) g.scale_inplace(-1.0);
  }

  auto eval = [&]() {
    Tensor o = net.forward(x);
    return std::pair{std::move(o), net.activation_fingerprint()};
  };

  // Fewer coordinates per tensor: the network has many parameter tensors.
  const std::size_t per_tensor = std::max<std::size_t>(4, opt.max_coords / 8);
  probe("input", x, dx, pick_coords(x.size(), 2 * per_tensor, rng()), r, base_fp, opt.h, eval, res);
  for (auto& [name, value] : net.parameters())
    probe(name, value, analytic.at(name), pick_coords(value.size(), per_tensor, rng()), r, base_fp, opt.h, eval, res);
  res.passed = res.checked > 0 && res.max_rel_error <= opt.network_tol;
  return res;
}

ModelSpec tiny_spec(Family family, ConvMode mode, std::uint64_t seed) {
  ModelSpec s;
  s.family = family;
  s.mode = mode;
  s.stem_layers = 2;
  s.stem_channels = 3;
  s.module_channel_multipliers = {1};
  s.blocks_per_module = {1};
  s.cardinality = 2;
  s.growth_rate = 2;
  s.seed = seed;
  return s;
}

namespace {

// A layer plus the stores it registered its parameters in.
struct Case {
  std::string label;
  ParameterStore params, grads;
  LayerPtr layer;
  Tensor input;
};

using CaseBuilder = std::function<LayerPtr(ParamRegistry&)>;

Case make_case(const std::string& label, Shape input_shape, std::uint64_t seed, const CaseBuilder& build) {
  Case c;
  c.label = label;
  ParamRegistry reg(c.params, c.grads, mix_seed(seed, hash_string(label)));
  c.layer = build(reg);
  std::mt19937_64 rng(mix_seed(seed, hash_string(label + "/data")));
  // Non-zero biases so nothing sits exactly on a ReLU kink by construction.
  for (auto& [name, value] : c.params) value = random_tensor(value.shape(), rng, -0.5, 0.5);
  c.input = random_tensor(std::move(input_shape), rng);
  return c;
}

LayerPtr conv(ParamRegistry& reg, const std::string& name, ConvLayerConfig cfg) {
  return std::make_unique<ConvLayer>(name, cfg, reg);
}

ConvLayerConfig cfg3(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Padding pad) {
  ConvLayerConfig c;
  c.kind = ConvKind::Conv3D;
  c.cin = cin;
  c.cout = cout;
  c.kernel = k;
  c.stride = stride;
  c.padding = pad;
  return c;
}

ConvLayerConfig cfg4(ConvKind kind, std::size_t cin, std::size_t cout, std::size_t k, std::size_t kt,
                     std::size_t stride, std::size_t tstride, Padding pad,
                     FactorOrder order = FactorOrder::SpatialFirst) {
  ConvLayerConfig c = cfg3(cin, cout, k, stride, pad);
  c.kind = kind;
  c.temporal_kernel = kt;
  c.temporal_stride = tstride;
  c.order = order;
  return c;
}

std::vector<Case> layer_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  auto add = [&](const std::string& label, Shape in, const CaseBuilder& b) {
    cases.push_back(make_case(label, std::move(in), seed, b));
  };
  const auto F = ConvKind::Factorized;
  const auto C4 = ConvKind::Conv4D;

  add("conv3d", {2, 4, 5, 3, 2}, [](ParamRegistry& r) { return conv(r, "c", cfg3(2, 3, 3, 1, Padding::Same)); });
  add("conv3d/strided-valid", {2, 6, 5, 7, 2},
      [](ParamRegistry& r) { return conv(r, "c", cfg3(2, 2, 3, 2, Padding::Valid)); });
  add("conv3d/strided-same", {1, 5, 6, 4, 3},
      [](ParamRegistry& r) { return conv(r, "c", cfg3(3, 2, 3, 2, Padding::Same)); });
  add("conv4d_full", {2, 3, 4, 3, 4, 2},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(C4, 2, 2, 3, 3, 1, 1, Padding::Same)); });
  add("conv4d_full/strided", {1, 5, 5, 4, 5, 2},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(C4, 2, 3, 3, 3, 2, 2, Padding::Same)); });
  add("conv4d_full/valid", {1, 4, 4, 5, 4, 1},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(C4, 1, 2, 3, 3, 1, 1, Padding::Valid)); });
  add("conv4d_full/pointwise", {2, 3, 3, 3, 3, 3},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(C4, 3, 2, 1, 1, 2, 1, Padding::Same)); });
  add("conv4d_factorized", {2, 3, 4, 4, 3, 2},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(F, 2, 3, 3, 3, 1, 1, Padding::Same)); });
  add("conv4d_factorized/strided", {1, 5, 5, 4, 5, 2},
      [&](ParamRegistry& r) { return conv(r, "c", cfg4(F, 2, 2, 3, 3, 2, 2, Padding::Same)); });
  add("conv4d_factorized/temporal-first", {2, 3, 4, 3, 4, 2}, [&](ParamRegistry& r) {
    return conv(r, "c", cfg4(F, 2, 3, 3, 3, 1, 1, Padding::Same, FactorOrder::TemporalFirst));
  });
  add("relu", {3, 4, 5}, [](ParamRegistry&) { return std::make_unique<ReluLayer>(); });
  add("maxpool", {2, 4, 4, 4, 3}, [](ParamRegistry&) {
    return std::make_unique<MaxPoolLayer>(std::vector<std::size_t>{2, 2, 2}, std::vector<std::size_t>{2, 2, 2},
                                          Padding::Valid);
  });
  add("maxpool/same-4d", {2, 3, 4, 3, 3, 2}, [](ParamRegistry&) {
    return std::make_unique<MaxPoolLayer>(std::vector<std::size_t>{3, 3, 3, 3}, std::vector<std::size_t>{1, 1, 1, 1},
                                          Padding::Same);
  });
  add("global_avg_pool", {2, 3, 4, 5, 2}, [](ParamRegistry&) { return std::make_unique<GlobalAvgPoolLayer>(); });
  add("dense_affine", {4, 6}, [](ParamRegistry& r) { return std::make_unique<DenseLayer>("fc", 6, 3, r); });
  add("residual", {2, 4, 4, 4, 2}, [](ParamRegistry& r) {
    auto body = std::make_unique<Sequential>();
    body->add(conv(r, "a", cfg3(2, 3, 3, 2, Padding::Same)));
    body->add(std::make_unique<ReluLayer>());
    body->add(conv(r, "b", cfg3(3, 3, 3, 1, Padding::Same)));
    return std::make_unique<Residual>(std::move(body), conv(r, "skip", cfg3(2, 3, 1, 2, Padding::Same)));
  });
  add("residual/identity", {2, 3, 4, 3, 2}, [](ParamRegistry& r) {
    return std::make_unique<Residual>(conv(r, "a", cfg3(2, 2, 3, 1, Padding::Same)), nullptr);
  });
  add("concat", {2, 3, 4, 3, 2}, [](ParamRegistry& r) {
    std::vector<LayerPtr> b;
    b.push_back(conv(r, "b1", cfg3(2, 2, 1, 1, Padding::Same)));
    b.push_back(conv(r, "b2", cfg3(2, 1, 3, 1, Padding::Same)));
    auto pool = std::make_unique<Sequential>();
    pool->add(std::make_unique<MaxPoolLayer>(std::vector<std::size_t>{3, 3, 3}, std::vector<std::size_t>{1, 1, 1},
                                             Padding::Same));
    pool->add(conv(r, "b3", cfg3(2, 2, 1, 1, Padding::Same)));
    b.push_back(std::move(pool));
    return std::make_unique<Concat>(std::move(b));
  });
  add("sum", {2, 3, 3, 4, 2}, [](ParamRegistry& r) {
    std::vector<LayerPtr> b;
    for (int p = 0; p < 2; ++p) {
      auto path = std::make_unique<Sequential>();
      const std::string n = "p" + std::to_string(p);
      path->add(conv(r, n + ".reduce", cfg3(2, 1, 1, 1, Padding::Same)));
      path->add(std::make_unique<ReluLayer>());
      path->add(conv(r, n + ".conv", cfg3(1, 1, 3, 1, Padding::Same)));
      b.push_back(std::move(path));
    }
    return std::make_unique<SumBranches>(std::move(b));
  });
  add("dense_concat", {2, 3, 4, 3, 2}, [](ParamRegistry& r) {
    auto inner = std::make_unique<Sequential>();
    inner->add(conv(r, "c", cfg3(2, 2, 3, 1, Padding::Same)));
    inner->add(std::make_unique<ReluLayer>());
    return std::make_unique<DenseConcat>(std::move(inner));
  });
  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt,
                                                 const std::function<void(const GradCheckResult&)>& on_result) {
  std::vector<GradCheckResult> results;
  auto emit = [&](GradCheckResult r) {
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  };
  for (Case& c : layer_cases(opt.seed)) emit(check_layer(c.label, *c.layer, c.params, c.grads, c.input, opt));

  std::mt19937_64 rng(mix_seed(opt.seed, 0x7e7));
  auto network = [&](Family family, ConvMode mode) {
    const ModelSpec spec = tiny_spec(family, mode, opt.seed);
    Network net = build_model(spec, sample_shape(mode, 3, 8, 8, 8));
    for (auto& [name, value] : net.parameters())
      if (is_bias(name)) value = random_tensor(value.shape(), rng, -0.1, 0.1);
    const Tensor seq = random_tensor({2, 3, 8, 8, 8, 1}, rng, 0.0, 1.0);
    emit(check_network("network/" + to_string(family) + "/" + to_string(mode), net, prepare_input(mode, seq), opt));
  };
  for (ConvMode mode : kAllModes) network(Family::ResNet, mode);
  for (Family family : {Family::Inception, Family::ResNeXt, Family::Densenet}) network(family, ConvMode::Mode4D);
  return results;
}

}  // namespace v4d
