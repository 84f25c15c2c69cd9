#include "v4d/model.hpp"

#include "json.hpp"

namespace v4d {

std::string to_string(Family family) {
  switch (family) {
    case Family::ResNet: return "resnet";
    case Family::Inception: return "inception";
    case Family::ResNeXt: return "resnext";
    case Family::Densenet: return "densenet";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  std::string l;
  for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "resnet") return Family::ResNet;
  if (l == "inception") return Family::Inception;
  if (l == "resnext") return Family::ResNeXt;
  if (l == "densenet") return Family::Densenet;
  throw std::invalid_argument("unknown family '" + s + "' (expected resnet, inception, resnext, densenet)");
}

std::string ModelSpec::to_text() const {
  nlohmann::json j;
  j["family"] = to_string(family);
  j["mode"] = to_string(mode);
  j["stem_layers"] = stem_layers;
  j["stem_channels"] = stem_channels;
  j["module_channel_multipliers"] = module_channel_multipliers;
  j["blocks_per_module"] = blocks_per_module;
  j["spatial_kernel"] = spatial_kernel;
  j["temporal_kernel"] = temporal_kernel;
  j["cardinality"] = cardinality;
  j["growth_rate"] = growth_rate;
  j["factor_order"] = factor_order == FactorOrder::SpatialFirst ? "spatial-first" : "temporal-first";
  j["seed"] = seed;
  return j.dump();
}

ModelSpec ModelSpec::from_text(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.mode = parse_conv_mode(j.at("mode").get<std::string>());
    s.stem_layers = j.at("stem_layers").get<std::size_t>();
    s.stem_channels = j.at("stem_channels").get<std::size_t>();
    s.module_channel_multipliers = j.at("module_channel_multipliers").get<std::vector<std::size_t>>();
    s.blocks_per_module = j.at("blocks_per_module").get<std::vector<std::size_t>>();
    s.spatial_kernel = j.at("spatial_kernel").get<std::size_t>();
    s.temporal_kernel = j.at("temporal_kernel").get<std::size_t>();
    s.cardinality = j.at("cardinality").get<std::size_t>();
    s.growth_rate = j.at("growth_rate").get<std::size_t>();
    s.factor_order = j.at("factor_order").get<std::string>() == "temporal-first" ? FactorOrder::TemporalFirst
                                                                                : FactorOrder::SpatialFirst;
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model spec text: ") + e.what());
  }
}

Shape sample_shape(ConvMode mode, std::size_t frames, std::size_t d, std::size_t h, std::size_t w,
                   std::size_t channels) {
  switch (mode) {
    case ConvMode::Mode3D: return {d, h, w, channels};
    case ConvMode::Mode3DC: return {d, h, w, frames * channels};
    case ConvMode::ModeF4D:
    case ConvMode::Mode4D: return {frames, d, h, w, channels};
  }
  return {};
}

Tensor prepare_input(ConvMode mode, const Tensor& sequences) {
  if (sequences.rank() != 6) {
    throw ShapeError("prepare_input: expected [N,T,D,H,W,C], got " + shape_str(sequences.shape()));
  }
  switch (mode) {
    case ConvMode::Mode3D: {
      const Shape& s = sequences.shape();
      const Tensor last = slice_axis(sequences, 1, s[1] - 1, 1);
      return last.reshaped({s[0], s[2], s[3], s[4], s[5]});
    }
    case ConvMode::Mode3DC: return channel_stack(sequences);
    case ConvMode::ModeF4D:
    case ConvMode::Mode4D: return sequences;
  }
  return sequences;
}

// --- Network ----------------------------------------------------------------

Network::Network(std::unique_ptr<ParameterStore> params, std::unique_ptr<ParameterStore> grads,
                 std::unique_ptr<Sequential> root, Shape sample_shape)
    : params_(std::move(params)), grads_(std::move(grads)), root_(std::move(root)),
      sample_shape_(std::move(sample_shape)) {}

Shape Network::output_shape(std::size_t batch) const {
  Shape in{batch};
  in.insert(in.end(), sample_shape_.begin(), sample_shape_.end());
  return root_->output_shape(in);
}

Tensor Network::forward(const Tensor& batch) {
  if (batch.rank() != sample_shape_.size() + 1 ||
      !std::equal(sample_shape_.begin(), sample_shape_.end(), batch.shape().begin() + 1)) {
    throw ShapeError("network input " + shape_str(batch.shape()) + " does not match [N," +
                     shape_str(sample_shape_).substr(1));
  }
  return root_->forward(batch);
}

Tensor Network::backward(const Tensor& grad_out) { return root_->backward(grad_out); }

void Network::zero_grad() {
  for (auto& [name, g] : *grads_) g.fill(0.0);
}

void Network::load_parameters(const ParameterStore& values) {
  if (values.size() != params_->size()) throw ShapeError("load_parameters: parameter count differs");
  for (auto& [name, t] : *params_) {
    auto it = values.find(name);
    if (it == values.end()) throw ShapeError("load_parameters: missing parameter " + name);
    if (it->second.shape() != t.shape()) throw ShapeError("load_parameters: shape mismatch for " + name);
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : *params_) n += t.size();
  return n;
}

std::uint64_t Network::activation_fingerprint() const {
  std::uint64_t h = 0x6A09E667F3BCC909ull;
  root_->fingerprint(h);
  return h;
}

std::size_t parameter_count(const Network& net) { return net.parameter_count(); }

// --- builder ----------------------------------------------------------------

namespace {

Shape with_batch(const Shape& sample) {
  Shape s{1};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Shape without_batch(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

class Builder {
 public:
  Builder(const ModelSpec& spec, ParamRegistry& reg) : spec_(spec), reg_(reg), temporal_(is_temporal(spec.mode)) {}

  /// A convolution in the network's mode. Pointwise convolutions stay
  /// pointwise in every axis; only k-kernels gain a temporal extent.
  LayerPtr conv(const std::string& name, const Shape& in, std::size_t cout, bool strided, bool pointwise) const {
    ConvLayerConfig c;
    c.cin = in.back();
    c.cout = cout;
    c.kernel = pointwise ? 1 : spec_.spatial_kernel;
    c.stride = strided ? 2 : 1;
    c.order = spec_.factor_order;
    if (!temporal_) {
      c.kind = ConvKind::Conv3D;
    } else {
      const std::size_t frames = in.front();
      c.temporal_kernel = pointwise || frames == 1 ? 1 : spec_.temporal_kernel;
      c.temporal_stride = strided && frames > 1 ? 2 : 1;
      c.kind = spec_.mode == ConvMode::ModeF4D && !pointwise ? ConvKind::Factorized : ConvKind::Conv4D;
    }
    return std::make_unique<ConvLayer>(name, c, reg_);
  }

  LayerPtr pool(const Shape& in, bool strided) const {
    const std::size_t k = spec_.spatial_kernel, s = strided ? 2 : 1;
    if (!temporal_) return std::make_unique<MaxPoolLayer>(std::vector<std::size_t>{k, k, k},
                                                          std::vector<std::size_t>{s, s, s}, Padding::Same);
    const std::size_t frames = in.front();
    const std::size_t kt = frames == 1 ? 1 : spec_.temporal_kernel;
    const std::size_t st = strided && frames > 1 ? 2 : 1;
    return std::make_unique<MaxPoolLayer>(std::vector<std::size_t>{kt, k, k, k},
                                          std::vector<std::size_t>{st, s, s, s}, Padding::Same);
  }

  static Shape out(const Layer& l, const Shape& in) { return without_batch(l.output_shape(with_batch(in))); }

  static LayerPtr relu() { return std::make_unique<ReluLayer>(); }

  static LayerPtr seq(std::vector<LayerPtr> layers) { return std::make_unique<Sequential>(std::move(layers)); }

  // conv -> ReLU -> conv, plus identity or projected skip, then ReLU.
  LayerPtr resnet_block(const std::string& name, const Shape& in, std::size_t cout, bool strided) const {
    std::vector<LayerPtr> body;
    body.push_back(conv(name + ".conv1", in, cout, strided, false));
    const Shape mid = out(*body.back(), in);
    body.push_back(relu());
    body.push_back(conv(name + ".conv2", mid, cout, false, false));
    LayerPtr skip;
    if (strided || in.back() != cout) skip = conv(name + ".skip", in, cout, strided, true);
    std::vector<LayerPtr> block;
    block.push_back(std::make_unique<Residual>(seq(std::move(body)), std::move(skip)));
    block.push_back(relu());
    return seq(std::move(block));
  }

  // {1-conv, k-conv, pool -> 1-conv}, each followed by ReLU, concatenated.
  LayerPtr inception_block(const std::string& name, const Shape& in, std::size_t cout, bool strided) const {
    if (cout < 3) throw std::invalid_argument("inception block needs at least 3 output channels");
    const std::size_t third = cout / 3;
    const std::size_t widths[3] = {third + cout % 3, third, third};
    std::vector<LayerPtr> branches;
    {
      std::vector<LayerPtr> b;
      b.push_back(conv(name + ".branch1", in, widths[0], strided, true));
      b.push_back(relu());
      branches.push_back(seq(std::move(b)));
    }
    {
      std::vector<LayerPtr> b;
      b.push_back(conv(name + ".branch2", in, widths[1], strided, false));
      b.push_back(relu());
      branches.push_back(seq(std::move(b)));
    }
    {
      std::vector<LayerPtr> b;
      b.push_back(pool(in, strided));
      const Shape pooled = out(*b.back(), in);
      b.push_back(conv(name + ".branch3", pooled, widths[2], false, true));
      b.push_back(relu());
      branches.push_back(seq(std::move(b)));
    }
    return std::make_unique<Concat>(std::move(branches));
  }

  // `cardinality` bottleneck paths summed, plus skip, then ReLU.
  LayerPtr resnext_block(const std::string& name, const Shape& in, std::size_t cout, bool strided) const {
    const std::size_t width = std::max<std::size_t>(1, cout / spec_.cardinality);
    std::vector<LayerPtr> paths;
    for (std::size_t p = 0; p < spec_.cardinality; ++p) {
      const std::string pn = name + ".path" + std::to_string(p);
      std::vector<LayerPtr> path;
      path.push_back(conv(pn + ".reduce", in, width, false, true));
      path.push_back(relu());
      const Shape reduced = out(*path.front(), in);
      path.push_back(conv(pn + ".conv", reduced, width, strided, false));
      const Shape mid = out(*path.back(), reduced);
      path.push_back(relu());
      path.push_back(conv(pn + ".expand", mid, cout, false, true));
      paths.push_back(seq(std::move(path)));
    }
    LayerPtr skip;
    if (strided || in.back() != cout) skip = conv(name + ".skip", in, cout, strided, true);
    std::vector<LayerPtr> block;
    block.push_back(std::make_unique<Residual>(std::make_unique<SumBranches>(std::move(paths)), std::move(skip)));
    block.push_back(relu());
    return seq(std::move(block));
  }

  // New features concatenated onto the input.
  LayerPtr dense_layer(const std::string& name, const Shape& in) const {
    std::vector<LayerPtr> inner;
    inner.push_back(conv(name, in, spec_.growth_rate, false, false));
    inner.push_back(relu());
    return std::make_unique<DenseConcat>(seq(std::move(inner)));
  }

 private:
  const ModelSpec& spec_;
  ParamRegistry& reg_;
  bool temporal_;
};

void validate(const ModelSpec& spec, const Shape& sample) {
  if (spec.blocks_per_module.empty()) throw std::invalid_argument("model needs at least one module");
  if (spec.blocks_per_module.size() != spec.module_channel_multipliers.size()) {
    throw std::invalid_argument("blocks_per_module and module_channel_multipliers differ in length");
  }
  for (std::size_t b : spec.blocks_per_module) {
    if (b == 0) throw std::invalid_argument("every module needs at least one block");
  }
  if (spec.stem_layers == 0 || spec.stem_channels == 0) throw std::invalid_argument("empty stem");
  if (spec.spatial_kernel % 2 == 0 || spec.temporal_kernel % 2 == 0) {
    throw std::invalid_argument("kernel extents must be odd");
  }
  if (spec.cardinality == 0 || spec.growth_rate == 0) throw std::invalid_argument("cardinality/growth must be >= 1");
  const std::size_t rank = is_temporal(spec.mode) ? 5 : 4;
  if (sample.size() != rank) {
    throw ShapeError("mode " + to_string(spec.mode) + " expects a rank-" + std::to_string(rank) +
                     " sample shape, got " + shape_str(sample));
  }
  if (is_temporal(spec.mode) && spec.temporal_kernel > sample.front()) {
    throw std::invalid_argument("temporal_kernel " + std::to_string(spec.temporal_kernel) +
                                " exceeds sequence length " + std::to_string(sample.front()));
  }
}

}  // namespace

Network build_model(const ModelSpec& spec, const Shape& sample) {
  validate(spec, sample);
  auto params = std::make_unique<ParameterStore>();
  auto grads = std::make_unique<ParameterStore>();
  ParamRegistry reg(*params, *grads, spec.seed);
  Builder b(spec, reg);
  auto root = std::make_unique<Sequential>();
  std::vector<LayerShapeInfo> stages;

  Shape cur = sample;
  for (std::size_t i = 0; i < spec.stem_layers; ++i) {
    LayerPtr c = b.conv("stem." + std::to_string(i), cur, spec.stem_channels, false, false);
    cur = Builder::out(*c, cur);
    root->add(std::move(c));
    root->add(Builder::relu());
  }
  stages.push_back({"stem", cur});

  const std::size_t modules = spec.blocks_per_module.size();
  for (std::size_t m = 0; m < modules; ++m) {
    const std::string mn = "m" + std::to_string(m);
    const std::size_t width = spec.stem_channels * spec.module_channel_multipliers[m];
    if (spec.family == Family::Densenet) {
      LayerPtr entry = b.conv(mn + ".entry", cur, width, true, false);
      cur = Builder::out(*entry, cur);
      root->add(std::move(entry));
      root->add(Builder::relu());
      for (std::size_t k = 0; k < spec.blocks_per_module[m]; ++k) {
        LayerPtr d = b.dense_layer(mn + ".dense" + std::to_string(k), cur);
        cur = Builder::out(*d, cur);
        root->add(std::move(d));
      }
      if (m + 1 < modules) {
        LayerPtr t = b.conv(mn + ".transition", cur, std::max<std::size_t>(1, cur.back() / 2), false, true);
        cur = Builder::out(*t, cur);
        root->add(std::move(t));
        root->add(Builder::relu());
      }
    } else {
      for (std::size_t k = 0; k < spec.blocks_per_module[m]; ++k) {
        const std::string bn = mn + ".b" + std::to_string(k);
        const bool strided = k == 0;
        LayerPtr blk;
        switch (spec.family) {
          case Family::ResNet: blk = b.resnet_block(bn, cur, width, strided); break;
          case Family::Inception: blk = b.inception_block(bn, cur, width, strided); break;
          case Family::ResNeXt: blk = b.resnext_block(bn, cur, width, strided); break;
          case Family::Densenet: break;
        }
        cur = Builder::out(*blk, cur);
        root->add(std::move(blk));
      }
    }
    stages.push_back({mn, cur});
  }

  root->add(std::make_unique<GlobalAvgPoolLayer>());
  const std::size_t features = cur.back();
  root->add(std::make_unique<DenseLayer>("fc", features, 3, reg));
  stages.push_back({"head", {3}});

  Network net(std::move(params), std::move(grads), std::move(root), sample);
  net.set_stage_shapes(std::move(stages));
  net.set_spec(spec);
  return net;
}

Network build_linear_model(std::size_t features, std::size_t outputs, std::uint64_t seed) {
  auto params = std::make_unique<ParameterStore>();
  auto grads = std::make_unique<ParameterStore>();
  ParamRegistry reg(*params, *grads, seed);
  auto root = std::make_unique<Sequential>();
  root->add(std::make_unique<DenseLayer>("fc", features, outputs, reg));
  return Network(std::move(params), std::move(grads), std::move(root), Shape{features});
}

}  // namespace v4d
