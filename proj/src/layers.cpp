#include "v4d/layers.hpp"

#include <cmath>

namespace v4d {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

ParamRegistry::Slot ParamRegistry::insert(const std::string& name, Tensor value) {
  if (params_.count(name) != 0) throw std::logic_error("duplicate parameter name " + name);
  Tensor grad = Tensor::zeros(value.shape());
  auto p = params_.emplace(name, std::move(value)).first;
  auto g = grads_.emplace(name, std::move(grad)).first;
  return Slot{&p->second, &g->second};
}

ParamRegistry::Slot ParamRegistry::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                               std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(mix_seed(seed_, hash_string(name)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return insert(name, std::move(t));
}

ParamRegistry::Slot ParamRegistry::add_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape)));
}

namespace {

void fold(std::uint64_t& h, std::uint64_t v) { h = mix_seed(h, v); }

}  // namespace

// --- ConvLayer --------------------------------------------------------------

ConvLayer::ConvLayer(const std::string& name, const ConvLayerConfig& cfg, ParamRegistry& reg) : cfg_(cfg) {
  const std::size_t k = cfg.kernel, kt = cfg.temporal_kernel, ci = cfg.cin, co = cfg.cout;
  const std::size_t k3 = k * k * k;
  switch (cfg.kind) {
    case ConvKind::Conv3D:
      w_ = reg.add_uniform(name + ".w", {k, k, k, ci, co}, k3 * ci, k3 * co);
      b_ = reg.add_zeros(name + ".b", {co});
      break;
    case ConvKind::Conv4D:
      w_ = reg.add_uniform(name + ".w", {kt, k, k, k, ci, co}, kt * k3 * ci, kt * k3 * co);
      b_ = reg.add_zeros(name + ".b", {co});
      break;
    case ConvKind::Factorized:
      if (cfg.order == FactorOrder::SpatialFirst) {
        w_ = reg.add_uniform(name + ".spatial.w", {1, k, k, k, ci, co}, k3 * ci, k3 * co);
        b_ = reg.add_zeros(name + ".spatial.b", {co});
        tw_ = reg.add_uniform(name + ".temporal.w", {kt, 1, 1, 1, co, co}, kt * co, kt * co);
        tb_ = reg.add_zeros(name + ".temporal.b", {co});
      } else {
        tw_ = reg.add_uniform(name + ".temporal.w", {kt, 1, 1, 1, ci, ci}, kt * ci, kt * ci);
        tb_ = reg.add_zeros(name + ".temporal.b", {ci});
        w_ = reg.add_uniform(name + ".spatial.w", {1, k, k, k, ci, co}, k3 * ci, k3 * co);
        b_ = reg.add_zeros(name + ".spatial.b", {co});
      }
      break;
  }
}

std::string ConvLayer::kind() const {
  switch (cfg_.kind) {
    case ConvKind::Conv3D: return "conv3d";
    case ConvKind::Conv4D: return "conv4d_full";
    case ConvKind::Factorized: return "conv4d_factorized";
  }
  return "conv";
}

ConvParams ConvLayer::params(const ParamRegistry::Slot& w, const ParamRegistry::Slot& b, bool spatial_stage) const {
  ConvParams p;
  p.weights = *w.value;
  p.bias = *b.value;
  p.padding = cfg_.padding;
  const std::size_t s = cfg_.stride, st = cfg_.temporal_stride;
  switch (cfg_.kind) {
    case ConvKind::Conv3D: p.stride = {s, s, s}; break;
    case ConvKind::Conv4D: p.stride = {st, s, s, s}; break;
    case ConvKind::Factorized: p.stride = spatial_stage ? std::vector<std::size_t>{1, s, s, s}
                                                        : std::vector<std::size_t>{st, 1, 1, 1}; break;
  }
  return p;
}

Shape ConvLayer::output_shape(const Shape& in) const {
  Shape out = in;
  const bool temporal = cfg_.kind != ConvKind::Conv3D;
  const std::size_t first_spatial = temporal ? 2 : 1;
  if (in.size() != (temporal ? 6u : 5u)) throw ShapeError(kind() + ": bad input rank " + shape_str(in));
  if (in.back() != cfg_.cin) throw ShapeError(kind() + ": channel mismatch for input " + shape_str(in));
  if (temporal) out[1] = conv_out_extent(in[1], cfg_.temporal_kernel, cfg_.temporal_stride, cfg_.padding);
  for (std::size_t a = 0; a < 3; ++a)
    out[first_spatial + a] = conv_out_extent(in[first_spatial + a], cfg_.kernel, cfg_.stride, cfg_.padding);
  out.back() = cfg_.cout;
  return out;
}

Tensor ConvLayer::forward(const Tensor& x) {
  input_ = x;
  switch (cfg_.kind) {
    case ConvKind::Conv3D: return conv3d(x, params(w_, b_, true));
    case ConvKind::Conv4D: return conv4d_full(x, params(w_, b_, true));
    case ConvKind::Factorized:
      return conv4d_factorized(x, params(w_, b_, true), params(tw_, tb_, false), cfg_.order);
  }
  return {};
}

Tensor ConvLayer::backward(const Tensor& grad_out) {
  if (input_.empty()) throw std::logic_error(kind() + ": backward without forward");
  switch (cfg_.kind) {
    case ConvKind::Conv3D:
    case ConvKind::Conv4D: {
      const ConvParams p = params(w_, b_, true);
      ConvGrads g = cfg_.kind == ConvKind::Conv3D ? conv3d_backward(input_, p, grad_out)
                                                  : conv4d_full_backward(input_, p, grad_out);
      w_.grad->add_inplace(g.weights);
      b_.grad->add_inplace(g.bias);
      return std::move(g.input);
    }
    case ConvKind::Factorized: {
      FactorizedGrads g = conv4d_factorized_backward(input_, params(w_, b_, true), params(tw_, tb_, false),
                                                     grad_out, cfg_.order);
      w_.grad->add_inplace(g.spatial.weights);
      b_.grad->add_inplace(g.spatial.bias);
      tw_.grad->add_inplace(g.temporal.weights);
      tb_.grad->add_inplace(g.temporal.bias);
      return std::move(g.input);
    }
  }
  return {};
}

// --- ReLU -------------------------------------------------------------------

Tensor ReluLayer::forward(const Tensor& x) {
  input_ = x;
  return relu(x);
}

Tensor ReluLayer::backward(const Tensor& grad_out) { return relu_backward(input_, grad_out); }

void ReluLayer::fingerprint(std::uint64_t& h) const {
  std::uint64_t word = 0;
  std::size_t bits = 0;
  for (double v : input_.data()) {
    word = (word << 1) | (v > 0.0 ? 1u : 0u);
    if (++bits == 64) {
      fold(h, word);
      word = 0;
      bits = 0;
    }
  }
  fold(h, word ^ bits);
}

// --- MaxPool ----------------------------------------------------------------

MaxPoolLayer::MaxPoolLayer(std::vector<std::size_t> window, std::vector<std::size_t> stride, Padding padding)
    : window_(std::move(window)), stride_(std::move(stride)), padding_(padding) {
  if (window_.size() != stride_.size()) throw ShapeError("maxpool: window/stride rank mismatch");
}

std::vector<std::size_t> MaxPoolLayer::full(const std::vector<std::size_t>& inner) const {
  std::vector<std::size_t> v{1};
  v.insert(v.end(), inner.begin(), inner.end());
  v.push_back(1);
  return v;
}

Shape MaxPoolLayer::output_shape(const Shape& in) const {
  if (in.size() != window_.size() + 2) throw ShapeError("maxpool: bad input rank " + shape_str(in));
  Shape out = in;
  for (std::size_t a = 0; a < window_.size(); ++a)
    out[a + 1] = conv_out_extent(in[a + 1], window_[a], stride_[a], padding_);
  return out;
}

Tensor MaxPoolLayer::forward(const Tensor& x) {
  const auto w = full(window_), s = full(stride_);
  PoolResult r = maxpool_with_indices(x, w, s, padding_);
  input_shape_ = x.shape();
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) { return maxpool_backward(input_shape_, argmax_, grad_out); }

void MaxPoolLayer::fingerprint(std::uint64_t& h) const {
  for (std::size_t i : argmax_) fold(h, i);
}

// --- GAP / Dense ------------------------------------------------------------

Tensor GlobalAvgPoolLayer::forward(const Tensor& x) {
  input_shape_ = x.shape();
  return global_avg_pool(x);
}

Tensor GlobalAvgPoolLayer::backward(const Tensor& grad_out) {
  return global_avg_pool_backward(input_shape_, grad_out);
}

DenseLayer::DenseLayer(const std::string& name, std::size_t in_features, std::size_t out_features,
                       ParamRegistry& reg)
    : in_(in_features), out_(out_features) {
  w_ = reg.add_uniform(name + ".w", {in_features, out_features}, in_features, out_features);
  b_ = reg.add_zeros(name + ".b", {out_features});
}

Shape DenseLayer::output_shape(const Shape& in) const {
  if (in.size() != 2 || in[1] != in_) throw ShapeError("dense_affine: bad input shape " + shape_str(in));
  return {in[0], out_};
}

Tensor DenseLayer::forward(const Tensor& x) {
  input_ = x;
  return dense_affine(x, *w_.value, *b_.value);
}

Tensor DenseLayer::backward(const Tensor& grad_out) {
  DenseGrads g = dense_affine_backward(input_, *w_.value, grad_out);
  w_.grad->add_inplace(g.weights);
  b_.grad->add_inplace(g.bias);
  return std::move(g.input);
}

// --- composites -------------------------------------------------------------

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& l : layers_) y = l->forward(y);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::fingerprint(std::uint64_t& h) const {
  for (const auto& l : layers_) l->fingerprint(h);
}

void Sequential::visit(const std::function<void(const Layer&)>& fn) const {
  fn(*this);
  for (const auto& l : layers_) l->visit(fn);
}

Shape Residual::output_shape(const Shape& in) const {
  const Shape body = body_->output_shape(in);
  const Shape skip = shortcut_ ? shortcut_->output_shape(in) : in;
  if (body != skip) throw ShapeError("residual: body " + shape_str(body) + " vs shortcut " + shape_str(skip));
  return body;
}

Tensor Residual::forward(const Tensor& x) {
  Tensor y = body_->forward(x);
  y.add_inplace(shortcut_ ? shortcut_->forward(x) : x);
  return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
  Tensor g = body_->backward(grad_out);
  g.add_inplace(shortcut_ ? shortcut_->backward(grad_out) : grad_out);
  return g;
}

void Residual::fingerprint(std::uint64_t& h) const {
  body_->fingerprint(h);
  if (shortcut_) shortcut_->fingerprint(h);
}

void Residual::visit(const std::function<void(const Layer&)>& fn) const {
  fn(*this);
  body_->visit(fn);
  if (shortcut_) shortcut_->visit(fn);
}

Shape Concat::output_shape(const Shape& in) const {
  Shape out;
  for (const auto& b : branches_) {
    const Shape s = b->output_shape(in);
    if (out.empty()) {
      out = s;
    } else {
      out.back() += s.back();
    }
  }
  return out;
}

Tensor Concat::forward(const Tensor& x) {
  std::vector<Tensor> outs;
  widths_.clear();
  for (auto& b : branches_) {
    outs.push_back(b->forward(x));
    widths_.push_back(outs.back().shape().back());
  }
  return concat_axis(outs, outs.front().rank() - 1);
}

Tensor Concat::backward(const Tensor& grad_out) {
  const std::size_t axis = grad_out.rank() - 1;
  Tensor total;
  std::size_t start = 0;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    Tensor g = branches_[i]->backward(slice_axis(grad_out, axis, start, widths_[i]));
    start += widths_[i];
    if (total.empty()) {
      total = std::move(g);
    } else {
      total.add_inplace(g);
    }
  }
  return total;
}

void Concat::fingerprint(std::uint64_t& h) const {
  for (const auto& b : branches_) b->fingerprint(h);
}

void Concat::visit(const std::function<void(const Layer&)>& fn) const {
  fn(*this);
  for (const auto& b : branches_) b->visit(fn);
}

Shape SumBranches::output_shape(const Shape& in) const {
  Shape out = branches_.front()->output_shape(in);
  for (const auto& b : branches_) {
    if (b->output_shape(in) != out) throw ShapeError("sum: branch shapes differ");
  }
  return out;
}

Tensor SumBranches::forward(const Tensor& x) {
  Tensor y = branches_.front()->forward(x);
  for (std::size_t i = 1; i < branches_.size(); ++i) y.add_inplace(branches_[i]->forward(x));
  return y;
}

Tensor SumBranches::backward(const Tensor& grad_out) {
  Tensor g = branches_.front()->backward(grad_out);
  for (std::size_t i = 1; i < branches_.size(); ++i) g.add_inplace(branches_[i]->backward(grad_out));
  return g;
}

void SumBranches::fingerprint(std::uint64_t& h) const {
  for (const auto& b : branches_) b->fingerprint(h);
}

void SumBranches::visit(const std::function<void(const Layer&)>& fn) const {
  fn(*this);
  for (const auto& b : branches_) b->visit(fn);
}

Shape DenseConcat::output_shape(const Shape& in) const {
  Shape out = in;
  out.back() += inner_->output_shape(in).back();
  return out;
}

Tensor DenseConcat::forward(const Tensor& x) {
  input_channels_ = x.shape().back();
  const Tensor parts[] = {x, inner_->forward(x)};
  return concat_axis(parts, x.rank() - 1);
}

Tensor DenseConcat::backward(const Tensor& grad_out) {
  const std::size_t axis = grad_out.rank() - 1;
  const std::size_t grown = grad_out.shape().back() - input_channels_;
  Tensor g = inner_->backward(slice_axis(grad_out, axis, input_channels_, grown));
  g.add_inplace(slice_axis(grad_out, axis, 0, input_channels_));
  return g;
}

void DenseConcat::fingerprint(std::uint64_t& h) const { inner_->fingerprint(h); }

void DenseConcat::visit(const std::function<void(const Layer&)>& fn) const {
  fn(*this);
  inner_->visit(fn);
}

}  // namespace v4d
