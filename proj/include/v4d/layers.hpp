#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "v4d/ops.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

/// Named parameter (or gradient) tensors, ordered by name.
using ParameterStore = std::map<std::string, Tensor>;

/// Creates parameters and their gradient slots in two stores. Tensor
/// addresses stay valid for the lifetime of the stores (std::map nodes).
class ParamRegistry {
 public:
  ParamRegistry(ParameterStore& params, ParameterStore& grads, std::uint64_t seed)
      : params_(params), grads_(grads), seed_(seed) {}

  struct Slot {
    Tensor* value;
    Tensor* grad;
  };

  /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), seeded from the
  /// registry seed and the parameter name.
  Slot add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Slot add_zeros(const std::string& name, Shape shape);

 private:
  Slot insert(const std::string& name, Tensor value);

  ParameterStore& params_;
  ParameterStore& grads_;
  std::uint64_t seed_;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(const std::string& s);

/// A differentiable layer. forward() caches what backward() needs; backward()
/// returns the input gradient and accumulates parameter gradients into the
/// registry's gradient store.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  /// Output shape for an input shape (both including the batch axis).
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  /// Folds the piecewise-linear switching state of the last forward (ReLU
  /// signs, pooling argmax) into h.
  virtual void fingerprint(std::uint64_t& h) const { (void)h; }
  /// Visits this layer and every nested layer.
  virtual void visit(const std::function<void(const Layer&)>& fn) const { fn(*this); }
};

using LayerPtr = std::unique_ptr<Layer>;

enum class ConvKind { Conv3D, Conv4D, Factorized };

struct ConvLayerConfig {
  ConvKind kind = ConvKind::Conv3D;
  std::size_t cin = 1;
  std::size_t cout = 1;
  std::size_t kernel = 3;           // spatial extent (cubic)
  std::size_t temporal_kernel = 1;  // Conv4D / Factorized only
  std::size_t stride = 1;           // spatial stride
  std::size_t temporal_stride = 1;
  Padding padding = Padding::Same;
  FactorOrder order = FactorOrder::SpatialFirst;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(const std::string& name, const ConvLayerConfig& cfg, ParamRegistry& reg);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  const ConvLayerConfig& config() const { return cfg_; }

 private:
  ConvParams params(const ParamRegistry::Slot& w, const ParamRegistry::Slot& b, bool spatial_stage) const;

  ConvLayerConfig cfg_;
  ParamRegistry::Slot w_{}, b_{};    // Conv3D / Conv4D, or the spatial stage
  ParamRegistry::Slot tw_{}, tb_{};  // temporal stage
  Tensor input_;
};

class ReluLayer final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;

 private:
  Tensor input_;
};

class MaxPoolLayer final : public Layer {
 public:
  /// window/stride cover the non-batch, non-channel axes.
  MaxPoolLayer(std::vector<std::size_t> window, std::vector<std::size_t> stride, Padding padding);
  std::string kind() const override { return "maxpool"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;

 private:
  std::vector<std::size_t> full(const std::vector<std::size_t>& inner) const;

  std::vector<std::size_t> window_, stride_;
  Padding padding_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& in) const override { return {in.front(), in.back()}; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(const std::string& name, std::size_t in_features, std::size_t out_features, ParamRegistry& reg);
  std::string kind() const override { return "dense_affine"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t in_, out_;
  ParamRegistry::Slot w_{}, b_{};
  Tensor input_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}
  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  const Layer& at(std::size_t i) const { return *layers_.at(i); }

  std::string kind() const override { return "sequential"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;
  void visit(const std::function<void(const Layer&)>& fn) const override;

 private:
  std::vector<LayerPtr> layers_;
};

/// body(x) + shortcut(x); identity shortcut when none is given.
class Residual final : public Layer {
 public:
  Residual(LayerPtr body, LayerPtr shortcut) : body_(std::move(body)), shortcut_(std::move(shortcut)) {}
  std::string kind() const override { return "residual"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;
  void visit(const std::function<void(const Layer&)>& fn) const override;

 private:
  LayerPtr body_, shortcut_;
};

/// Parallel branches on the same input, concatenated on the channel axis.
class Concat final : public Layer {
 public:
  explicit Concat(std::vector<LayerPtr> branches) : branches_(std::move(branches)) {}
  std::string kind() const override { return "concat"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;
  void visit(const std::function<void(const Layer&)>& fn) const override;

 private:
  std::vector<LayerPtr> branches_;
  std::vector<std::size_t> widths_;
};

/// Parallel branches on the same input, summed.
class SumBranches final : public Layer {
 public:
  explicit SumBranches(std::vector<LayerPtr> branches) : branches_(std::move(branches)) {}
  std::string kind() const override { return "sum"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;
  void visit(const std::function<void(const Layer&)>& fn) const override;

 private:
  std::vector<LayerPtr> branches_;
};

/// Densely connected layer: concat(x, f(x)) on the channel axis.
class DenseConcat final : public Layer {
 public:
  explicit DenseConcat(LayerPtr inner) : inner_(std::move(inner)) {}
  std::string kind() const override { return "dense_concat"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void fingerprint(std::uint64_t& h) const override;
  void visit(const std::function<void(const Layer&)>& fn) const override;

 private:
  LayerPtr inner_;
  std::size_t input_channels_ = 0;
};

}  // namespace v4d
