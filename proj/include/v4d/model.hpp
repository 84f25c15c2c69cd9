#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "v4d/layers.hpp"
#include "v4d/ops.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

enum class Family { ResNet, Inception, ResNeXt, Densenet };

std::string to_string(Family family);
Family parse_family(const std::string& s);

inline constexpr Family kAllFamilies[] = {Family::ResNet, Family::Inception, Family::ResNeXt, Family::Densenet};
inline constexpr ConvMode kAllModes[] = {ConvMode::Mode3D, ConvMode::Mode3DC, ConvMode::ModeF4D, ConvMode::Mode4D};

struct ModelSpec {
  Family family = Family::ResNet;
  ConvMode mode = ConvMode::Mode3D;
  std::size_t stem_layers = 5;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> module_channel_multipliers{1, 2, 4};
  std::vector<std::size_t> blocks_per_module{2, 2, 2};
  std::size_t spatial_kernel = 3;
  std::size_t temporal_kernel = 3;
  std::size_t cardinality = 4;
  std::size_t growth_rate = 8;
  FactorOrder factor_order = FactorOrder::SpatialFirst;
  std::uint64_t seed = 0;

  /// Canonical structured text (JSON, sorted keys).
  std::string to_text() const;
  static ModelSpec from_text(const std::string& text);
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Per-sample input shape (no batch axis) a mode expects for sequences of
/// `frames` volumes of extent d x h x w with `channels` channels.
Shape sample_shape(ConvMode mode, std::size_t frames, std::size_t d, std::size_t h, std::size_t w,
                   std::size_t channels = 1);

/// Converts a sequence batch [N,T,D,H,W,C] into the network input for `mode`:
/// last frame for 3D, channel stacking for 3D-C, unchanged for F-4D/4D.
Tensor prepare_input(ConvMode mode, const Tensor& sequences);

struct LayerShapeInfo {
  std::string name;
  Shape output;  // per-sample (no batch axis)
};

class Network {
 public:
  /// Takes ownership of a layer graph built against `params`/`grads`.
  Network(std::unique_ptr<ParameterStore> params, std::unique_ptr<ParameterStore> grads,
          std::unique_ptr<Sequential> root, Shape sample_shape);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  /// [N, sample...] -> [N, outputs]. Caches per-layer contexts for backward.
  Tensor forward(const Tensor& batch);
  /// Gradient of the last forward; accumulates into gradients().
  Tensor backward(const Tensor& grad_out);
  void zero_grad();

  ParameterStore& parameters() { return *params_; }
  const ParameterStore& parameters() const { return *params_; }
  const ParameterStore& gradients() const { return *grads_; }
  ParameterStore& gradients() { return *grads_; }

  /// Overwrites parameter values; names and shapes must match exactly.
  void load_parameters(const ParameterStore& values);

  std::size_t parameter_count() const;
  const Shape& sample_shape() const { return sample_shape_; }
  Shape output_shape(std::size_t batch) const;
  const Sequential& root() const { return *root_; }

  /// Per-sample shapes after named stages (stem, each module, head).
  std::vector<LayerShapeInfo> stage_shapes() const { return stages_; }
  void set_stage_shapes(std::vector<LayerShapeInfo> stages) { stages_ = std::move(stages); }

  /// Hash of the ReLU/pooling switching pattern of the last forward.
  std::uint64_t activation_fingerprint() const;

  const ModelSpec* spec() const { return spec_ ? spec_.get() : nullptr; }
  void set_spec(const ModelSpec& spec) { spec_ = std::make_unique<ModelSpec>(spec); }

 private:
  std::unique_ptr<ParameterStore> params_;
  std::unique_ptr<ParameterStore> grads_;
  std::unique_ptr<Sequential> root_;
  Shape sample_shape_;
  std::vector<LayerShapeInfo> stages_;
  std::unique_ptr<ModelSpec> spec_;
};

/// Five-layer stem, one module per blocks_per_module entry (first block
/// strided by two), global average pooling, dense output of width 3.
Network build_model(const ModelSpec& spec, const Shape& sample_shape);

/// Single dense layer F -> outputs.
Network build_linear_model(std::size_t features, std::size_t outputs, std::uint64_t seed);

std::size_t parameter_count(const Network& net);

}  // namespace v4d
