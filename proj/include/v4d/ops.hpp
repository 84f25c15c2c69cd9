#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "v4d/tensor.hpp"

namespace v4d {

enum class Padding { Same, Valid };

/// How the temporal dimension of a sample is processed.
enum class ConvMode {
  Mode3D,   // last frame only, 3D convolutions
  Mode3DC,  // frames stacked into channels, 3D convolutions
  ModeF4D,  // spatial then temporal 4D convolution pairs
  Mode4D,   // full 4D convolutions
};

enum class FactorOrder { SpatialFirst, TemporalFirst };

std::string to_string(ConvMode mode);
ConvMode parse_conv_mode(const std::string& s);
bool is_temporal(ConvMode mode);

/// Convolution parameters.
///
/// weights: [kD,kH,kW,Cin,Cout] for conv3d, [kT,kD,kH,kW,Cin,Cout] for the 4D ops.
/// stride: one entry per convolved axis (3 or 4).
/// "same" padding centres odd kernels: offset (k-1)/2, output extent ceil(n/s).
struct ConvParams {
  Tensor weights;
  Tensor bias;
  std::vector<std::size_t> stride;
  Padding padding = Padding::Same;
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

struct FactorizedGrads {
  Tensor input;
  ConvGrads spatial;  // weights/bias only; .input unused
  ConvGrads temporal;
};

/// Output extent along one axis, validating the kernel against the input.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding);

Tensor conv3d(const Tensor& input, const ConvParams& p);
ConvGrads conv3d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

/// Full 4D convolution over [N,T,D,H,W,C], computed as a sum over temporal
/// kernel taps of 3D convolutions of the time-shifted frames.
Tensor conv4d_full(const Tensor& input, const ConvParams& p);
ConvGrads conv4d_full_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

/// Two successive 4D convolutions: spatial kernel [1,kD,kH,kW] and temporal
/// kernel [kT,1,1,1]. No activation between the stages.
Tensor conv4d_factorized(const Tensor& input, const ConvParams& spatial, const ConvParams& temporal,
                         FactorOrder order = FactorOrder::SpatialFirst);
FactorizedGrads conv4d_factorized_backward(const Tensor& input, const ConvParams& spatial,
                                           const ConvParams& temporal, const Tensor& grad_out,
                                           FactorOrder order = FactorOrder::SpatialFirst);

/// [N,T,D,H,W,C] -> [N,D,H,W,T*C]; output channel t*C+c holds frame t channel c.
Tensor channel_stack(const Tensor& input);
/// Inverse of channel_stack.
Tensor channel_unstack(const Tensor& stacked, std::size_t frames);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output cell
};

/// Max pooling over any rank; window/stride have one entry per axis. With
/// Padding::Same, out-of-range cells are skipped (never selected). Ties go to
/// the lowest flat index.
PoolResult maxpool_with_indices(const Tensor& input, std::span<const std::size_t> window,
                                std::span<const std::size_t> stride, Padding padding = Padding::Valid);
Tensor maxpool(const Tensor& input, std::span<const std::size_t> window, std::span<const std::size_t> stride,
               Padding padding = Padding::Valid);
Tensor maxpool_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& grad_out);

/// Mean over every axis except the first (batch) and the last (channel).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

Tensor dense_affine(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_affine_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu(const Tensor& input);
/// Subgradient 0 at exactly 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

}  // namespace v4d
