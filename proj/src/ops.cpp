#include "v4d/ops.hpp"

#include <algorithm>
#include <array>
#include <limits>

#include "conv_kernels.hpp"
#include "v4d/parallel.hpp"

namespace v4d {

using detail::FrameGeometry;

std::string to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::Mode3D: return "3d";
    case ConvMode::Mode3DC: return "3d-c";
    case ConvMode::ModeF4D: return "f-4d";
    case ConvMode::Mode4D: return "4d";
  }
  return "?";
}

ConvMode parse_conv_mode(const std::string& s) {
  if (s == "3d" || s == "3D") return ConvMode::Mode3D;
  if (s == "3d-c" || s == "3D-C" || s == "3dc") return ConvMode::Mode3DC;
  if (s == "f-4d" || s == "F-4D" || s == "f4d") return ConvMode::ModeF4D;
  if (s == "4d" || s == "4D") return ConvMode::Mode4D;
  throw std::invalid_argument("unknown conv mode '" + s + "' (expected 3d, 3d-c, f-4d, 4d)");
}

bool is_temporal(ConvMode mode) { return mode == ConvMode::ModeF4D || mode == ConvMode::Mode4D; }

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw ShapeError("stride must be >= 1");
  if (k == 0) throw ShapeError("kernel extent must be >= 1");
  if (padding == Padding::Same) {
    if (k % 2 == 0) throw ShapeError("'same' padding needs odd kernel extents, got " + std::to_string(k));
    return (in + stride - 1) / stride;
  }
  if (k > in) {
    throw ShapeError("kernel extent " + std::to_string(k) + " larger than input extent " + std::to_string(in));
  }
  return (in - k) / stride + 1;
}

namespace {

// A 4D convolution problem; conv3d is the T=1, kT=1 special case.
struct ConvSetup {
  std::size_t batch = 0;
  std::size_t t_in = 1, t_out = 1, kt = 1, st = 1, offt = 0;
  FrameGeometry g;

  Shape out_shape(bool temporal) const {
    if (temporal) return {batch, t_out, g.out[0], g.out[1], g.out[2], g.cout};
    return {batch, g.out[0], g.out[1], g.out[2], g.cout};
  }
};

ConvSetup make_setup(const Tensor& input, const ConvParams& p, bool temporal, const char* op) {
  const std::string name(op);
  const std::size_t in_rank = temporal ? 6 : 5;
  if (input.rank() != in_rank) {
    throw ShapeError(name + ": input must be rank " + std::to_string(in_rank) + ", got " + shape_str(input.shape()));
  }
  if (p.weights.rank() != in_rank) {
    throw ShapeError(name + ": weights must be rank " + std::to_string(in_rank) + ", got " +
                     shape_str(p.weights.shape()));
  }
  if (p.stride.size() != in_rank - 2) {
    throw ShapeError(name + ": expected " + std::to_string(in_rank - 2) + " stride entries");
  }
  const Shape& x = input.shape();
  const Shape& w = p.weights.shape();
  const std::size_t cin = x.back();
  if (w[in_rank - 2] != cin) {
    throw ShapeError(name + ": channel mismatch, input has " + std::to_string(cin) + ", kernel expects " +
                     std::to_string(w[in_rank - 2]));
  }
  const std::size_t cout = w.back();
  if (p.bias.rank() != 1 || p.bias.extent(0) != cout) {
    throw ShapeError(name + ": bias must be [" + std::to_string(cout) + "]");
  }

  ConvSetup s;
  s.batch = x[0];
  std::size_t a = 1;
  if (temporal) {
    s.t_in = x[1];
    s.kt = w[0];
    s.st = p.stride[0];
    if (s.st > s.t_in) {
      throw ShapeError(name + ": temporal stride " + std::to_string(s.st) + " exceeds T=" + std::to_string(s.t_in));
    }
    s.t_out = conv_out_extent(s.t_in, s.kt, s.st, p.padding);
    s.offt = p.padding == Padding::Same ? (s.kt - 1) / 2 : 0;
    a = 2;
  }
  const std::size_t wa = temporal ? 1 : 0;
  const std::size_t sa = temporal ? 1 : 0;
  for (std::size_t i = 0; i < 3; ++i) {
    s.g.in[i] = x[a + i];
    s.g.kernel[i] = w[wa + i];
    s.g.stride[i] = p.stride[sa + i];
    s.g.out[i] = conv_out_extent(s.g.in[i], s.g.kernel[i], s.g.stride[i], p.padding);
    s.g.offset[i] = p.padding == Padding::Same ? (s.g.kernel[i] - 1) / 2 : 0;
  }
  s.g.cin = cin;
  s.g.cout = cout;
  return s;
}

Tensor run_forward(const Tensor& input, const ConvParams& p, const ConvSetup& s, bool temporal) {
  const FrameGeometry& g = s.g;
  const std::size_t in_frame = g.in_frame(), out_frame = g.out_frame(), wslice = g.weight_slice();
  std::vector<double> out(s.batch * s.t_out * out_frame);
  const double* x = input.ptr();
  const double* w = p.weights.ptr();
  const double* b = p.bias.ptr();
  parallel_for(s.batch * s.t_out, [&](std::size_t frame) {
    const std::size_t n = frame / s.t_out, to = frame % s.t_out;
    double* o = out.data() + frame * out_frame;
    for (std::size_t v = 0; v < out_frame; v += g.cout) std::copy_n(b, g.cout, o + v);
    for (std::size_t kt = 0; kt < s.kt; ++kt) {
      const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * s.st + kt) - static_cast<std::ptrdiff_t>(s.offt);
      if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(s.t_in)) continue;
      detail::frame_forward(x + (n * s.t_in + static_cast<std::size_t>(ti)) * in_frame, w + kt * wslice, o, g);
    }
  });
  return Tensor(s.out_shape(temporal), std::move(out));
}

ConvGrads run_backward(const Tensor& input, const ConvParams& p, const ConvSetup& s, const Tensor& grad_out,
                       bool temporal, const char* op) {
  if (grad_out.shape() != s.out_shape(temporal)) {
    throw ShapeError(std::string(op) + " backward: upstream gradient " + shape_str(grad_out.shape()) +
                     " != output shape " + shape_str(s.out_shape(temporal)));
  }
  const FrameGeometry& g = s.g;
  const std::size_t in_frame = g.in_frame(), out_frame = g.out_frame(), wslice = g.weight_slice();
  const double* x = input.ptr();
  const double* w = p.weights.ptr();
  const double* go = grad_out.ptr();
  const auto offt = static_cast<std::ptrdiff_t>(s.offt);

  std::vector<double> gin(input.size(), 0.0);
  parallel_for(s.batch * s.t_in, [&](std::size_t frame) {
    const std::size_t n = frame / s.t_in;
    const auto ti = static_cast<std::ptrdiff_t>(frame % s.t_in);
    for (std::size_t to = 0; to < s.t_out; ++to) {
      const std::ptrdiff_t kt = ti + offt - static_cast<std::ptrdiff_t>(to * s.st);
      if (kt < 0 || kt >= static_cast<std::ptrdiff_t>(s.kt)) continue;
      detail::frame_backward_input(go + (n * s.t_out + to) * out_frame, w + static_cast<std::size_t>(kt) * wslice,
                                   gin.data() + frame * in_frame, g);
    }
  });

  // Per-sample weight gradients, reduced in sample order.
  const std::size_t wsize = p.weights.size();
  std::vector<double> per_sample(s.batch * wsize, 0.0);
  parallel_for(s.batch, [&](std::size_t n) {
    double* gw = per_sample.data() + n * wsize;
    for (std::size_t to = 0; to < s.t_out; ++to) {
      for (std::size_t kt = 0; kt < s.kt; ++kt) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * s.st + kt) - offt;
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(s.t_in)) continue;
        detail::frame_backward_weight(x + (n * s.t_in + static_cast<std::size_t>(ti)) * in_frame,
                                      go + (n * s.t_out + to) * out_frame, gw + kt * wslice, g);
      }
    }
  });
  std::vector<double> gw(wsize, 0.0);
  for (std::size_t n = 0; n < s.batch; ++n) {
    const double* src = per_sample.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) gw[i] += src[i];
  }

  std::vector<double> gb(g.cout, 0.0);
  for (std::size_t i = 0; i < grad_out.size(); i += g.cout) {
    for (std::size_t co = 0; co < g.cout; ++co) gb[co] += go[i + co];
  }

  return ConvGrads{Tensor(input.shape(), std::move(gin)), Tensor(p.weights.shape(), std::move(gw)),
                   Tensor(p.bias.shape(), std::move(gb))};
}

void check_factor_kernels(const ConvParams& spatial, const ConvParams& temporal) {
  if (spatial.weights.rank() != 6 || spatial.weights.extent(0) != 1) {
    throw ShapeError("conv4d_factorized: spatial kernel must be [1,kD,kH,kW,Cin,Cout], got " +
                     shape_str(spatial.weights.shape()));
  }
  const Shape& tw = temporal.weights.shape();
  if (tw.size() != 6 || tw[1] != 1 || tw[2] != 1 || tw[3] != 1) {
    throw ShapeError("conv4d_factorized: temporal kernel must be [kT,1,1,1,Cin,Cout], got " + shape_str(tw));
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const ConvParams& p) {
  const ConvSetup s = make_setup(input, p, false, "conv3d");
  return run_forward(input, p, s, false);
}

ConvGrads conv3d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  const ConvSetup s = make_setup(input, p, false, "conv3d");
  return run_backward(input, p, s, grad_out, false, "conv3d");
}

Tensor conv4d_full(const Tensor& input, const ConvParams& p) {
  const ConvSetup s = make_setup(input, p, true, "conv4d_full");
  return run_forward(input, p, s, true);
}

ConvGrads conv4d_full_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  const ConvSetup s = make_setup(input, p, true, "conv4d_full");
  return run_backward(input, p, s, grad_out, true, "conv4d_full");
}

Tensor conv4d_factorized(const Tensor& input, const ConvParams& spatial, const ConvParams& temporal,
                         FactorOrder order) {
  check_factor_kernels(spatial, temporal);
  if (order == FactorOrder::SpatialFirst) return conv4d_full(conv4d_full(input, spatial), temporal);
  return conv4d_full(conv4d_full(input, temporal), spatial);
}

FactorizedGrads conv4d_factorized_backward(const Tensor& input, const ConvParams& spatial,
                                           const ConvParams& temporal, const Tensor& grad_out,
                                           FactorOrder order) {
  check_factor_kernels(spatial, temporal);
  const ConvParams& first = order == FactorOrder::SpatialFirst ? spatial : temporal;
  const ConvParams& second = order == FactorOrder::SpatialFirst ? temporal : spatial;
  const Tensor mid = conv4d_full(input, first);
  ConvGrads g2 = conv4d_full_backward(mid, second, grad_out);
  ConvGrads g1 = conv4d_full_backward(input, first, g2.input);
  FactorizedGrads out;
  out.input = std::move(g1.input);
  g1.input = Tensor();
  g2.input = Tensor();
  if (order == FactorOrder::SpatialFirst) {
    out.spatial = std::move(g1);
    out.temporal = std::move(g2);
  } else {
    out.spatial = std::move(g2);
    out.temporal = std::move(g1);
  }
  return out;
}

Tensor channel_stack(const Tensor& input) {
  if (input.rank() != 6) throw ShapeError("channel_stack: expected rank-6 input, got " + shape_str(input.shape()));
  const Shape& x = input.shape();
  const std::size_t n = x[0], t = x[1], vox = x[2] * x[3] * x[4], c = x[5];
  std::vector<double> out(input.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t f = 0; f < t; ++f) {
      const double* src = input.ptr() + (b * t + f) * vox * c;
      double* dst = out.data() + b * vox * t * c + f * c;
      for (std::size_t v = 0; v < vox; ++v) std::copy_n(src + v * c, c, dst + v * t * c);
    }
  }
  return Tensor({n, x[2], x[3], x[4], t * c}, std::move(out));
}

Tensor channel_unstack(const Tensor& stacked, std::size_t frames) {
  if (stacked.rank() != 5) throw ShapeError("channel_unstack: expected rank-5 input");
  const Shape& x = stacked.shape();
  if (frames == 0 || x[4] % frames != 0) throw ShapeError("channel_unstack: channels not divisible by frames");
  const std::size_t n = x[0], vox = x[1] * x[2] * x[3], c = x[4] / frames;
  std::vector<double> out(stacked.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t f = 0; f < frames; ++f) {
      const double* src = stacked.ptr() + b * vox * frames * c + f * c;
      double* dst = out.data() + (b * frames + f) * vox * c;
      for (std::size_t v = 0; v < vox; ++v) std::copy_n(src + v * frames * c, c, dst + v * c);
    }
  }
  return Tensor({n, frames, x[1], x[2], x[3], c}, std::move(out));
}

PoolResult maxpool_with_indices(const Tensor& input, std::span<const std::size_t> window,
                                std::span<const std::size_t> stride, Padding padding) {
  const std::size_t r = input.rank();
  if (window.size() != r || stride.size() != r) throw ShapeError("maxpool: window/stride rank mismatch");
  // Left-pad everything to rank 6 so one loop nest serves all ranks.
  std::array<std::size_t, 6> in{}, win{}, str{}, off{}, out{};
  const std::size_t lead = 6 - r;
  for (std::size_t a = 0; a < 6; ++a) {
    if (a < lead) {
      in[a] = win[a] = str[a] = out[a] = 1;
      continue;
    }
    const std::size_t i = a - lead;
    if (window[i] == 0) throw ShapeError("maxpool: degenerate window on axis " + std::to_string(i));
    in[a] = input.extent(i);
    win[a] = window[i];
    str[a] = stride[i];
    out[a] = conv_out_extent(in[a], win[a], str[a], padding);
    off[a] = padding == Padding::Same ? (win[a] - 1) / 2 : 0;
  }
  std::array<std::size_t, 6> in_stride{};
  in_stride[5] = 1;
  for (std::size_t a = 5; a-- > 0;) in_stride[a] = in_stride[a + 1] * in[a + 1];

  Shape out_shape(out.begin() + static_cast<std::ptrdiff_t>(lead), out.end());
  std::vector<double> values(shape_size(out_shape));
  std::vector<std::size_t> argmax(values.size());
  std::size_t cell = 0;
  std::array<std::size_t, 6> o{};
  std::array<std::ptrdiff_t, 6> lo{}, hi{};
  for (o[0] = 0; o[0] < out[0]; ++o[0])
  for (o[1] = 0; o[1] < out[1]; ++o[1])
  for (o[2] = 0; o[2] < out[2]; ++o[2])
  for (o[3] = 0; o[3] < out[3]; ++o[3])
  for (o[4] = 0; o[4] < out[4]; ++o[4])
  for (o[5] = 0; o[5] < out[5]; ++o[5]) {
    for (std::size_t a = 0; a < 6; ++a) {
      const auto base = static_cast<std::ptrdiff_t>(o[a] * str[a]) - static_cast<std::ptrdiff_t>(off[a]);
      lo[a] = std::max<std::ptrdiff_t>(base, 0);
      hi[a] = std::min<std::ptrdiff_t>(base + static_cast<std::ptrdiff_t>(win[a]), static_cast<std::ptrdiff_t>(in[a]));
    }
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    bool found = false;
    for (auto i0 = lo[0]; i0 < hi[0]; ++i0)
    for (auto i1 = lo[1]; i1 < hi[1]; ++i1)
    for (auto i2 = lo[2]; i2 < hi[2]; ++i2)
    for (auto i3 = lo[3]; i3 < hi[3]; ++i3)
    for (auto i4 = lo[4]; i4 < hi[4]; ++i4)
    for (auto i5 = lo[5]; i5 < hi[5]; ++i5) {
      const std::size_t flat = static_cast<std::size_t>(i0) * in_stride[0] + static_cast<std::size_t>(i1) * in_stride[1] +
                               static_cast<std::size_t>(i2) * in_stride[2] + static_cast<std::size_t>(i3) * in_stride[3] +
                               static_cast<std::size_t>(i4) * in_stride[4] + static_cast<std::size_t>(i5);
      const double v = input[flat];
      if (!found || v > best) {
        best = v;
        best_idx = flat;
        found = true;
      }
    }
    values[cell] = best;
    argmax[cell] = best_idx;
    ++cell;
  }
  return PoolResult{Tensor(std::move(out_shape), std::move(values)), std::move(argmax)};
}

Tensor maxpool(const Tensor& input, std::span<const std::size_t> window, std::span<const std::size_t> stride,
               Padding padding) {
  return maxpool_with_indices(input, window, stride, padding).output;
}

Tensor maxpool_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool backward: upstream gradient size mismatch");
  Tensor grad = Tensor::zeros(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() < 3) throw ShapeError("global_avg_pool: rank must be >= 3, got " + shape_str(input.shape()));
  const std::size_t n = input.extent(0), c = input.shape().back();
  const std::size_t positions = input.size() / (n * c);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = input.ptr() + b * positions * c;
    double* dst = out.data() + b * c;
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[p * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] /= static_cast<double>(positions);
  }
  return Tensor({n, c}, std::move(out));
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() < 3) throw ShapeError("global_avg_pool backward: bad input shape");
  const std::size_t n = input_shape[0], c = input_shape.back();
  if (grad_out.shape() != Shape{n, c}) throw ShapeError("global_avg_pool backward: upstream gradient shape mismatch");
  const std::size_t positions = shape_size(input_shape) / (n * c);
  const double inv = 1.0 / static_cast<double>(positions);
  Tensor grad = Tensor::zeros(input_shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) grad[(b * positions + p) * c + ch] = grad_out[b * c + ch] * inv;
  return grad;
}

Tensor dense_affine(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("dense_affine: expected input [N,F], weights [F,O], bias [O]");
  }
  const std::size_t n = input.extent(0), f = input.extent(1), o = weights.extent(1);
  if (weights.extent(0) != f) {
    throw ShapeError("dense_affine: input features " + std::to_string(f) + " != weight rows " +
                     std::to_string(weights.extent(0)));
  }
  if (bias.extent(0) != o) throw ShapeError("dense_affine: bias length != output features");
  std::vector<double> out(n * o);
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = out.data() + b * o;
    std::copy_n(bias.ptr(), o, dst);
    for (std::size_t k = 0; k < f; ++k) {
      const double xv = input[b * f + k];
      for (std::size_t j = 0; j < o; ++j) dst[j] += xv * weights[k * o + j];
    }
  }
  return Tensor({n, o}, std::move(out));
}

DenseGrads dense_affine_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const std::size_t n = input.extent(0), f = input.extent(1), o = weights.extent(1);
  if (grad_out.shape() != Shape{n, o}) throw ShapeError("dense_affine backward: upstream gradient shape mismatch");
  std::vector<double> gin(n * f, 0.0), gw(f * o, 0.0), gb(o, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const double* g = grad_out.ptr() + b * o;
    for (std::size_t k = 0; k < f; ++k) {
      const double xv = input[b * f + k];
      double s = 0.0;
      for (std::size_t j = 0; j < o; ++j) {
        s += weights[k * o + j] * g[j];
        gw[k * o + j] += xv * g[j];
      }
      gin[b * f + k] = s;
    }
    for (std::size_t j = 0; j < o; ++j) gb[j] += g[j];
  }
  return DenseGrads{Tensor(input.shape(), std::move(gin)), Tensor(weights.shape(), std::move(gw)),
                    Tensor({o}, std::move(gb))};
}

Tensor relu(const Tensor& input) {
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return Tensor(input.shape(), std::move(out));
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu backward: upstream gradient shape mismatch");
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return Tensor(input.shape(), std::move(out));
}

}  // namespace v4d
