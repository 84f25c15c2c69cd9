#pragma once

#include <array>
#include <cstddef>

namespace v4d::detail {

/// Geometry of one channels-last 3D convolution between a single input frame
/// [D,H,W,Cin] and a single output frame [D',H',W',Cout].
struct FrameGeometry {
  std::array<std::size_t, 3> in{};
  std::array<std::size_t, 3> out{};
  std::array<std::size_t, 3> kernel{};
  std::array<std::size_t, 3> stride{};
  std::array<std::size_t, 3> offset{};  // padding before
  std::size_t cin = 0;
  std::size_t cout = 0;

  std::size_t in_frame() const { return in[0] * in[1] * in[2] * cin; }
  std::size_t out_frame() const { return out[0] * out[1] * out[2] * cout; }
  std::size_t weight_slice() const { return kernel[0] * kernel[1] * kernel[2] * cin * cout; }
};

// All three accumulate into their destination (no zeroing, no bias).
void frame_forward(const double* in, const double* w, double* out, const FrameGeometry& g);
void frame_backward_input(const double* grad_out, const double* w, double* grad_in, const FrameGeometry& g);
void frame_backward_weight(const double* in, const double* grad_out, double* grad_w, const FrameGeometry& g);

}  // namespace v4d::detail
