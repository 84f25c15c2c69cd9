#include <algorithm>
#include <cstddef>

#include "conv_kernels.hpp"

namespace v4d::detail {

namespace {

using Index = std::ptrdiff_t;

struct TapRange {
  Index lo;
  Index hi;
};

// Kernel taps k with 0 <= o*s + k - off < in.
inline TapRange valid_taps(Index o, Index s, Index off, Index k, Index in) {
  const Index base = o * s - off;
  return {std::max<Index>(0, -base), std::min<Index>(k, in - base)};
}

// Calls fn(in_offset, w_offset, run_length, out_offset) for every contiguous run
// of valid taps. A run covers consecutive kw taps, which touch consecutive input
// voxels, so input and weights are both contiguous over run_length*cin values.
template <typename Fn>
inline void for_each_run(const FrameGeometry& g, Fn&& fn) {
  const Index in_h = static_cast<Index>(g.in[1]), in_w = static_cast<Index>(g.in[2]);
  const Index cin = static_cast<Index>(g.cin), cout = static_cast<Index>(g.cout);
  const Index kh_n = static_cast<Index>(g.kernel[1]), kw_n = static_cast<Index>(g.kernel[2]);
  for (Index od = 0; od < static_cast<Index>(g.out[0]); ++od) {
    const TapRange rd = valid_taps(od, g.stride[0], g.offset[0], g.kernel[0], g.in[0]);
    for (Index oh = 0; oh < static_cast<Index>(g.out[1]); ++oh) {
      const TapRange rh = valid_taps(oh, g.stride[1], g.offset[1], g.kernel[1], g.in[1]);
      for (Index ow = 0; ow < static_cast<Index>(g.out[2]); ++ow) {
        const TapRange rw = valid_taps(ow, g.stride[2], g.offset[2], g.kernel[2], g.in[2]);
        if (rw.lo >= rw.hi) continue;
        const Index out_off = ((od * static_cast<Index>(g.out[1]) + oh) * static_cast<Index>(g.out[2]) + ow) * cout;
        const Index iw0 = ow * static_cast<Index>(g.stride[2]) - static_cast<Index>(g.offset[2]) + rw.lo;
        const Index run = (rw.hi - rw.lo) * cin;
        for (Index kd = rd.lo; kd < rd.hi; ++kd) {
          const Index id = od * static_cast<Index>(g.stride[0]) - static_cast<Index>(g.offset[0]) + kd;
          for (Index kh = rh.lo; kh < rh.hi; ++kh) {
            const Index ih = oh * static_cast<Index>(g.stride[1]) - static_cast<Index>(g.offset[1]) + kh;
            const Index in_off = ((id * in_h + ih) * in_w + iw0) * cin;
            const Index w_off = ((kd * kh_n + kh) * kw_n + rw.lo) * cin * cout;
            fn(in_off, w_off, run, out_off);
          }
        }
      }
    }
  }
}

}  // namespace

void frame_forward(const double* in, const double* w, double* out, const FrameGeometry& g) {
  const Index cout = static_cast<Index>(g.cout);
  for_each_run(g, [&](Index in_off, Index w_off, Index run, Index out_off) {
    const double* __restrict x = in + in_off;
    const double* __restrict wk = w + w_off;
    double* __restrict o = out + out_off;
    for (Index j = 0; j < run; ++j) {
      const double xv = x[j];
      const double* __restrict wr = wk + j * cout;
      for (Index co = 0; co < cout; ++co) o[co] += xv * wr[co];
    }
  });
}

void frame_backward_input(const double* grad_out, const double* w, double* grad_in, const FrameGeometry& g) {
  const Index cout = static_cast<Index>(g.cout);
  for_each_run(g, [&](Index in_off, Index w_off, Index run, Index out_off) {
    const double* __restrict go = grad_out + out_off;
    const double* __restrict wk = w + w_off;
    double* __restrict gi = grad_in + in_off;
    for (Index j = 0; j < run; ++j) {
      const double* __restrict wr = wk + j * cout;
      double s = 0.0;
      for (Index co = 0; co < cout; ++co) s += wr[co] * go[co];
      gi[j] += s;
    }
  });
}

void frame_backward_weight(const double* in, const double* grad_out, double* grad_w, const FrameGeometry& g) {
  const Index cout = static_cast<Index>(g.cout);
  for_each_run(g, [&](Index in_off, Index w_off, Index run, Index out_off) {
    const double* __restrict x = in + in_off;
    const double* __restrict go = grad_out + out_off;
    double* __restrict gw = grad_w + w_off;
    for (Index j = 0; j < run; ++j) {
      const double xv = x[j];
      double* __restrict gr = gw + j * cout;
      for (Index co = 0; co < cout; ++co) gr[co] += xv * go[co];
    }
  });
}

}  // namespace v4d::detail
