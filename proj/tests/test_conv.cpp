#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "v4d/ops.hpp"

using namespace v4d;

namespace {

size_t pick(std::mt19937_64& rng, size_t lo, size_t hi) { return lo + rng() % (hi - lo + 1); }

struct Case3 {
  Tensor input;
  ConvParams p;
  bool same;
};

// Random conv3d parameterization: extents <= 5, channels <= 3, any stride,
// odd kernels for "same", kernels that fit for "valid".
Case3 random_case3(std::mt19937_64& rng) {
  const bool same = rng() % 2;
  const size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
  Shape in{n}, k;
  std::vector<size_t> s;
  for (int a = 0; a < 3; ++a) {
    const size_t e = pick(rng, 1, 5);
    in.push_back(e);
    size_t kk = same ? 2 * pick(rng, 0, 2) + 1 : pick(rng, 1, e);
    k.push_back(kk);
    s.push_back(pick(rng, 1, 3));
  }
  in.push_back(ci);
  Shape wshape = k;
  wshape.push_back(ci);
  wshape.push_back(co);
  return {oracle::random_tensor(in, rng), {oracle::random_tensor(wshape, rng), oracle::random_tensor({co}, rng), s,
                                            same ? Padding::Same : Padding::Valid},
          same};
}

struct Case4 {
  Tensor input;
  ConvParams p;
  bool same;
};

Case4 random_case4(std::mt19937_64& rng, bool spatial_only = false, bool temporal_only = false) {
  const bool same = rng() % 2;
  const size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
  Shape in{n}, k;
  std::vector<size_t> s;
  for (int a = 0; a < 4; ++a) {
    const size_t e = pick(rng, 1, 5);
    in.push_back(e);
    size_t kk = same ? 2 * pick(rng, 0, 2) + 1 : pick(rng, 1, e);
    if ((spatial_only && a == 0) || (temporal_only && a > 0)) kk = 1;
    k.push_back(kk);
    s.push_back(pick(rng, 1, std::min<size_t>(3, a == 0 ? e : 3)));
  }
  in.push_back(ci);
  Shape wshape = k;
  wshape.push_back(ci);
  wshape.push_back(co);
  return {oracle::random_tensor(in, rng), {oracle::random_tensor(wshape, rng), oracle::random_tensor({co}, rng), s,
                                            same ? Padding::Same : Padding::Valid},
          same};
}

std::array<long, 3> s3(const ConvParams& p) { return {long(p.stride[0]), long(p.stride[1]), long(p.stride[2])}; }
std::array<long, 4> s4(const ConvParams& p) {
  return {long(p.stride[0]), long(p.stride[1]), long(p.stride[2]), long(p.stride[3])};
}

}  // namespace

TEST(Conv3d, IdentityKernel) {
  std::mt19937_64 rng(10);
  const Tensor x = oracle::random_tensor({1, 3, 4, 2, 1}, rng);
  const ConvParams p{Tensor::filled({1, 1, 1, 1, 1}, 1.0), Tensor::zeros({1}), {1, 1, 1}, Padding::Same};
  EXPECT_EQ(conv3d(x, p), x);
}

TEST(Conv3d, ZeroWeights) {
  std::mt19937_64 rng(11);
  const Tensor x = oracle::random_tensor({2, 3, 3, 3, 2}, rng);
  const ConvParams p{Tensor::zeros({3, 3, 3, 2, 4}), Tensor::zeros({4}), {1, 1, 1}, Padding::Same};
  const Tensor y = conv3d(x, p);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 3, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, ValidMatchesOracle) {
  std::mt19937_64 rng(12);
  const Tensor x = oracle::random_tensor({1, 4, 4, 4, 2}, rng);
  const ConvParams p{oracle::random_tensor({3, 3, 3, 2, 3}, rng), oracle::random_tensor({3}, rng), {1, 1, 1},
                     Padding::Valid};
  const Tensor want = oracle::conv3d(x, p.weights, p.bias, {1, 1, 1}, false);
  EXPECT_LE(max_abs_diff(conv3d(x, p), want), 1e-12);
}

TEST(Conv3d, Rejections) {
  const Tensor x = Tensor::zeros({1, 4, 4, 4, 2});
  ConvParams p{Tensor::zeros({3, 3, 3, 3, 1}), Tensor::zeros({1}), {1, 1, 1}, Padding::Same};
  EXPECT_THROW(conv3d(x, p), ShapeError);  // channels
  p.weights = Tensor::zeros({2, 2, 2, 2, 1});
  EXPECT_THROW(conv3d(x, p), ShapeError);  // even kernel with same
  p.weights = Tensor::zeros({5, 1, 1, 2, 1});
  p.padding = Padding::Valid;
  EXPECT_THROW(conv3d(x, p), ShapeError);  // kernel larger than input
  p.weights = Tensor::zeros({1, 1, 1, 2, 1});
  p.stride = {0, 1, 1};
  EXPECT_THROW(conv3d(x, p), ShapeError);
}

TEST(Conv3d, SameExtentsAreCeil) {
  const Tensor x = Tensor::zeros({1, 5, 4, 7, 1});
  const ConvParams p{Tensor::zeros({3, 3, 3, 1, 1}), Tensor::zeros({1}), {2, 3, 2}, Padding::Same};
  EXPECT_EQ(conv3d(x, p).shape(), (Shape{1, 3, 2, 4, 1}));
}

// Oracle equivalence, 100 random parameterizations per op.
TEST(Property, Conv3dOracle100) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 100; ++i) {
    const Case3 c = random_case3(rng);
    const Tensor want = oracle::conv3d(c.input, c.p.weights, c.p.bias, s3(c.p), c.same);
    EXPECT_LE(max_abs_diff(conv3d(c.input, c.p), want), 1e-10) << "case " << i;
  }
}

TEST(Property, Conv4dOracle100) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 100; ++i) {
    const Case4 c = random_case4(rng);
    const Tensor want = oracle::conv4d(c.input, c.p.weights, c.p.bias, s4(c.p), c.same);
    EXPECT_LE(max_abs_diff(conv4d_full(c.input, c.p), want), 1e-10) << "case " << i;
  }
}

TEST(Property, FactorizedOracle100) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 100; ++i) {
    Case4 sp = random_case4(rng, true, false);
    sp.p.padding = Padding::Same;
    // Same padding needs odd kernels; redraw the spatial kernel as odd.
    Shape w = sp.p.weights.shape();
    for (int a = 1; a < 4; ++a) w[a] = 2 * (rng() % 2) + 1;
    sp.p.weights = oracle::random_tensor(w, rng);
    const size_t co = w[5];
    const size_t kt = 2 * (rng() % 2) + 1;
    const ConvParams tp{oracle::random_tensor({kt, 1, 1, 1, co, co}, rng), oracle::random_tensor({co}, rng),
                        {1, 1, 1, 1}, Padding::Same};
    sp.p.stride[0] = 1;
    const Tensor mid = oracle::conv4d(sp.input, sp.p.weights, sp.p.bias, s4(sp.p), true);
    const Tensor want = oracle::conv4d(mid, tp.weights, tp.bias, s4(tp), true);
    EXPECT_LE(max_abs_diff(conv4d_factorized(sp.input, sp.p, tp), want), 1e-10) << "case " << i;
  }
}

TEST(Conv4d, ValidSmallMatchesOracle) {
  std::mt19937_64 rng(16);
  const Tensor x = oracle::random_tensor({1, 3, 4, 4, 4, 1}, rng);
  const ConvParams p{oracle::random_tensor({2, 2, 2, 2, 1, 1}, rng), oracle::random_tensor({1}, rng), {1, 1, 1, 1},
                     Padding::Valid};
  EXPECT_LE(max_abs_diff(conv4d_full(x, p), oracle::conv4d(x, p.weights, p.bias, {1, 1, 1, 1}, false)), 1e-12);
}

// kT = 1: every output frame is conv3d of the matching input frame, bitwise.
TEST(Property, Conv4dTemporalIdentity) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 30; ++i) {
    const size_t T = pick(rng, 1, 4), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const Tensor x = oracle::random_tensor({2, T, pick(rng, 2, 5), pick(rng, 2, 5), pick(rng, 2, 5), ci}, rng);
    const Tensor w3 = oracle::random_tensor({3, 3, 1, ci, co}, rng);
    const Tensor b = oracle::random_tensor({co}, rng);
    const ConvParams p4{w3.reshaped({1, 3, 3, 1, ci, co}), b, {1, 1, 2, 1}, Padding::Same};
    const ConvParams p3{w3, b, {1, 2, 1}, Padding::Same};
    const Tensor y = conv4d_full(x, p4);
    for (size_t n = 0; n < 2; ++n)
      for (size_t t = 0; t < T; ++t) {
        const Tensor frame = slice_axis(slice_axis(x, 0, n, 1), 1, t, 1);
        Shape fs = frame.shape();
        fs.erase(fs.begin() + 1);
        const Tensor want = conv3d(frame.reshaped(fs), p3);
        const Tensor got = slice_axis(slice_axis(y, 0, n, 1), 1, t, 1);
        EXPECT_EQ(got.flatten(), want.flatten());
      }
  }
}

// Input constant in time: interior frames equal conv3d with the time-summed
// kernel; edge frames miss the padded taps.
TEST(Conv4d, ConstantInTime) {
  std::mt19937_64 rng(18);
  const size_t T = 5;
  const Tensor frame = oracle::random_tensor({1, 4, 3, 4, 2}, rng);
  std::vector<Tensor> frames(T, frame.reshaped({1, 1, 4, 3, 4, 2}));
  const Tensor x = concat_axis(frames, 1);
  const Tensor w = oracle::random_tensor({3, 3, 3, 3, 2, 2}, rng);
  const Tensor zero_b = Tensor::zeros({2});
  const Tensor y = conv4d_full(x, {w, zero_b, {1, 1, 1, 1}, Padding::Same});

  auto spatial_sum = [&](size_t from, size_t to) {
    Tensor s = Tensor::zeros({3, 3, 3, 2, 2});
    for (size_t kt = from; kt < to; ++kt) s.add_inplace(slice_axis(w, 0, kt, 1).reshaped({3, 3, 3, 2, 2}));
    return s;
  };
  const Tensor interior = conv3d(frame, {spatial_sum(0, 3), zero_b, {1, 1, 1}, Padding::Same});
  const Tensor first = conv3d(frame, {spatial_sum(1, 3), zero_b, {1, 1, 1}, Padding::Same});
  const Tensor last = conv3d(frame, {spatial_sum(0, 2), zero_b, {1, 1, 1}, Padding::Same});
  auto out_frame = [&](size_t t) { return slice_axis(y, 1, t, 1).reshaped(interior.shape()); };
  for (size_t t = 1; t + 1 < T; ++t) EXPECT_LE(max_abs_diff(out_frame(t), interior), 1e-12);
  EXPECT_LE(max_abs_diff(out_frame(0), first), 1e-12);
  EXPECT_LE(max_abs_diff(out_frame(T - 1), last), 1e-12);
}

TEST(Conv4d, TemporalStrideBeyondT) {
  const Tensor x = Tensor::zeros({1, 2, 3, 3, 3, 1});
  const ConvParams p{Tensor::zeros({1, 1, 1, 1, 1, 1}), Tensor::zeros({1}), {3, 1, 1, 1}, Padding::Same};
  EXPECT_THROW(conv4d_full(x, p), ShapeError);
}

TEST(Factorized, DeltaTemporalEqualsSpatialStage) {
  std::mt19937_64 rng(19);
  const Tensor x = oracle::random_tensor({2, 3, 4, 4, 3, 2}, rng);
  const ConvParams sp{oracle::random_tensor({1, 3, 3, 3, 2, 3}, rng), oracle::random_tensor({3}, rng),
                      {1, 1, 1, 1}, Padding::Same};
  Tensor delta = Tensor::zeros({1, 1, 1, 1, 3, 3});
  for (size_t c = 0; c < 3; ++c) delta.at({0, 0, 0, 0, c, c}) = 1.0;
  const ConvParams tp{delta, Tensor::zeros({3}), {1, 1, 1, 1}, Padding::Same};
  EXPECT_LE(max_abs_diff(conv4d_factorized(x, sp, tp), conv4d_full(x, sp)), 0.0);
}

// Separability: a[kt] * b[kd,kh,kw] through both stages equals the full 4D
// convolution with the outer-product kernel.
TEST(Property, FactorizedRankOneEqualsFull) {
  std::mt19937_64 rng(20);
  for (int i = 0; i < 20; ++i) {
    const size_t T = pick(rng, 1, 5);
    const Tensor x = oracle::random_tensor({1, T, pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 5), 1}, rng);
    const size_t kt = 2 * pick(rng, 0, 1) + 1, k = 2 * pick(rng, 0, 1) + 1;
    const Tensor a = oracle::random_tensor({kt}, rng);
    const Tensor b = oracle::random_tensor({k, k, k}, rng);
    Tensor full = Tensor::zeros({kt, k, k, k, 1, 1});
    for (size_t t = 0; t < kt; ++t)
      for (size_t j = 0; j < b.size(); ++j) full[t * b.size() + j] = a[t] * b[j];
    const Tensor z = Tensor::zeros({1});
    const ConvParams sp{b.reshaped({1, k, k, k, 1, 1}), z, {1, 1, 1, 1}, Padding::Same};
    const ConvParams tp{a.reshaped({kt, 1, 1, 1, 1, 1}), z, {1, 1, 1, 1}, Padding::Same};
    const ConvParams fp{full, z, {1, 1, 1, 1}, Padding::Same};
    EXPECT_LE(max_abs_diff(conv4d_factorized(x, sp, tp), conv4d_full(x, fp)), 1e-12);
    EXPECT_LE(max_abs_diff(conv4d_factorized(x, sp, tp, FactorOrder::TemporalFirst), conv4d_full(x, fp)), 1e-12);
  }
}

TEST(Factorized, KernelShapeChecks) {
  const Tensor x = Tensor::zeros({1, 3, 3, 3, 3, 1});
  const Tensor z = Tensor::zeros({1});
  const ConvParams bad{Tensor::zeros({3, 3, 3, 3, 1, 1}), z, {1, 1, 1, 1}, Padding::Same};
  const ConvParams tp{Tensor::zeros({3, 1, 1, 1, 1, 1}), z, {1, 1, 1, 1}, Padding::Same};
  EXPECT_THROW(conv4d_factorized(x, bad, tp), ShapeError);
  EXPECT_THROW(conv4d_factorized(x, tp, tp), ShapeError);
}

// Linearity of zero-bias convolutions.
TEST(Property, Linearity) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 30; ++i) {
    Case4 c = random_case4(rng);
    c.p.bias = Tensor::zeros(c.p.bias.shape());
    const Tensor y = oracle::random_tensor(c.input.shape(), rng);
    const double a = u(rng), b = u(rng);
    Tensor mix = c.input;
    mix.scale_inplace(a);
    Tensor by = y;
    by.scale_inplace(b);
    mix.add_inplace(by);
    Tensor want = conv4d_full(c.input, c.p);
    want.scale_inplace(a);
    Tensor wy = conv4d_full(y, c.p);
    wy.scale_inplace(b);
    want.add_inplace(wy);
    EXPECT_LE(max_abs_diff(conv4d_full(mix, c.p), want), 1e-10);

    Case3 c3 = random_case3(rng);
    c3.p.bias = Tensor::zeros(c3.p.bias.shape());
    const Tensor y3 = oracle::random_tensor(c3.input.shape(), rng);
    Tensor m3 = c3.input;
    m3.scale_inplace(a);
    Tensor b3 = y3;
    b3.scale_inplace(b);
    m3.add_inplace(b3);
    Tensor w3 = conv3d(c3.input, c3.p);
    w3.scale_inplace(a);
    Tensor t3 = conv3d(y3, c3.p);
    t3.scale_inplace(b);
    w3.add_inplace(t3);
    EXPECT_LE(max_abs_diff(conv3d(m3, c3.p), w3), 1e-10);
  }
}

// Backward: adjoint identity <conv(x), g> == <x, conv_backward(g)> and the
// weight gradient equals the oracle-derived sum over outputs.
TEST(Property, Conv4dBackwardAdjoint) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 50; ++i) {
    Case4 c = random_case4(rng);
    const Tensor y = conv4d_full(c.input, c.p);
    const Tensor g = oracle::random_tensor(y.shape(), rng);
    const ConvGrads gr = conv4d_full_backward(c.input, c.p, g);
    double lhs = 0.0, rhs = 0.0, bias_term = 0.0;
    for (size_t j = 0; j < y.size(); ++j) lhs += (y[j] - c.p.bias[j % c.p.bias.size()]) * g[j];
    for (size_t j = 0; j < c.input.size(); ++j) rhs += c.input[j] * gr.input[j];
    // the same scalar is also linear in the weights
    double rw = 0.0;
    for (size_t j = 0; j < c.p.weights.size(); ++j) rw += c.p.weights[j] * gr.weights[j];
    EXPECT_NEAR(lhs, rhs, 1e-10 * (1.0 + std::abs(lhs)));
    EXPECT_NEAR(lhs, rw, 1e-10 * (1.0 + std::abs(lhs)));
    for (size_t co = 0; co < c.p.bias.size(); ++co) {
      double s = 0.0;
      for (size_t j = co; j < g.size(); j += c.p.bias.size()) s += g[j];
      bias_term += std::abs(s - gr.bias[co]);
    }
    EXPECT_LE(bias_term, 1e-10);
  }
}

TEST(ChannelStack, SingleFrameSqueeze) {
  std::mt19937_64 rng(23);
  const Tensor x = oracle::random_tensor({2, 1, 3, 2, 2, 3}, rng);
  const Tensor s = channel_stack(x);
  EXPECT_EQ(s.shape(), (Shape{2, 3, 2, 2, 3}));
  EXPECT_EQ(s.flatten(), x.flatten());
}

TEST(ChannelStack, TwoFramesInOrder) {
  // frames A (all 1) and B (all 2), C = 1
  std::vector<double> d(2 * 8);
  std::fill(d.begin(), d.begin() + 8, 1.0);
  std::fill(d.begin() + 8, d.end(), 2.0);
  const Tensor s = channel_stack(tensor_create({1, 2, 2, 2, 2, 1}, d));
  for (size_t v = 0; v < 8; ++v) {
    EXPECT_EQ(s[v * 2 + 0], 1.0);
    EXPECT_EQ(s[v * 2 + 1], 2.0);
  }
}

TEST(ChannelStack, IndexMapAndInverse) {
  std::mt19937_64 rng(24);
  const Tensor x = oracle::random_tensor({1, 5, 2, 2, 2, 3}, rng);
  const Tensor s = channel_stack(x);
  for (size_t t = 0; t < 5; ++t)
    for (size_t d = 0; d < 2; ++d)
      for (size_t h = 0; h < 2; ++h)
        for (size_t w = 0; w < 2; ++w)
          for (size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at({0, d, h, w, t * 3 + c}), x.at({0, t, d, h, w, c}));
  auto a = x.flatten(), b = s.flatten();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(channel_unstack(s, 5), x);
  EXPECT_THROW(channel_stack(Tensor::zeros({1, 2, 2, 2, 2})), ShapeError);
}
