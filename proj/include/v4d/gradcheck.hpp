#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "v4d/layers.hpp"
#include "v4d/model.hpp"

namespace v4d {

struct GradCheckOptions {
  double tol = 1e-6;          // per-layer relative error bound
  double network_tol = 1e-5;  // full-network bound
  double h = 1e-6;
  std::uint64_t seed = 0;
  std::size_t max_coords = 48;  // per tensor; larger tensors are subsampled
  /// Test fixture: negate the analytic dense bias gradient before comparing.
  bool inject_dense_bias_sign_fault = false;
};

struct GradCheckResult {
  std::string layer;  // layer kind or case label
  double max_rel_error = 0.0;      // beyond the difference's rounding noise
  double max_raw_rel_error = 0.0;  // plain formula, noise included
  std::string worst;  // component with the largest raw error
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbations that crossed a ReLU/pool switch
  double tol = 0.0;
  bool passed = false;
};

/// max(|a-n| - noise, 0) / max(|a|, |n|, 1e-8). `noise` is the rounding
/// uncertainty of the numeric estimate; with 0 this is the plain formula.
double relative_error(double analytic, double numeric, double noise = 0.0);

/// Central-difference check of one layer on the scalar <layer(x), R> for a
/// random R: input gradient plus every parameter in `params`.
GradCheckResult check_layer(const std::string& label, Layer& layer, ParameterStore& params, ParameterStore& grads,
                            const Tensor& input, const GradCheckOptions& opt);

/// Same check through a whole network, on a sampled subset of coordinates.
GradCheckResult check_network(const std::string& label, Network& net, const Tensor& input,
                              const GradCheckOptions& opt);

/// Every layer kind on random small shapes, followed by the tiny network
/// (8^3 volumes, T=3, one block).
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt,
                                                 const std::function<void(const GradCheckResult&)>& on_result = {});

/// ModelSpec for the tiny-network check.
ModelSpec tiny_spec(Family family, ConvMode mode, std::uint64_t seed);

}  // namespace v4d
