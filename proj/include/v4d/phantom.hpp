#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "v4d/spline.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

struct TrajectoryConfig {
  std::size_t knots_min = 60;
  std::size_t knots_max = 90;
  std::size_t samples_per_spline = 500;
  Vec3 fov_mm{3.0, 3.0, 3.5};
  double margin_mm = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Simulated volumetric image of a cube marker. Axis a of the position maps to
/// volume axis a (D, H, W).
struct PhantomConfig {
  std::array<std::size_t, 3> extents{32, 32, 32};
  Vec3 fov_mm{3.0, 3.0, 3.5};
  double marker_edge_mm = 1.0;
  double marker_intensity = 1.0;
  double background_intensity = 0.05;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  Vec3 voxel_pitch() const;
};

/// J ~ U{knots_min..knots_max} knots, uniform in the margin-inset FOV box.
std::vector<Vec3> generate_knots(const TrajectoryConfig& cfg, std::mt19937_64& rng);

/// One trajectory: knots -> natural spline -> samples_per_spline points.
std::vector<Vec3> generate_trajectory(const TrajectoryConfig& cfg, std::mt19937_64& rng);

/// Partial-volume cube render plus multiplicative speckle (1 + s N(0,1)),
/// clamped at zero. Returns [D,H,W,1]. Throws if pos lies outside the FOV.
Tensor render_volume(const Vec3& pos, const PhantomConfig& cfg, std::mt19937_64& rng);

/// Fraction of [lo,hi) covered by the interval [a,b].
double interval_overlap(double lo, double hi, double a, double b);

}  // namespace v4d
