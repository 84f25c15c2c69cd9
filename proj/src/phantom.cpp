#include "v4d/phantom.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace v4d {

void TrajectoryConfig::validate() const {
  if (knots_min < 2 || knots_min > knots_max) throw std::invalid_argument("trajectory: need 2 <= knots_min <= knots_max");
  if (samples_per_spline < 2) throw std::invalid_argument("trajectory: samples_per_spline must be >= 2");
  const double smallest = *std::min_element(fov_mm.begin(), fov_mm.end());
  if (!(smallest > 0.0)) throw std::invalid_argument("trajectory: FOV must be positive");
  if (margin_mm < 0.0 || margin_mm >= smallest / 2.0) {
    throw std::invalid_argument("trajectory: margin must be in [0, min(fov)/2)");
  }
}

void PhantomConfig::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (extents[a] == 0) throw std::invalid_argument("phantom: zero volume extent");
    if (!(fov_mm[a] > 0.0)) throw std::invalid_argument("phantom: FOV must be positive");
    if (marker_edge_mm > fov_mm[a]) throw std::invalid_argument("phantom: marker does not fit in the FOV");
  }
  if (!(marker_edge_mm > 0.0)) throw std::invalid_argument("phantom: marker edge must be positive");
  if (marker_intensity < 0.0 || background_intensity < 0.0) {
    throw std::invalid_argument("phantom: intensities must be non-negative");
  }
  if (noise_std < 0.0) throw std::invalid_argument("phantom: noise std must be non-negative");
}

Vec3 PhantomConfig::voxel_pitch() const {
  return {fov_mm[0] / static_cast<double>(extents[0]), fov_mm[1] / static_cast<double>(extents[1]),
          fov_mm[2] / static_cast<double>(extents[2])};
}

std::vector<Vec3> generate_knots(const TrajectoryConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_int_distribution<std::size_t> count(cfg.knots_min, cfg.knots_max);
  const std::size_t j = count(rng);
  std::array<std::uniform_real_distribution<double>, 3> axis{
      std::uniform_real_distribution<double>(cfg.margin_mm, cfg.fov_mm[0] - cfg.margin_mm),
      std::uniform_real_distribution<double>(cfg.margin_mm, cfg.fov_mm[1] - cfg.margin_mm),
      std::uniform_real_distribution<double>(cfg.margin_mm, cfg.fov_mm[2] - cfg.margin_mm)};
  std::vector<Vec3> knots(j);
  for (auto& k : knots)
    for (std::size_t a = 0; a < 3; ++a) k[a] = axis[a](rng);
  return knots;
}

std::vector<Vec3> generate_trajectory(const TrajectoryConfig& cfg, std::mt19937_64& rng) {
  const auto knots = generate_knots(cfg, rng);
  return sample_spline(fit_spline(knots), cfg.samples_per_spline);
}

double interval_overlap(double lo, double hi, double a, double b) {
  const double len = std::min(hi, b) - std::max(lo, a);
  return len > 0.0 ? len / (hi - lo) : 0.0;
}

Tensor render_volume(const Vec3& pos, const PhantomConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(pos[a] >= 0.0 && pos[a] <= cfg.fov_mm[a])) {
      throw std::invalid_argument("render_volume: position outside the FOV on axis " + std::to_string(a));
    }
  }
  const Vec3 pitch = cfg.voxel_pitch();
  const double half = cfg.marker_edge_mm / 2.0;
  std::array<std::vector<double>, 3> cover;
  for (std::size_t a = 0; a < 3; ++a) {
    cover[a].resize(cfg.extents[a]);
    for (std::size_t i = 0; i < cfg.extents[a]; ++i) {
      const double lo = static_cast<double>(i) * pitch[a];
      cover[a][i] = interval_overlap(lo, lo + pitch[a], pos[a] - half, pos[a] + half);
    }
  }
  const auto [d, h, w] = cfg.extents;
  Tensor vol = Tensor::zeros({d, h, w, 1});
  const double contrast = cfg.marker_intensity - cfg.background_intensity;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t k = 0; k < w; ++k, ++flat) {
        double v = cfg.background_intensity + contrast * cover[0][i] * cover[1][j] * cover[2][k];
        if (cfg.noise_std > 0.0) v = std::max(0.0, v * (1.0 + cfg.noise_std * noise(rng)));
        vol[flat] = v;
      }
  return vol;
}

}  // namespace v4d
