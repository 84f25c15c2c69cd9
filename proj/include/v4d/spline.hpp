#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace v4d {

using Vec3 = std::array<double, 3>;

/// Natural cubic spline through 3D knots at uniform parameters tau_j = j.
///
/// On segment j (tau in [j, j+1], u = tau - j) coordinate a is
///   coeffs[j][a][0] + coeffs[j][a][1] u + coeffs[j][a][2] u^2 + coeffs[j][a][3] u^3.
struct SplinePath {
  std::vector<Vec3> knots;
  std::vector<std::array<std::array<double, 4>, 3>> coeffs;

  std::size_t segments() const { return coeffs.size(); }
  double tau_max() const { return static_cast<double>(knots.size() - 1); }

  Vec3 evaluate(double tau) const;
  /// Second derivative on a given segment at local parameter u in [0,1].
  Vec3 second_derivative(std::size_t segment, double u) const;
};

/// Zero second derivative at both ends. Throws for fewer than 2 knots.
SplinePath fit_spline(std::span<const Vec3> knots);

/// `count` points at equally spaced tau over [0, J-1], endpoints included.
std::vector<Vec3> sample_spline(const SplinePath& path, std::size_t count);

}  // namespace v4d
