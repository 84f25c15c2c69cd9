#include "v4d/spline.hpp"

#include <cmath>
#include <stdexcept>

namespace v4d {

SplinePath fit_spline(std::span<const Vec3> knots) {
  if (knots.size() < 2) throw std::invalid_argument("fit_spline: need at least 2 knots");
  const std::size_t n = knots.size();
  SplinePath path;
  path.knots.assign(knots.begin(), knots.end());
  path.coeffs.resize(n - 1);

  for (std::size_t a = 0; a < 3; ++a) {
    // Second derivatives M with M_0 = M_{n-1} = 0 and unit spacing:
    //   M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i+1} - 2 y_i + y_{i-1}).
    std::vector<double> m(n, 0.0);
    if (n > 2) {
      const std::size_t inner = n - 2;
      std::vector<double> diag(inner, 4.0), rhs(inner);
      for (std::size_t i = 0; i < inner; ++i) {
        rhs[i] = 6.0 * (knots[i + 2][a] - 2.0 * knots[i + 1][a] + knots[i][a]);
      }
      // Thomas algorithm, unit off-diagonals.
      for (std::size_t i = 1; i < inner; ++i) {
        const double w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
      }
      m[inner] = rhs[inner - 1] / diag[inner - 1];
      for (std::size_t i = inner - 1; i-- > 0;) m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
    }
    for (std::size_t j = 0; j + 1 < n; ++j) {
      const double y0 = knots[j][a], y1 = knots[j + 1][a];
      auto& c = path.coeffs[j][a];
      c[0] = y0;
      c[1] = (y1 - y0) - (2.0 * m[j] + m[j + 1]) / 6.0;
      c[2] = m[j] / 2.0;
      c[3] = (m[j + 1] - m[j]) / 6.0;
    }
  }
  return path;
}

Vec3 SplinePath::evaluate(double tau) const {
  if (knots.empty()) throw std::logic_error("evaluate on empty spline");
  if (tau <= 0.0) return knots.front();
  if (tau >= tau_max()) return knots.back();
  const double whole = std::floor(tau);
  const auto seg = static_cast<std::size_t>(whole);
  if (whole == tau) return knots[seg];
  const double u = tau - whole;
  Vec3 p{};
  for (std::size_t a = 0; a < 3; ++a) {
    const auto& c = coeffs[seg][a];
    p[a] = c[0] + u * (c[1] + u * (c[2] + u * c[3]));
  }
  return p;
}

Vec3 SplinePath::second_derivative(std::size_t segment, double u) const {
  Vec3 d{};
  for (std::size_t a = 0; a < 3; ++a) {
    const auto& c = coeffs.at(segment)[a];
    d[a] = 2.0 * c[2] + 6.0 * c[3] * u;
  }
  return d;
}

std::vector<Vec3> sample_spline(const SplinePath& path, std::size_t count) {
  if (count < 2) throw std::invalid_argument("sample_spline: count must be >= 2");
  std::vector<Vec3> out(count);
  const double span = path.tau_max();
  for (std::size_t k = 0; k < count; ++k) {
    out[k] = path.evaluate(static_cast<double>(k) * span / static_cast<double>(count - 1));
  }
  return out;
}

}  // namespace v4d
