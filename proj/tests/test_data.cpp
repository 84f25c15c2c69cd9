#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include "json.hpp"
#include "oracles.hpp"
#include "v4d/dataset.hpp"
#include "v4d/phantom.hpp"
#include "v4d/spline.hpp"

using namespace v4d;
namespace fs = std::filesystem;

namespace {

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

std::vector<Vec3> random_knots(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<Vec3> k(n);
  for (auto& p : k) p = {u(rng), u(rng), u(rng)};
  return k;
}

// Polynomial of segment j at local u, straight from the coefficients.
double poly(const SplinePath& s, size_t j, size_t a, double u) {
  const auto& c = s.coeffs[j][a];
  return c[0] + c[1] * u + c[2] * u * u + c[3] * u * u * u;
}

DatasetConfig small_config(uint64_t seed = 3) {
  DatasetConfig c;
  c.trajectory.knots_min = 6;
  c.trajectory.knots_max = 9;
  c.trajectory.samples_per_spline = 20;
  c.trajectory.seed = seed;
  c.phantom.extents = {8, 8, 8};
  c.phantom.seed = seed + 100;
  c.frames = 5;
  c.split = {24, 10, 6};
  c.total_examples = 40;
  return c;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("v4d_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

// --- spline ------------------------------------------------------------------

TEST(Spline, TwoKnotsLinear) {
  const std::vector<Vec3> k{{0, 0, 0}, {2, 4, -6}};
  const SplinePath s = fit_spline(k);
  const Vec3 mid = s.evaluate(0.5);
  EXPECT_NEAR(mid[0], 1.0, 1e-15);
  EXPECT_NEAR(mid[1], 2.0, 1e-15);
  EXPECT_NEAR(mid[2], -3.0, 1e-15);
  const auto pts = sample_spline(s, 5);
  for (size_t i = 0; i < 5; ++i)
    for (size_t a = 0; a < 3; ++a) EXPECT_NEAR(pts[i][a], k[1][a] * double(i) / 4.0, 1e-15);
}

TEST(Spline, CollinearKnotsStayCollinear) {
  std::mt19937_64 rng(60);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const Vec3 origin{0.3, -1.0, 2.0}, dir{1.0, 2.0, -0.5};
  std::vector<Vec3> k;
  for (int i = 0; i < 12; ++i) {
    const double t = u(rng);
    k.push_back({origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]});
  }
  for (const auto& p : sample_spline(fit_spline(k), 300)) {
    // distance from the line: |(p - o) x dir| / |dir|
    const Vec3 d{p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]};
    const Vec3 c{d[1] * dir[2] - d[2] * dir[1], d[2] * dir[0] - d[0] * dir[2], d[0] * dir[1] - d[1] * dir[0]};
    EXPECT_LE(dist(c, {0, 0, 0}) / dist(dir, {0, 0, 0}), 1e-9);
  }
}

TEST(Spline, MatchesDenseSolverOracle) {
  std::mt19937_64 rng(61);
  for (int rep = 0; rep < 10; ++rep) {
    const auto k = random_knots(10, rng);
    const SplinePath s = fit_spline(k);
    for (size_t a = 0; a < 3; ++a) {
      std::vector<double> y;
      for (const auto& p : k) y.push_back(p[a]);
      const auto M = oracle::natural_spline_moments(y);
      for (size_t j = 0; j + 1 < k.size(); ++j) {
        const auto want = oracle::spline_segment(y, M, j);
        for (size_t c = 0; c < 4; ++c) EXPECT_NEAR(s.coeffs[j][a][c], want[c], 1e-9);
      }
    }
  }
}

// Interpolation at both ends of every segment and C2 continuity across
// interior knots; natural boundary conditions at the ends.
TEST(Property, SplineInterpolationAndContinuity) {
  std::mt19937_64 rng(62);
  for (int rep = 0; rep < 20; ++rep) {
    const size_t n = 2 + rng() % 90;
    const auto k = random_knots(n, rng);
    const SplinePath s = fit_spline(k);
    for (size_t j = 0; j < n; ++j) {
      const Vec3 e = s.evaluate(double(j));
      for (size_t a = 0; a < 3; ++a) {
        EXPECT_LE(std::abs(e[a] - k[j][a]), 1e-9);
        if (j + 1 < n) {
          EXPECT_LE(std::abs(poly(s, j, a, 0.0) - k[j][a]), 1e-9);
          EXPECT_LE(std::abs(poly(s, j, a, 1.0) - k[j + 1][a]), 1e-9);
        }
      }
    }
    for (size_t j = 1; j + 1 < n; ++j) {
      const Vec3 l = s.second_derivative(j - 1, 1.0), r = s.second_derivative(j, 0.0);
      for (size_t a = 0; a < 3; ++a) {
        EXPECT_LE(std::abs(l[a] - r[a]), 1e-6);
        // first derivative continuity too
        const auto& cl = s.coeffs[j - 1][a];
        const auto& cr = s.coeffs[j][a];
        EXPECT_LE(std::abs(cl[1] + 2 * cl[2] + 3 * cl[3] - cr[1]), 1e-9);
      }
    }
    const Vec3 d0 = s.second_derivative(0, 0.0), d1 = s.second_derivative(n - 2, 1.0);
    for (size_t a = 0; a < 3; ++a) {
      EXPECT_LE(std::abs(d0[a]), 1e-9);
      EXPECT_LE(std::abs(d1[a]), 1e-9);
    }
  }
}

TEST(Spline, SampleAtKnotsReturnsKnots) {
  std::mt19937_64 rng(63);
  const auto k = random_knots(17, rng);
  const auto pts = sample_spline(fit_spline(k), 17);
  for (size_t j = 0; j < 17; ++j)
    for (size_t a = 0; a < 3; ++a) EXPECT_LE(std::abs(pts[j][a] - k[j][a]), 1e-12);
}

TEST(Spline, CurvedPathNotEquidistant) {
  const std::vector<Vec3> k{{0, 0, 0}, {1, 1, 0}, {2, 0, 0}};
  const auto pts = sample_spline(fit_spline(k), 50);
  double lo = INFINITY, hi = 0;
  for (size_t i = 1; i < pts.size(); ++i) {
    lo = std::min(lo, dist(pts[i], pts[i - 1]));
    hi = std::max(hi, dist(pts[i], pts[i - 1]));
  }
  EXPECT_GT(hi / lo, 1.0 + 1e-6);
}

TEST(Spline, Rejections) {
  const std::vector<Vec3> one{{0, 0, 0}};
  EXPECT_THROW(fit_spline(one), std::invalid_argument);
  const std::vector<Vec3> two{{0, 0, 0}, {1, 1, 1}};
  EXPECT_THROW(sample_spline(fit_spline(two), 1), std::invalid_argument);
}

// --- knots and rendering ----------------------------------------------------------

TEST(Knots, DegenerateBoxCollapsesToCentre) {
  TrajectoryConfig cfg;
  cfg.fov_mm = {3.0, 3.0, 3.0};
  const double eps = 1e-3;
  cfg.margin_mm = 1.5 - eps;
  std::mt19937_64 rng(64);
  for (const auto& k : generate_knots(cfg, rng))
    for (size_t a = 0; a < 3; ++a) EXPECT_LE(std::abs(k[a] - 1.5), eps);
}

TEST(Knots, CountRangeAndDeterminism) {
  TrajectoryConfig cfg;
  std::mt19937_64 a(65), b(65);
  for (int i = 0; i < 20; ++i) {
    const auto ka = generate_knots(cfg, a);
    EXPECT_GE(ka.size(), 60u);
    EXPECT_LE(ka.size(), 90u);
    EXPECT_EQ(ka, generate_knots(cfg, b));
  }
}

TEST(Knots, UniformBoxStatistics) {
  TrajectoryConfig cfg;
  cfg.knots_min = cfg.knots_max = 10000;
  std::mt19937_64 rng(66);
  const auto k = generate_knots(cfg, rng);
  for (size_t a = 0; a < 3; ++a) {
    double lo = INFINITY, hi = -INFINITY, sum = 0;
    for (const auto& p : k) {
      lo = std::min(lo, p[a]);
      hi = std::max(hi, p[a]);
      sum += p[a];
    }
    const double width = cfg.fov_mm[a] - 2 * cfg.margin_mm;
    EXPECT_GE(lo, cfg.margin_mm);
    EXPECT_LE(hi, cfg.fov_mm[a] - cfg.margin_mm);
    const double sigma = width / std::sqrt(12.0 * double(k.size()));
    EXPECT_LE(std::abs(sum / double(k.size()) - cfg.fov_mm[a] / 2), 3 * sigma);
  }
}

TEST(Knots, InvalidConfig) {
  TrajectoryConfig cfg;
  cfg.knots_min = 91;
  std::mt19937_64 rng(0);
  EXPECT_THROW(generate_knots(cfg, rng), std::invalid_argument);
  cfg = {};
  cfg.margin_mm = 1.5;
  EXPECT_THROW(generate_knots(cfg, rng), std::invalid_argument);
}

namespace {
// 0.1 mm voxels so a 1 mm cube centred at 1.6 mm covers voxels 11..20 exactly.
PhantomConfig aligned_phantom() {
  PhantomConfig c;
  c.extents = {32, 32, 32};
  c.fov_mm = {3.2, 3.2, 3.2};
  c.noise_std = 0.0;
  return c;
}
}  // namespace

TEST(Render, AlignedCubeClosedForm) {
  const PhantomConfig cfg = aligned_phantom();
  std::mt19937_64 rng(0);
  const Tensor v = render_volume({1.6, 1.6, 1.6}, cfg, rng);
  EXPECT_EQ(v.shape(), (Shape{32, 32, 32, 1}));
  for (size_t i = 12; i < 20; ++i)
    for (size_t j = 12; j < 20; ++j)
      for (size_t k = 12; k < 20; ++k) EXPECT_EQ(v.at({i, j, k, 0}), 1.0);
  EXPECT_EQ(v.at({0, 0, 0, 0}), 0.05);
  EXPECT_EQ(v.at({5, 16, 16, 0}), 0.05);
  EXPECT_EQ(v.at({16, 16, 25, 0}), 0.05);
  // marker width per axis: edge / fov * extent = 10 voxels, +-1
  size_t covered = 0;
  for (size_t i = 0; i < 32; ++i) covered += v.at({i, 16, 16, 0}) > 0.5 ? 1 : 0;
  EXPECT_LE(std::abs(double(covered) - 10.0), 1.0);
}

TEST(Render, TranslationByOneVoxel) {
  const PhantomConfig cfg = aligned_phantom();
  std::mt19937_64 rng(0);
  const Vec3 pos{1.23, 1.57, 1.71};
  const Tensor a = render_volume(pos, cfg, rng);
  const Tensor b = render_volume({pos[0] + 0.1, pos[1], pos[2]}, cfg, rng);
  for (size_t i = 1; i < 31; ++i)
    for (size_t j = 0; j < 32; ++j)
      for (size_t k = 0; k < 32; ++k) EXPECT_NEAR(b.at({i + 1, j, k, 0}), a.at({i, j, k, 0}), 1e-9);
}

TEST(Render, CentroidRecoversPosition) {
  PhantomConfig cfg;  // default 32^3 over 3 x 3 x 3.5 mm
  cfg.noise_std = 0.0;
  const Vec3 pitch = cfg.voxel_pitch();
  std::mt19937_64 rng(67);
  for (int rep = 0; rep < 100; ++rep) {
    Vec3 pos;
    for (size_t a = 0; a < 3; ++a) pos[a] = std::uniform_real_distribution<double>(0.6, cfg.fov_mm[a] - 0.6)(rng);
    const Tensor v = render_volume(pos, cfg, rng);
    Vec3 c{};
    double mass = 0;
    for (size_t i = 0; i < 32; ++i)
      for (size_t j = 0; j < 32; ++j)
        for (size_t k = 0; k < 32; ++k) {
          const double m = v.at({i, j, k, 0}) - cfg.background_intensity;
          mass += m;
          c[0] += m * (double(i) + 0.5) * pitch[0];
          c[1] += m * (double(j) + 0.5) * pitch[1];
          c[2] += m * (double(k) + 0.5) * pitch[2];
        }
    for (size_t a = 0; a < 3; ++a) EXPECT_LE(std::abs(c[a] / mass - pos[a]), 0.5 * pitch[a]);
  }
}

TEST(Render, NoiseIsMultiplicativeAndNonNegative) {
  PhantomConfig cfg;
  cfg.extents = {8, 8, 8};
  cfg.noise_std = 5.0;
  std::mt19937_64 rng(68);
  const Tensor v = render_volume({1.5, 1.5, 1.75}, cfg, rng);
  size_t zeros = 0;
  for (double x : v.data()) {
    EXPECT_GE(x, 0.0);
    zeros += x == 0.0;
  }
  EXPECT_GT(zeros, 0u);
  EXPECT_THROW(render_volume({-0.1, 1, 1}, cfg, rng), std::invalid_argument);
  EXPECT_THROW(render_volume({1, 1, 3.6}, cfg, rng), std::invalid_argument);
}

// --- dataset -----------------------------------------------------------------

TEST(Dataset, WindowArithmetic) {
  EXPECT_EQ(window_starts(20, 5).size(), 16u);
  EXPECT_EQ(window_starts(4, 5).size(), 0u);
  EXPECT_EQ(window_starts(5, 5), std::vector<size_t>{0});

  DatasetConfig c = small_config();
  c.split = {16, 1, 1};
  c.total_examples = 18;
  const DatasetSplits d = build_dataset(c);
  ASSERT_EQ(d.train.size(), 16u);
  for (const auto& s : d.train.samples) EXPECT_EQ(s.frame_trajectory, std::vector<uint32_t>(5, 0u));
  // consecutive windows share four frames
  for (size_t i = 1; i < 16; ++i) EXPECT_EQ(d.train.samples[i].frames[0], d.train.samples[i - 1].frames[1]);
}

TEST(Dataset, SequencesNeverCrossTrajectories) {
  const DatasetSplits d = build_dataset(small_config());
  std::vector<uint32_t> train_ids, other_ids;
  for (const Dataset* ds : {&d.train, &d.val, &d.test})
    for (const auto& s : ds->samples) {
      ASSERT_EQ(s.frames.size(), 5u);
      for (uint32_t id : s.frame_trajectory) EXPECT_EQ(id, s.frame_trajectory.front());
      (ds == &d.train ? train_ids : other_ids).push_back(s.frame_trajectory.front());
    }
  for (uint32_t id : other_ids) EXPECT_EQ(std::count(train_ids.begin(), train_ids.end(), id), 0);
  EXPECT_EQ(d.train.size(), 24u);
  EXPECT_EQ(d.val.size(), 10u);
  EXPECT_EQ(d.test.size(), 6u);
}

TEST(Dataset, TargetIsLastFramePosition) {
  DatasetConfig c = small_config();
  c.phantom.noise_std = 0.0;
  const DatasetSplits d = build_dataset(c);
  std::mt19937_64 rng(0);
  for (const Dataset* ds : {&d.train, &d.test})
    for (const auto& s : ds->samples) {
      const Tensor want = render_volume(ds->norm.denormalize(s.target), c.phantom, rng);
      EXPECT_LE(max_abs_diff(*s.frames.back(), want), 1e-9);
    }
}

TEST(Dataset, NormalisationUsesTrainStatistics) {
  const DatasetSplits d = build_dataset(small_config());
  const auto raw = d.train.raw_targets();
  Vec3 mean{}, sd{};
  for (const auto& p : raw)
    for (size_t a = 0; a < 3; ++a) mean[a] += p[a] / double(raw.size());
  for (const auto& p : raw)
    for (size_t a = 0; a < 3; ++a) sd[a] += (p[a] - mean[a]) * (p[a] - mean[a]) / double(raw.size());
  for (size_t a = 0; a < 3; ++a) {
    EXPECT_NEAR(std::sqrt(sd[a]), d.raw_train_std[a], 1e-9);
    EXPECT_NEAR(mean[a], d.train.norm.mean[a], 1e-9);
  }
  EXPECT_EQ(d.val.norm.mean, d.train.norm.mean);
  EXPECT_EQ(d.test.norm.scale, d.train.norm.scale);
  // val statistics differ from the stored record
  Vec3 vmean{};
  for (const auto& p : d.val.raw_targets())
    for (size_t a = 0; a < 3; ++a) vmean[a] += p[a] / double(d.val.size());
  EXPECT_NE(vmean, d.train.norm.mean);
  // normalize/denormalize round trip
  const Vec3 p{0.7, 1.9, 2.2};
  const Vec3 back = d.train.norm.denormalize(d.train.norm.normalize(p));
  for (size_t a = 0; a < 3; ++a) EXPECT_NEAR(back[a], p[a], 1e-12);
}

TEST(Dataset, SaveIsByteIdenticalAndLoadsBack) {
  TempDir a("ds_a"), b("ds_b");
  const DatasetConfig c = small_config();
  const DatasetSplits d = build_dataset(c);
  save_dataset(a.path, c, d);
  save_dataset(b.path, c, build_dataset(c));
  for (const char* f : {"manifest.json", "train.bin", "val.bin", "test.bin"}) {
    ASSERT_TRUE(fs::exists(a.path / f)) << f;
    EXPECT_EQ(read_bytes(a.path / f), read_bytes(b.path / f)) << f;
  }
  const LoadedDataset l = load_dataset(a.path);
  EXPECT_EQ(l.config.to_text(), c.to_text());
  ASSERT_EQ(l.data.train.size(), d.train.size());
  std::vector<size_t> all(d.train.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(l.data.train.sequences(all), d.train.sequences(all));
  EXPECT_EQ(l.data.train.targets(all), d.train.targets(all));
  EXPECT_EQ(l.data.raw_train_std, d.raw_train_std);
  // overlapping windows share frame storage after load
  EXPECT_EQ(l.data.train.samples[1].frames[0].get(), l.data.train.samples[0].frames[1].get());
}

TEST(Dataset, DifferentSeedDifferentFiles) {
  TempDir a("seed_a"), b("seed_b");
  save_dataset(a.path, small_config(3), build_dataset(small_config(3)));
  save_dataset(b.path, small_config(4), build_dataset(small_config(4)));
  EXPECT_NE(read_bytes(a.path / "train.bin"), read_bytes(b.path / "train.bin"));
}

TEST(Dataset, ManifestVersionChecked) {
  TempDir a("ver");
  const DatasetConfig c = small_config();
  save_dataset(a.path, c, build_dataset(c));
  auto rewrite = [&](unsigned v) {
    auto j = nlohmann::json::parse(read_bytes(a.path / "manifest.json"));
    j["format_version"] = v;
    std::ofstream(a.path / "manifest.json") << j.dump();
  };
  rewrite(kDatasetFormatVersion + 1);
  EXPECT_THROW(load_dataset(a.path), FormatError);
  rewrite(0);
  EXPECT_THROW(load_dataset(a.path), FormatError);
  rewrite(kDatasetFormatVersion);
  EXPECT_NO_THROW(load_dataset(a.path));
  EXPECT_THROW(load_dataset(a.path / "missing"), FormatError);
}

TEST(Dataset, InconsistentSplitRejected) {
  DatasetConfig c = small_config();
  c.total_examples = 41;
  EXPECT_THROW(build_dataset(c), std::invalid_argument);
  c = small_config();
  c.frames = 21;
  EXPECT_THROW(build_dataset(c), std::invalid_argument);
}

TEST(Dataset, ModeSourceShapes) {
  const DatasetSplits d = build_dataset(small_config());
  const std::vector<size_t> idx{0, 3};
  EXPECT_EQ(ModeSource(d.train, ConvMode::Mode3D).inputs(idx).shape(), (Shape{2, 8, 8, 8, 1}));
  EXPECT_EQ(ModeSource(d.train, ConvMode::Mode3DC).inputs(idx).shape(), (Shape{2, 8, 8, 8, 5}));
  EXPECT_EQ(ModeSource(d.train, ConvMode::Mode4D).inputs(idx).shape(), (Shape{2, 5, 8, 8, 8, 1}));
  EXPECT_EQ(d.train.targets(idx).shape(), (Shape{2, 3}));
}
