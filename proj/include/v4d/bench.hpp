#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace v4d {

struct BenchOptions {
  std::vector<std::size_t> extents{16, 32};  // desk and paper-scale volumes
  std::size_t frames = 5;
  std::size_t channels = 8;  // cin == cout
  std::size_t kernel = 3;
  std::size_t temporal_kernel = 3;
  std::size_t warmup = 1;
  std::size_t reps = 5;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::string kernel;  // conv3d | conv4d_full | conv4d_factorized
  std::size_t extent = 0;
  std::size_t frames = 0;  // 1 for conv3d
  std::size_t channels = 0;
  double median_ms = 0.0;
  std::size_t reps = 0;
};

/// Single-sample forward timings of the three convolution kernels. conv3d
/// runs on one volume, the 4D kernels on `frames` volumes.
std::vector<BenchResult> run_kernel_bench(const BenchOptions& opt);

std::string bench_csv_header();
std::string bench_csv_row(const BenchResult& r);

}  // namespace v4d
