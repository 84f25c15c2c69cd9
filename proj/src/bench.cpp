#include "v4d/bench.hpp"

#include <chrono>
#include <random>
#include <sstream>

#include "v4d/metrics.hpp"
#include "v4d/ops.hpp"

namespace v4d {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

template <class F>
double time_median(std::size_t warmup, std::size_t reps, F&& f) {
  for (std::size_t i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(std::move(ms));
}

}  // namespace

std::vector<BenchResult> run_kernel_bench(const BenchOptions& opt) {
  if (opt.reps == 0) throw std::invalid_argument("bench: reps must be positive");
  std::mt19937_64 rng(opt.seed);
  const std::size_t c = opt.channels, k = opt.kernel, kt = opt.temporal_kernel;
  std::vector<BenchResult> out;
  for (std::size_t n : opt.extents) {
    const Tensor vol = random_tensor({1, n, n, n, c}, rng);
    const Tensor seq = random_tensor({1, opt.frames, n, n, n, c}, rng);
    const ConvParams p3{random_tensor({k, k, k, c, c}, rng), Tensor::zeros({c}), {1, 1, 1}, Padding::Same};
    const ConvParams p4{random_tensor({kt, k, k, k, c, c}, rng), Tensor::zeros({c}), {1, 1, 1, 1}, Padding::Same};
    const ConvParams ps{random_tensor({1, k, k, k, c, c}, rng), Tensor::zeros({c}), {1, 1, 1, 1}, Padding::Same};
    const ConvParams pt{random_tensor({kt, 1, 1, 1, c, c}, rng), Tensor::zeros({c}), {1, 1, 1, 1}, Padding::Same};

    auto row = [&](const char* name, std::size_t frames, double ms) {
      out.push_back({name, n, frames, c, ms, opt.reps});
    };
    row("conv3d", 1, time_median(opt.warmup, opt.reps, [&] { (void)conv3d(vol, p3); }));
    row("conv4d_full", opt.frames, time_median(opt.warmup, opt.reps, [&] { (void)conv4d_full(seq, p4); }));
    row("conv4d_factorized", opt.frames,
        time_median(opt.warmup, opt.reps, [&] { (void)conv4d_factorized(seq, ps, pt); }));
  }
  return out;
}

std::string bench_csv_header() { return "kernel,extent,frames,channels,median_ms,reps"; }

std::string bench_csv_row(const BenchResult& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.kernel << ',' << r.extent << ',' << r.frames << ',' << r.channels << ',' << r.median_ms << ',' << r.reps;
  return os.str();
}

}  // namespace v4d
