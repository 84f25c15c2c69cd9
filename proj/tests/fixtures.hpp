#pragma once

// Small shared problems for tests and the acceptance run.

#include <random>

#include "oracles.hpp"
#include "v4d/optim.hpp"

namespace fixture {

// Exactly linear targets y = x W + b on uniform inputs; the least-squares
// optimum has zero loss.
struct LinearProblem {
  v4d::Tensor x, y, w, b;
};

inline LinearProblem linear_problem(std::size_t n = 64, std::size_t features = 4, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  LinearProblem p;
  p.x = oracle::random_tensor({n, features}, rng);
  p.w = oracle::random_tensor({features, 3}, rng);
  p.b = oracle::random_tensor({3}, rng, -0.5, 0.5);
  p.y = oracle::matmul_bias(p.x, p.w, p.b);
  return p;
}

// Full-batch Adam for `steps` steps; returns the final training MSE.
inline double train_linear(const LinearProblem& p, std::size_t steps, double lr, std::uint64_t seed = 0) {
  v4d::Network net = v4d::build_linear_model(p.x.extent(1), 3, seed);
  const v4d::TensorSource src(p.x, p.y);
  v4d::TrainConfig cfg;
  cfg.epochs = steps;
  cfg.batch_size = p.x.extent(0);
  cfg.lr = lr;
  cfg.seed = seed;
  v4d::fit(net, src, src, cfg);
  return v4d::mse_loss(net.forward(p.x), p.y).loss;
}

inline constexpr double kLinearLr = 0.01;

}  // namespace fixture
