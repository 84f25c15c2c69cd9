#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "v4d/layers.hpp"
#include "v4d/metrics.hpp"
#include "v4d/model.hpp"

namespace v4d {

/// Raised when training produces a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean over all entries of (pred - target)^2, with its gradient.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  ParameterStore m;
  ParameterStore v;
  std::uint64_t t = 0;

  static AdamState for_params(const ParameterStore& params, const AdamHyper& hyper = {});
};

/// Bias-corrected Adam update of every parameter; increments state.t.
void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state);

/// Indexed access to (input, target) pairs.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Tensor inputs(std::span<const std::size_t> idx) const = 0;
  virtual Tensor targets(std::span<const std::size_t> idx) const = 0;
};

/// Source over in-memory tensors: inputs [N,...], targets [N,K].
class TensorSource final : public SampleSource {
 public:
  TensorSource(Tensor inputs, Tensor targets);
  std::size_t size() const override { return inputs_.extent(0); }
  Tensor inputs(std::span<const std::size_t> idx) const override;
  Tensor targets(std::span<const std::size_t> idx) const override;

 private:
  Tensor inputs_, targets_;
};

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx);

struct TrainConfig {
  std::size_t epochs = 350;
  std::size_t batch_size = 18;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t report_every = 1;
  double time_budget_s = 0.0;  // 0 = unlimited; checked after each epoch
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mae_units = 0.0;  // calibrated units (micrometres for phantom data)
  double val_rmae = 0.0;
  double wall_ms = 0.0;
};

std::string history_csv_header();
std::string history_csv_row(const EpochRecord& r);

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  std::size_t steps = 0;
  bool budget_exhausted = false;
  AdamState optimizer;
};

/// How validation errors are scaled: calibration for MAE and the per-axis
/// target std (in target units) for rMAE.
struct ErrorScales {
  Calibration cal;
  std::array<double, 3> target_std{1.0, 1.0, 1.0};
};

/// Adam on the MSE loss. Leaves `net` holding the parameters with the best
/// validation MAE seen. Throws NumericalError on a non-finite loss.
FitResult fit(Network& net, const SampleSource& train, const SampleSource& val, const TrainConfig& cfg,
              const ErrorScales& scales = {}, const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace v4d
