#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "v4d/model.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

class Dataset;

/// Micrometres per target unit, per axis.
struct Calibration {
  std::array<double, 3> um_per_unit{1.0, 1.0, 1.0};
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Per-sample error = mean over the 3 axes of |pred - target| * scale;
/// returns mean and population std over samples.
MeanStd mae(const Tensor& pred, const Tensor& target, const Calibration& cal);

/// Per-sample error = mean over axes of |pred - target| / std_axis.
MeanStd rmae(const Tensor& pred, const Tensor& target, const std::array<double, 3>& target_std);

double median(std::vector<double> values);

/// Median wall-clock milliseconds of a single-sample forward pass.
double measure_latency(Network& net, const Tensor& sample, std::size_t warmup, std::size_t reps);

struct EvalReport {
  std::string family;
  std::string mode;
  std::uint64_t seed = 0;
  MeanStd mae_um;
  MeanStd rmae;
  std::size_t n_params = 0;
  double inference_ms = 0.0;
  std::size_t n_samples = 0;
  std::string spec_text;

  static std::string csv_header();
  std::string csv_row() const;
  std::string to_text() const;
};

struct EvalOptions {
  std::size_t batch_size = 32;
  std::size_t latency_warmup = 5;
  std::size_t latency_reps = 31;  // 0 skips latency measurement
};

/// Calibration of a phantom dataset: normalized units -> micrometres.
Calibration dataset_calibration(const Dataset& data);

/// Predicts a dataset with `net` (built for the dataset's sample shape in
/// `mode`), returning normalized predictions [N,3].
Tensor predict(Network& net, ConvMode mode, const Dataset& data, std::size_t batch_size = 32);

EvalReport evaluate(Network& net, ConvMode mode, const Dataset& test, const Calibration& cal,
                    const EvalOptions& options = {});

}  // namespace v4d
