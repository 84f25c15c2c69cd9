#include "v4d/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "v4d/dataset.hpp"

namespace v4d {

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* op) {
  if (pred.shape() != target.shape() || pred.rank() != 2 || pred.extent(1) != 3) {
    throw ShapeError(std::string(op) + ": expected matching [N,3] tensors, got " + shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  }
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

}  // namespace

MeanStd mae(const Tensor& pred, const Tensor& target, const Calibration& cal) {
  check_pair(pred, target, "mae");
  std::vector<double> per_sample(pred.extent(0));
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    double e = 0.0;
    for (std::size_t a = 0; a < 3; ++a) e += std::abs(pred[i * 3 + a] - target[i * 3 + a]) * cal.um_per_unit[a];
    per_sample[i] = e / 3.0;
  }
  return mean_std(per_sample);
}

MeanStd rmae(const Tensor& pred, const Tensor& target, const std::array<double, 3>& target_std) {
  check_pair(pred, target, "rmae");
  for (double s : target_std) {
    if (!(s > 0.0)) throw std::invalid_argument("rmae: target std must be positive on every axis");
  }
  std::vector<double> per_sample(pred.extent(0));
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    double e = 0.0;
    for (std::size_t a = 0; a < 3; ++a) e += std::abs(pred[i * 3 + a] - target[i * 3 + a]) / target_std[a];
    per_sample[i] = e / 3.0;
  }
  return mean_std(per_sample);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double measure_latency(Network& net, const Tensor& sample, std::size_t warmup, std::size_t reps) {
  if (reps < 3) throw std::invalid_argument("measure_latency: reps must be >= 3");
  Shape batched{1};
  batched.insert(batched.end(), sample.shape().begin(), sample.shape().end());
  const Tensor x = sample.rank() == net.sample_shape().size() ? sample.reshaped(batched) : sample;
  for (std::size_t i = 0; i < warmup; ++i) (void)net.forward(x);
  std::vector<double> times;
  times.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.forward(x);
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(std::move(times));
}

std::string EvalReport::csv_header() {
  return "family,mode,seed,mae_um_mean,mae_um_std,rmae_mean,rmae_std,n_params,inference_ms,n_samples";
}

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os.precision(8);
  os << family << ',' << mode << ',' << seed << ',' << mae_um.mean << ',' << mae_um.std << ',' << rmae.mean << ','
     << rmae.std << ',' << n_params << ',' << inference_ms << ',' << n_samples;
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << "family: " << family << "\nmode: " << mode << "\nseed: " << seed << "\nmae_um: " << mae_um.mean << " +- "
     << mae_um.std << "\nrmae: " << rmae.mean << " +- " << rmae.std << "\nparameters: " << n_params
     << "\ninference_ms: " << inference_ms << "\nsamples: " << n_samples << "\nspec: " << spec_text << '\n';
  return os.str();
}

Calibration dataset_calibration(const Dataset& data) {
  Calibration cal;
  for (std::size_t a = 0; a < 3; ++a) cal.um_per_unit[a] = data.norm.scale[a] * 1000.0;
  return cal;
}

Tensor predict(Network& net, ConvMode mode, const Dataset& data, std::size_t batch_size) {
  ModeSource src(data, mode);
  std::vector<Tensor> preds;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    preds.push_back(net.forward(src.inputs(idx)));
  }
  return concat_axis(preds, 0);
}

EvalReport evaluate(Network& net, ConvMode mode, const Dataset& test, const Calibration& cal,
                    const EvalOptions& options) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const Tensor pred = predict(net, mode, test, options.batch_size);
  const Tensor target = test.all_targets();

  // Back to millimetres for the relative error against the raw target spread.
  auto to_raw = [&](const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < t.extent(0); ++i) {
      const Vec3 r = test.norm.denormalize({t[i * 3], t[i * 3 + 1], t[i * 3 + 2]});
      for (std::size_t a = 0; a < 3; ++a) out[i * 3 + a] = r[a];
    }
    return out;
  };

  EvalReport r;
  if (const ModelSpec* spec = net.spec()) {
    r.family = to_string(spec->family);
    r.mode = to_string(spec->mode);
    r.seed = spec->seed;
    r.spec_text = spec->to_text();
  } else {
    r.mode = to_string(mode);
  }
  r.mae_um = mae(pred, target, cal);
  r.rmae = rmae(to_raw(pred), to_raw(target), test.norm.scale);
  r.n_params = net.parameter_count();
  r.n_samples = test.size();
  if (options.latency_reps > 0) {
    const std::size_t first[] = {0};
    r.inference_ms = measure_latency(net, ModeSource(test, mode).inputs(first), options.latency_warmup,
                                     std::max<std::size_t>(options.latency_reps, 3));
  }
  return r;
}

}  // namespace v4d
