#include "v4d/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace v4d {

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  const double n = static_cast<double>(pred.size());
  std::vector<double> grad(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    sum += r * r;
    grad[i] = 2.0 * r / n;
  }
  return LossResult{sum / n, Tensor(pred.shape(), std::move(grad))};
}

AdamState AdamState::for_params(const ParameterStore& params, const AdamHyper& hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& [name, t] : params) {
    s.m.emplace(name, Tensor::zeros(t.shape()));
    s.v.emplace(name, Tensor::zeros(t.shape()));
  }
  return s;
}

void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("adam_step: gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) throw ShapeError("adam_step: gradient shape mismatch for " + name);
  }
  const AdamHyper& h = state.hyper;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto mit = state.m.try_emplace(name, Tensor::zeros(p.shape())).first;
    auto vit = state.v.try_emplace(name, Tensor::zeros(p.shape())).first;
    double* m = mit->second.ptr();
    double* v = vit->second.ptr();
    double* x = p.ptr();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t row = t.size() / t.extent(0);
  Shape shape = t.shape();
  shape[0] = idx.size();
  std::vector<double> data(idx.size() * row);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= t.extent(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(t.ptr() + idx[i] * row, row, data.data() + i * row);
  }
  return Tensor(std::move(shape), std::move(data));
}

TensorSource::TensorSource(Tensor inputs, Tensor targets) : inputs_(std::move(inputs)), targets_(std::move(targets)) {
  if (inputs_.extent(0) != targets_.extent(0)) throw ShapeError("TensorSource: input/target counts differ");
}

Tensor TensorSource::inputs(std::span<const std::size_t> idx) const { return gather_rows(inputs_, idx); }
Tensor TensorSource::targets(std::span<const std::size_t> idx) const { return gather_rows(targets_, idx); }

std::string history_csv_header() { return "epoch,train_mse,val_mae_units,val_rmae,wall_ms"; }

std::string history_csv_row(const EpochRecord& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.epoch << ',' << r.train_mse << ',' << r.val_mae_units << ',' << r.val_rmae << ',' << r.wall_ms;
  return os.str();
}

namespace {

struct ValScore {
  MeanStd mae;
  MeanStd rmae;
};

ValScore score(Network& net, const SampleSource& data, const ErrorScales& scales, std::size_t batch) {
  const std::size_t n = data.size();
  std::vector<Tensor> preds, targets;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    idx.resize(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    preds.push_back(net.forward(data.inputs(idx)));
    targets.push_back(data.targets(idx));
  }
  const Tensor p = concat_axis(preds, 0), t = concat_axis(targets, 0);
  return {mae(p, t, scales.cal), rmae(p, t, scales.target_std)};
}

}  // namespace

FitResult fit(Network& net, const SampleSource& train, const SampleSource& val, const TrainConfig& cfg,
              const ErrorScales& scales, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (cfg.epochs < 1) throw std::invalid_argument("fit: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("fit: empty dataset");

  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  FitResult result;
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  result.optimizer = AdamState::for_params(net.parameters(), hyper);
  ParameterStore best = net.parameters();
  result.best_val_mae = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    if (cfg.shuffle) {
      std::mt19937_64 rng(mix_seed(cfg.seed, epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Tensor x = train.inputs(idx);
      const Tensor y = train.targets(idx);
      net.zero_grad();
      const Tensor pred = net.forward(x);
      LossResult l = mse_loss(pred, y);
      if (!std::isfinite(l.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      net.backward(l.grad);
      adam_step(net.parameters(), net.gradients(), result.optimizer);
      loss_sum += l.loss * static_cast<double>(idx.size());
      ++result.steps;
    }

    const ValScore vs = score(net, val, scales, std::max<std::size_t>(cfg.batch_size, 32));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / static_cast<double>(order.size());
    rec.val_mae_units = vs.mae.mean;
    rec.val_rmae = vs.rmae.mean;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - epoch_start).count();
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mae_units)) {
      throw NumericalError("non-finite metrics after epoch " + std::to_string(epoch));
    }
    if (rec.val_mae_units < result.best_val_mae) {
      result.best_val_mae = rec.val_mae_units;
      result.best_epoch = epoch;
      best = net.parameters();
    }
    result.history.push_back(rec);
    if (on_epoch && (epoch % std::max<std::size_t>(cfg.report_every, 1) == 0 || epoch == cfg.epochs)) on_epoch(rec);

    const double elapsed = std::chrono::duration<double>(Clock::now() - started).count();
    if (cfg.time_budget_s > 0.0 && elapsed > cfg.time_budget_s && epoch < cfg.epochs) {
      result.budget_exhausted = true;
      break;
    }
  }
  net.load_parameters(best);
  return result;
}

}  // namespace v4d
