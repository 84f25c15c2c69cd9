// v4d: dataset generation, training, evaluation, gradient checks, kernel
// benchmarks and the family x mode sweep.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "v4d/bench.hpp"
#include "v4d/checkpoint.hpp"
#include "v4d/dataset.hpp"
#include "v4d/experiment.hpp"
#include "v4d/gradcheck.hpp"
#include "v4d/metrics.hpp"

namespace fs = std::filesystem;
using namespace v4d;

namespace {

constexpr int kUsageError = 2;
constexpr int kNumericalError = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by several subcommands. Unset optionals fall back to the preset.
struct Options {
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string family = "resnet";
  std::string mode = "4d";
  std::vector<std::string> families, modes;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::string data_dir;
  std::string checkpoint;
  std::string history;
  std::string report;
  std::string out_dir;
  double tol = 1e-6;
  double network_tol = 1e-5;
  bool force = false;
  bool parallel = false;
  bool inject_fault = false;
  double time_budget = 0.0;

  // geometry / data
  std::optional<std::size_t> extent, frames, samples_per_spline;
  std::vector<std::size_t> split;

  // model widths
  std::optional<std::size_t> stem_layers, stem_channels, kernel, temporal_kernel, cardinality, growth_rate;
  std::vector<std::size_t> multipliers, blocks;
  std::string factor_order = "spatial-first";

  // eval / bench
  std::size_t latency_reps = 31;
  std::vector<std::size_t> bench_extents{16, 32};
  std::size_t bench_channels = 8;
  std::size_t bench_reps = 5;
};

void add_preset(CLI::App* cmd, Options& o) {
  cmd->add_option("--preset", o.preset, "Defaults bundle: desk or paper-scale")
      ->check(CLI::IsMember(preset_names()))
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--epochs", o.epochs, "Training epochs [preset: desk 60, paper-scale 350]");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size [preset: 18]");
  cmd->add_option("--lr", o.lr, "Adam learning rate [preset: 1e-4]");
  cmd->add_option("--time-budget", o.time_budget, "Per-run wall-clock budget in seconds, 0 = none")
      ->capture_default_str();
}

void add_model_flags(CLI::App* cmd, Options& o) {
  const ModelSpec d;
  cmd->add_option("--stem-layers", o.stem_layers, "Stem convolutions [" + std::to_string(d.stem_layers) + "]");
  cmd->add_option("--stem-channels", o.stem_channels, "Stem width [" + std::to_string(d.stem_channels) + "]");
  cmd->add_option("--multipliers", o.multipliers, "Module width multipliers [1 2 4]");
  cmd->add_option("--blocks", o.blocks, "Blocks per module [2 2 2]");
  cmd->add_option("--kernel", o.kernel, "Spatial kernel [3]");
  cmd->add_option("--temporal-kernel", o.temporal_kernel, "Temporal kernel [3]");
  cmd->add_option("--cardinality", o.cardinality, "ResNeXt paths [4]");
  cmd->add_option("--growth-rate", o.growth_rate, "Densenet growth rate [8]");
  cmd->add_option("--factor-order", o.factor_order, "F-4D stage order")
      ->check(CLI::IsMember({"spatial-first", "temporal-first"}))
      ->capture_default_str();
}

void add_data_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--extent", o.extent, "Cubic volume extent [preset: desk 16, paper-scale 32]");
  cmd->add_option("--frames", o.frames, "Volumes per sequence [5]");
  cmd->add_option("--split", o.split, "Train/val/test sequence counts [preset: desk 2000 400 400]")->expected(3);
  cmd->add_option("--samples-per-spline", o.samples_per_spline,
                  "Points sampled per trajectory [preset: desk 200, paper-scale 500]");
}

DatasetConfig dataset_config(const Options& o) {
  Preset p = make_preset(o.preset);
  DatasetConfig c = p.data;
  const std::uint64_t seed = o.seed.value_or(0);
  c.trajectory.seed = seed;
  c.phantom.seed = seed;
  if (o.extent) c.phantom.extents = {*o.extent, *o.extent, *o.extent};
  if (o.frames) c.frames = *o.frames;
  if (o.samples_per_spline) c.trajectory.samples_per_spline = *o.samples_per_spline;
  if (!o.split.empty()) {
    c.split = {o.split[0], o.split[1], o.split[2]};
    c.total_examples = o.split[0] + o.split[1] + o.split[2];
  }
  return c;
}

TrainConfig train_config(const Options& o) {
  TrainConfig t = make_preset(o.preset).train;
  if (o.epochs) t.epochs = *o.epochs;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.lr) t.lr = *o.lr;
  t.seed = o.seed.value_or(0);
  t.time_budget_s = o.time_budget;
  return t;
}

ModelSpec model_spec(const Options& o) {
  ModelSpec s;
  s.family = parse_family(o.family);
  s.mode = parse_conv_mode(o.mode);
  s.seed = o.seed.value_or(0);
  if (o.stem_layers) s.stem_layers = *o.stem_layers;
  if (o.stem_channels) s.stem_channels = *o.stem_channels;
  if (!o.multipliers.empty()) s.module_channel_multipliers = o.multipliers;
  if (!o.blocks.empty()) s.blocks_per_module = o.blocks;
  if (o.kernel) s.spatial_kernel = *o.kernel;
  if (o.temporal_kernel) s.temporal_kernel = *o.temporal_kernel;
  if (o.cardinality) s.cardinality = *o.cardinality;
  if (o.growth_rate) s.growth_rate = *o.growth_rate;
  s.factor_order = o.factor_order == "temporal-first" ? FactorOrder::TemporalFirst : FactorOrder::SpatialFirst;
  return s;
}

LoadedDataset require_dataset(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data-dir is required");
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw UsageError("no dataset manifest in " + dir);
  return load_dataset(dir);
}

void print_split_stats(const DatasetSplits& d) {
  for (const Dataset* ds : {&d.train, &d.val, &d.test}) {
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300}, mean{};
    const auto raw = ds->raw_targets();
    for (const Vec3& p : raw)
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
        mean[a] += p[a] / static_cast<double>(raw.size());
      }
    std::printf("%-5s %6zu sequences  mean(mm)=(%.4f, %.4f, %.4f)  range(mm)=[%.3f..%.3f, %.3f..%.3f, %.3f..%.3f]\n",
                to_string(ds->split).c_str(), ds->size(), mean[0], mean[1], mean[2], lo[0], hi[0], lo[1], hi[1],
                lo[2], hi[2]);
  }
  std::printf("train std(mm)=(%.4f, %.4f, %.4f)\n", d.raw_train_std[0], d.raw_train_std[1], d.raw_train_std[2]);
}

int cmd_generate(const Options& o) {
  if (o.data_dir.empty()) throw UsageError("--data-dir is required");
  const fs::path dir(o.data_dir);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) throw UsageError(dir.string() + " exists and is not empty (use --force to overwrite)");
  }
  const DatasetConfig cfg = dataset_config(o);
  cfg.validate();
  const DatasetSplits data = build_dataset(cfg);
  fs::create_directories(dir);
  save_dataset(dir, cfg, data);
  std::printf("dataset written to %s (preset %s, seed %llu)\n", dir.c_str(), o.preset.c_str(),
              static_cast<unsigned long long>(cfg.trajectory.seed));
  print_split_stats(data);
  return 0;
}

int cmd_train(const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const LoadedDataset ld = require_dataset(o.data_dir);
  const ModelSpec spec = model_spec(o);
  const TrainConfig train = train_config(o);

  std::ofstream history;
  const std::string history_path = o.history.empty() ? o.checkpoint + ".history.csv" : o.history;
  history.open(history_path, std::ios::trunc);
  if (!history) throw UsageError("cannot write " + history_path);
  history << history_csv_header() << '\n';

  std::printf("training %s/%s seed=%llu epochs=%zu batch=%zu lr=%g on %zu sequences\n", to_string(spec.family).c_str(),
              to_string(spec.mode).c_str(), static_cast<unsigned long long>(spec.seed), train.epochs,
              train.batch_size, train.lr, ld.data.train.size());
  EvalOptions eval;
  eval.latency_reps = 0;
  const CellResult cell = run_cell(ld.data, spec, train, eval, [&](const EpochRecord& r) {
    history << history_csv_row(r) << '\n';
    history.flush();
    std::printf("epoch %4zu  train_mse=%.6g  val_mae_um=%.4f  val_rmae=%.4f  (%.0f ms)\n", r.epoch, r.train_mse,
                r.val_mae_units, r.val_rmae, r.wall_ms);
    std::fflush(stdout);
  });

  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.sample_shape = cell.sample_shape;
  ckpt.meta = {train.epochs, train.batch_size, train.lr, spec.seed, cell.fit.best_epoch, cell.fit.best_val_mae,
               cell.fit.steps, fs::absolute(o.data_dir).string()};
  ckpt.params = cell.params;
  ckpt.optimizer = cell.fit.optimizer;
  save_checkpoint(o.checkpoint, ckpt);
  std::printf("best epoch %zu, val MAE %.4f um%s; checkpoint %s, history %s\n", cell.fit.best_epoch,
              cell.fit.best_val_mae, cell.fit.budget_exhausted ? " (time budget reached)" : "",
              o.checkpoint.c_str(), history_path.c_str());
  return 0;
}

void append_report(const std::string& path, const std::vector<EvalReport>& rows) {
  if (path.empty()) return;
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw UsageError("cannot write " + path);
  if (fresh) out << EvalReport::csv_header() << '\n';
  for (const auto& r : rows) out << r.csv_row() << '\n';
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty() || !fs::exists(o.checkpoint)) throw UsageError("checkpoint not found: " + o.checkpoint);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const LoadedDataset ld = require_dataset(o.data_dir.empty() ? ckpt.meta.dataset : o.data_dir);
  const Shape& vol = ld.data.test.volume_shape;
  const Shape expected = sample_shape(ckpt.spec.mode, ld.data.test.frames, vol[0], vol[1], vol[2], vol[3]);
  if (expected != ckpt.sample_shape) {
    throw UsageError("checkpoint expects samples " + shape_str(ckpt.sample_shape) + " but the dataset provides " +
                     shape_str(expected));
  }
  Network net = network_from_checkpoint(ckpt);
  EvalOptions opt;
  opt.latency_reps = o.latency_reps;
  const EvalReport r = evaluate(net, ckpt.spec.mode, ld.data.test, dataset_calibration(ld.data.train), opt);
  std::fputs(r.to_text().c_str(), stdout);
  append_report(o.report, {r});
  return 0;
}

int cmd_gradcheck(const Options& o) {
  GradCheckOptions g;
  g.tol = o.tol;
  g.network_tol = o.network_tol;
  g.seed = o.seed.value_or(0);
  g.inject_dense_bias_sign_fault = o.inject_fault;
  std::printf("gradcheck h=%g tol=%g network_tol=%g\n", g.h, g.tol, g.network_tol);
  std::size_t failures = 0;
  run_gradcheck_suite(g, [&](const GradCheckResult& r) {
    failures += r.passed ? 0 : 1;
    std::printf("%-4s %-36s max_rel_err=%.3e (raw %.3e) tol=%g checked=%zu skipped=%zu worst=%s\n",
                r.passed ? "PASS" : "FAIL", r.layer.c_str(), r.max_rel_error, r.max_raw_rel_error, r.tol, r.checked,
                r.skipped, r.worst.c_str());
    std::fflush(stdout);
  });
  if (failures > 0) {
    std::printf("%zu check(s) failed\n", failures);
    return kNumericalError;
  }
  std::printf("all checks passed\n");
  return 0;
}

int cmd_bench(const Options& o) {
  BenchOptions b;
  b.extents = o.bench_extents;
  if (o.frames) b.frames = *o.frames;
  b.channels = o.bench_channels;
  b.reps = o.bench_reps;
  b.seed = o.seed.value_or(0);
  std::ofstream file;
  if (!o.report.empty()) {
    file.open(o.report, std::ios::trunc);
    if (!file) throw UsageError("cannot write " + o.report);
    file << bench_csv_header() << '\n';
  }
  std::printf("%s\n", bench_csv_header().c_str());
  for (const auto& r : run_kernel_bench(b)) {
    std::printf("%s\n", bench_csv_row(r).c_str());
    if (file) file << bench_csv_row(r) << '\n';
  }
  return 0;
}

int cmd_sweep(const Options& o) {
  if (o.data_dir.empty()) throw UsageError("--data-dir is required");
  const Preset preset = make_preset(o.preset);
  if (!fs::exists(fs::path(o.data_dir) / "manifest.json")) {
    std::printf("no dataset in %s; generating with preset %s\n", o.data_dir.c_str(), o.preset.c_str());
    cmd_generate(o);
  }
  const LoadedDataset ld = load_dataset(o.data_dir);

  SweepOptions s;
  s.base = model_spec(o);
  s.train = train_config(o);
  s.seeds = !o.seeds.empty() ? o.seeds : o.seed ? std::vector<std::uint64_t>{*o.seed} : preset.seeds;
  if (!o.families.empty()) {
    s.families.clear();
    for (const auto& f : o.families) s.families.push_back(parse_family(f));
  }
  if (!o.modes.empty()) {
    s.modes.clear();
    for (const auto& m : o.modes) s.modes.push_back(parse_conv_mode(m));
  }
  s.eval.latency_reps = o.latency_reps;
  s.parallel = o.parallel;
  if (!o.out_dir.empty()) fs::create_directories(o.out_dir);

  std::printf("sweep: %zu families x %zu modes x %zu seeds, %zu epochs\n", s.families.size(), s.modes.size(),
              s.seeds.size(), s.train.epochs);
  std::vector<EvalReport> reports;
  const auto cells = run_sweep(ld.data, s, [&](const CellResult& c) {
    std::printf("%-9s %-4s seed=%llu  mae_um=%.3f+-%.3f  rmae=%.4f  params=%zu  latency_ms=%.2f  best_epoch=%zu%s "
                "(%.0f s)\n",
                c.report.family.c_str(), c.report.mode.c_str(), static_cast<unsigned long long>(c.report.seed),
                c.report.mae_um.mean, c.report.mae_um.std, c.report.rmae.mean, c.report.n_params,
                c.report.inference_ms, c.fit.best_epoch, c.fit.budget_exhausted ? " budget" : "", c.wall_s);
    std::fflush(stdout);
    if (!o.out_dir.empty()) {
      const std::string stem = (fs::path(o.out_dir) / (c.report.family + "_" + c.report.mode + "_s" +
                                                         std::to_string(c.report.seed)))
                                   .string();
      Checkpoint ckpt;
      ckpt.spec = c.spec;
      ckpt.sample_shape = c.sample_shape;
      ckpt.meta = {s.train.epochs, s.train.batch_size, s.train.lr, c.spec.seed, c.fit.best_epoch,
                   c.fit.best_val_mae, c.fit.steps, fs::absolute(o.data_dir).string()};
      ckpt.params = c.params;
      ckpt.optimizer = c.fit.optimizer;
      save_checkpoint(stem + ".ckpt", ckpt);
      std::ofstream h(stem + ".history.csv");
      h << history_csv_header() << '\n';
      for (const auto& r : c.fit.history) h << history_csv_row(r) << '\n';
    }
  });
  for (const auto& c : cells) reports.push_back(c.report);
  append_report(o.report, reports);

  std::printf("\nmedian test MAE (um) over seeds, +- test-sample std, (parameters)\n%s",
              format_table1(reports).c_str());
  const Table1Verdict v = table1_verdict(reports);
  for (const auto& f : v.families) {
    std::printf("%-9s 4D<3D:%s F-4D<3D:%s 4D<=0.9x3D:%s\n", f.family.c_str(), f.full_beats_3d ? "yes" : "no",
                f.factorized_beats_3d ? "yes" : "no", f.margin ? "yes" : "no");
  }
  std::printf("ordering holds for %zu/4 families (need %zu)\n", v.families_passing, kTable1FamiliesRequired);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D spatio-temporal CNN engine and experiment harness"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);
  Options o;

  auto* gen = app.add_subcommand("generate", "Generate a phantom dataset");
  add_preset(gen, o);
  gen->add_option("--seed", o.seed, "Trajectory and rendering seed [0]");
  gen->add_option("--data-dir", o.data_dir, "Output directory")->required();
  gen->add_flag("--force", o.force, "Overwrite a non-empty directory");
  add_data_flags(gen, o);

  auto* train = app.add_subcommand("train", "Train one family/mode and write a checkpoint");
  add_preset(train, o);
  train->add_option("--seed", o.seed, "Initialisation and shuffling seed [0]");
  train->add_option("--family", o.family, "resnet | inception | resnext | densenet")->capture_default_str();
  train->add_option("--mode", o.mode, "3d | 3d-c | f-4d | 4d")->capture_default_str();
  train->add_option("--data-dir", o.data_dir, "Dataset directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint output path")->required();
  train->add_option("--history", o.history, "History CSV path [<checkpoint>.history.csv]");
  add_train_flags(train, o);
  add_model_flags(train, o);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint path")->required();
  eval->add_option("--data-dir", o.data_dir, "Dataset directory [as recorded in the checkpoint]");
  eval->add_option("--report", o.report, "CSV file to append the result row to");
  eval->add_option("--latency-reps", o.latency_reps, "Timed single-sample forwards, 0 = skip")
      ->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--tol", o.tol, "Per-layer relative error bound")->capture_default_str();
  grad->add_option("--network-tol", o.network_tol, "Full-network relative error bound")->capture_default_str();
  grad->add_option("--seed", o.seed, "Data and probe seed [0]");
  grad->add_flag("--inject-bias-fault", o.inject_fault, "Negate the dense bias gradient (self-test)");

  auto* bench = app.add_subcommand("bench", "Time the convolution kernels");
  bench->add_option("--extents", o.bench_extents, "Cubic volume extents")->capture_default_str();
  bench->add_option("--frames", o.frames, "Frames for the 4D kernels [5]");
  bench->add_option("--channels", o.bench_channels, "Input and output channels")->capture_default_str();
  bench->add_option("--reps", o.bench_reps, "Timed repetitions per kernel")->capture_default_str();
  bench->add_option("--seed", o.seed, "Data seed [0]");
  bench->add_option("--report", o.report, "CSV output path");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every family x mode cell");
  add_preset(sweep, o);
  sweep->add_option("--seed", o.seed, "Dataset seed, and the model seed when --seeds is unset [0]");
  sweep->add_option("--seeds", o.seeds, "Model seeds [preset: desk 0 1 2, paper-scale 0]");
  sweep->add_option("--family", o.families, "Restrict families [all]");
  sweep->add_option("--mode", o.modes, "Restrict modes [all]");
  sweep->add_option("--data-dir", o.data_dir, "Dataset directory (generated if missing)")->required();
  sweep->add_option("--report", o.report, "CSV file to append one row per cell to");
  sweep->add_option("--out-dir", o.out_dir, "Directory for per-cell checkpoints and histories");
  sweep->add_option("--latency-reps", o.latency_reps, "Timed single-sample forwards per cell")
      ->capture_default_str();
  sweep->add_flag("--force", o.force, "Allow generating into a non-empty directory");
  sweep->add_flag("--parallel", o.parallel, "Run cells concurrently");
  add_train_flags(sweep, o);
  add_model_flags(sweep, o);
  add_data_flags(sweep, o);
  sweep->get_option("--time-budget")->description("Per-cell wall-clock budget in seconds, 0 = none");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*grad) return cmd_gradcheck(o);
    if (*bench) return cmd_bench(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  }
  return kUsageError;
}
