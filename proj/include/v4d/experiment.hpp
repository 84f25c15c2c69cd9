#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "v4d/dataset.hpp"
#include "v4d/metrics.hpp"
#include "v4d/model.hpp"
#include "v4d/optim.hpp"

namespace v4d {

/// Documented defaults that a preset expands to before flag overrides.
struct Preset {
  std::string name;
  DatasetConfig data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;
};

/// "desk": 16^3 volumes, 200 samples per spline, 2000/400/400 sequences,
/// 60 epochs, seeds {0,1,2}. "paper-scale": 32^3, 500 samples per spline,
/// 5000/1000/1000, 350 epochs, seed {0}. Batch 18 and lr 1e-4 in both.
Preset make_preset(const std::string& name);
std::vector<std::string> preset_names();

struct CellResult {
  EvalReport report;
  FitResult fit;
  ModelSpec spec;
  Shape sample_shape;
  ParameterStore params;  // best-validation parameters
  double wall_s = 0.0;
};

/// Builds the model for (family, mode, seed), trains it on `data.train`
/// with validation on `data.val`, and evaluates on `data.test`.
CellResult run_cell(const DatasetSplits& data, ModelSpec spec, const TrainConfig& train,
                    const EvalOptions& eval = {},
                    const std::function<void(const EpochRecord&)>& on_epoch = {});

struct SweepOptions {
  std::vector<Family> families{std::begin(kAllFamilies), std::end(kAllFamilies)};
  std::vector<ConvMode> modes{std::begin(kAllModes), std::end(kAllModes)};
  std::vector<std::uint64_t> seeds{0};
  ModelSpec base;  // family/mode/seed are overwritten per cell
  TrainConfig train;
  EvalOptions eval;
  bool parallel = false;  // run cells concurrently
};

/// Every family x mode x seed cell on shared data. Results come back in
/// (seed, family, mode) order regardless of scheduling. `on_cell` is called
/// as cells finish (serialized).
std::vector<CellResult> run_sweep(const DatasetSplits& data, const SweepOptions& opt,
                                  const std::function<void(const CellResult&)>& on_cell = {});

struct FamilyVerdict {
  std::string family;
  std::array<double, 4> median_mae{};  // indexed like kAllModes; NaN if missing
  bool full_beats_3d = false;          // MAE(4D) < MAE(3D)
  bool factorized_beats_3d = false;    // MAE(F-4D) < MAE(3D)
  bool margin = false;                 // MAE(4D) <= 0.9 MAE(3D)
  bool passed = false;
};

struct Table1Verdict {
  std::vector<FamilyVerdict> families;
  std::size_t families_passing = 0;
  bool passed = false;  // at least 3 of 4 families
};

inline constexpr double kTable1Margin = 0.10;
inline constexpr std::size_t kTable1FamiliesRequired = 3;

/// Medians over seeds of the per-cell test MAE, compared within each family.
Table1Verdict table1_verdict(const std::vector<EvalReport>& reports);

/// Families as rows, modes as columns: median MAE (um) and parameter count.
std::string format_table1(const std::vector<EvalReport>& reports);

}  // namespace v4d
