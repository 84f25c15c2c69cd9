#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "v4d/model.hpp"
#include "v4d/optim.hpp"
#include "v4d/phantom.hpp"

namespace v4d {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

enum class Split { Train, Val, Test };
std::string to_string(Split split);

/// Per-axis affine map between raw positions (mm) and normalized targets.
struct NormalizationRecord {
  Vec3 mean{0.0, 0.0, 0.0};
  Vec3 scale{1.0, 1.0, 1.0};

  Vec3 normalize(const Vec3& raw) const;
  Vec3 denormalize(const Vec3& norm) const;
};

/// T consecutive frames [D,H,W,1] of one trajectory; target is the
/// normalized position of the last frame. Frames may be shared between
/// overlapping sequences.
struct SequenceSample {
  std::vector<std::shared_ptr<const Tensor>> frames;
  Vec3 target{};
  std::vector<std::uint32_t> frame_trajectory;  // empty when loaded from disk
};

class Dataset {
 public:
  Split split = Split::Train;
  std::size_t frames = 5;
  Shape volume_shape;  // [D,H,W,1]
  NormalizationRecord norm;
  std::vector<SequenceSample> samples;

  std::size_t size() const { return samples.size(); }
  /// [N,T,D,H,W,1]
  Tensor sequences(std::span<const std::size_t> idx) const;
  /// [N,3], normalized units.
  Tensor targets(std::span<const std::size_t> idx) const;
  Tensor all_targets() const;
  /// Targets mapped back to millimetres.
  std::vector<Vec3> raw_targets() const;
};

/// Adapts a dataset to a network input mode.
class ModeSource final : public SampleSource {
 public:
  ModeSource(const Dataset& data, ConvMode mode) : data_(data), mode_(mode) {}
  std::size_t size() const override { return data_.size(); }
  Tensor inputs(std::span<const std::size_t> idx) const override;
  Tensor targets(std::span<const std::size_t> idx) const override { return data_.targets(idx); }

 private:
  const Dataset& data_;
  ConvMode mode_;
};

/// Sliding windows (stride 1) of length T over a trajectory of `points`
/// samples: returns the start index of each window.
std::vector<std::size_t> window_starts(std::size_t points, std::size_t frames);

struct DatasetConfig {
  TrajectoryConfig trajectory;
  PhantomConfig phantom;
  std::size_t frames = 5;
  std::array<std::size_t, 3> split{5000, 1000, 1000};  // sequences per split
  std::size_t total_examples = 7000;

  void validate() const;
  std::string to_text() const;
  static DatasetConfig from_text(const std::string& text);
};

struct DatasetSplits {
  Dataset train, val, test;
  Vec3 raw_train_std{};  // population std of raw train targets (mm)
};

/// Generates trajectories, renders each point once, and forms stride-1
/// sequence windows. Each split draws from its own trajectories; the final
/// trajectory of a split is truncated. Targets are normalized with train
/// statistics.
DatasetSplits build_dataset(const DatasetConfig& cfg);

/// Manifest plus one binary file per split.
void save_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg, const DatasetSplits& data);

struct LoadedDataset {
  DatasetConfig config;
  DatasetSplits data;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

std::string split_file_name(Split split);

}  // namespace v4d
