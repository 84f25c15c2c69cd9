#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "v4d/model.hpp"
#include "v4d/optim.hpp"

namespace v4d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainMetadata {
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double best_val_mae_um = 0.0;
  std::size_t steps = 0;
  std::string dataset;
};

struct Checkpoint {
  ModelSpec spec;
  Shape sample_shape;
  TrainMetadata meta;
  ParameterStore params;
  AdamState optimizer;
};

/// "V4DC", u32 version, structured text (spec, sample shape, metadata, Adam
/// hyperparameters), count-prefixed (name, tensor record) parameter pairs,
/// then the optimizer moments and step counter in the same pair format.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the network described by a checkpoint and loads its parameters.
Network network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace v4d
