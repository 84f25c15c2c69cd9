#include "v4d/dataset.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace v4d {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::string split_file_name(Split split) { return to_string(split) + ".bin"; }

Vec3 NormalizationRecord::normalize(const Vec3& raw) const {
  return {(raw[0] - mean[0]) / scale[0], (raw[1] - mean[1]) / scale[1], (raw[2] - mean[2]) / scale[2]};
}

Vec3 NormalizationRecord::denormalize(const Vec3& n) const {
  return {n[0] * scale[0] + mean[0], n[1] * scale[1] + mean[1], n[2] * scale[2] + mean[2]};
}

Tensor Dataset::sequences(std::span<const std::size_t> idx) const {
  const std::size_t frame_size = shape_size(volume_shape);
  Shape shape{idx.size(), frames};
  shape.insert(shape.end(), volume_shape.begin(), volume_shape.end());
  std::vector<double> data(idx.size() * frames * frame_size);
  double* dst = data.data();
  for (std::size_t i : idx) {
    const SequenceSample& s = samples.at(i);
    for (const auto& f : s.frames) {
      std::copy_n(f->ptr(), frame_size, dst);
      dst += frame_size;
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor Dataset::targets(std::span<const std::size_t> idx) const {
  std::vector<double> data;
  data.reserve(idx.size() * 3);
  for (std::size_t i : idx) {
    const Vec3& t = samples.at(i).target;
    data.insert(data.end(), t.begin(), t.end());
  }
  return Tensor({idx.size(), 3}, std::move(data));
}

Tensor Dataset::all_targets() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return targets(idx);
}

std::vector<Vec3> Dataset::raw_targets() const {
  std::vector<Vec3> out;
  out.reserve(size());
  for (const auto& s : samples) out.push_back(norm.denormalize(s.target));
  return out;
}

Tensor ModeSource::inputs(std::span<const std::size_t> idx) const {
  return prepare_input(mode_, data_.sequences(idx));
}

std::vector<std::size_t> window_starts(std::size_t points, std::size_t frames) {
  std::vector<std::size_t> starts;
  if (frames == 0 || points < frames) return starts;
  for (std::size_t s = 0; s + frames <= points; ++s) starts.push_back(s);
  return starts;
}

// --- config text ------------------------------------------------------------

void DatasetConfig::validate() const {
  trajectory.validate();
  phantom.validate();
  if (frames == 0) throw std::invalid_argument("dataset: sequence length must be >= 1");
  if (frames > trajectory.samples_per_spline) {
    throw std::invalid_argument("dataset: sequence length exceeds samples per trajectory");
  }
  if (split[0] + split[1] + split[2] != total_examples) {
    throw std::invalid_argument("dataset: split " + std::to_string(split[0]) + "/" + std::to_string(split[1]) + "/" +
                                std::to_string(split[2]) + " does not sum to total " + std::to_string(total_examples));
  }
  if (split[0] == 0) throw std::invalid_argument("dataset: empty training split");
  if (trajectory.fov_mm != phantom.fov_mm) throw std::invalid_argument("dataset: trajectory and phantom FOV differ");
}

std::string DatasetConfig::to_text() const {
  json j;
  j["trajectory"] = {{"knots_min", trajectory.knots_min},
                     {"knots_max", trajectory.knots_max},
                     {"samples_per_spline", trajectory.samples_per_spline},
                     {"fov_mm", trajectory.fov_mm},
                     {"margin_mm", trajectory.margin_mm},
                     {"seed", trajectory.seed}};
  j["phantom"] = {{"extents", phantom.extents},
                  {"fov_mm", phantom.fov_mm},
                  {"marker_edge_mm", phantom.marker_edge_mm},
                  {"marker_intensity", phantom.marker_intensity},
                  {"background_intensity", phantom.background_intensity},
                  {"noise_std", phantom.noise_std},
                  {"seed", phantom.seed}};
  j["frames"] = frames;
  j["split"] = split;
  j["total_examples"] = total_examples;
  return j.dump();
}

DatasetConfig DatasetConfig::from_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    DatasetConfig c;
    const json& t = j.at("trajectory");
    c.trajectory.knots_min = t.at("knots_min");
    c.trajectory.knots_max = t.at("knots_max");
    c.trajectory.samples_per_spline = t.at("samples_per_spline");
    c.trajectory.fov_mm = t.at("fov_mm").get<Vec3>();
    c.trajectory.margin_mm = t.at("margin_mm");
    c.trajectory.seed = t.at("seed");
    const json& p = j.at("phantom");
    c.phantom.extents = p.at("extents").get<std::array<std::size_t, 3>>();
    c.phantom.fov_mm = p.at("fov_mm").get<Vec3>();
    c.phantom.marker_edge_mm = p.at("marker_edge_mm");
    c.phantom.marker_intensity = p.at("marker_intensity");
    c.phantom.background_intensity = p.at("background_intensity");
    c.phantom.noise_std = p.at("noise_std");
    c.phantom.seed = p.at("seed");
    c.frames = j.at("frames");
    c.split = j.at("split").get<std::array<std::size_t, 3>>();
    c.total_examples = j.at("total_examples");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad dataset config: ") + e.what());
  }
}

// --- generation -------------------------------------------------------------

namespace {

bool inside_fov(const std::vector<Vec3>& points, const Vec3& fov) {
  for (const auto& p : points)
    for (std::size_t a = 0; a < 3; ++a)
      if (!(p[a] >= 0.0 && p[a] <= fov[a])) return false;
  return true;
}

std::vector<Vec3> trajectory_points(const TrajectoryConfig& cfg, std::uint64_t traj_index) {
  // Natural splines can overshoot the knot box; redraw until the path stays in the FOV.
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, traj_index), attempt));
    auto points = generate_trajectory(cfg, rng);
    if (inside_fov(points, cfg.fov_mm)) return points;
  }
  throw std::runtime_error("could not draw a trajectory inside the FOV");
}

Vec3 population_std(const std::vector<Vec3>& v, const Vec3& mean) {
  Vec3 s{};
  for (const auto& p : v)
    for (std::size_t a = 0; a < 3; ++a) s[a] += (p[a] - mean[a]) * (p[a] - mean[a]);
  for (auto& x : s) x = std::sqrt(x / static_cast<double>(v.size()));
  return s;
}

}  // namespace

DatasetSplits build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const std::size_t T = cfg.frames;
  const auto& [d, h, w] = cfg.phantom.extents;
  DatasetSplits out;
  Dataset* parts[3] = {&out.train, &out.val, &out.test};
  const Split tags[3] = {Split::Train, Split::Val, Split::Test};
  std::array<std::vector<Vec3>, 3> raw;

  std::uint64_t traj_index = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    Dataset& ds = *parts[s];
    ds.split = tags[s];
    ds.frames = T;
    ds.volume_shape = {d, h, w, 1};
    while (ds.samples.size() < cfg.split[s]) {
      const auto points = trajectory_points(cfg.trajectory, traj_index);
      const auto starts = window_starts(points.size(), T);
      const std::size_t take = std::min(starts.size(), cfg.split[s] - ds.samples.size());
      const std::size_t used_points = take + T - 1;
      std::vector<std::shared_ptr<const Tensor>> frames(used_points);
      for (std::size_t p = 0; p < used_points; ++p) {
        std::mt19937_64 rng(mix_seed(mix_seed(cfg.phantom.seed, traj_index), p));
        frames[p] = std::make_shared<const Tensor>(render_volume(points[p], cfg.phantom, rng));
      }
      for (std::size_t i = 0; i < take; ++i) {
        SequenceSample sample;
        sample.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(i),
                             frames.begin() + static_cast<std::ptrdiff_t>(i + T));
        sample.frame_trajectory.assign(T, static_cast<std::uint32_t>(traj_index));
        sample.target = points[i + T - 1];
        raw[s].push_back(sample.target);
        ds.samples.push_back(std::move(sample));
      }
      ++traj_index;
    }
  }

  NormalizationRecord norm;
  for (const auto& p : raw[0])
    for (std::size_t a = 0; a < 3; ++a) norm.mean[a] += p[a];
  for (auto& m : norm.mean) m /= static_cast<double>(raw[0].size());
  out.raw_train_std = population_std(raw[0], norm.mean);
  for (std::size_t a = 0; a < 3; ++a) norm.scale[a] = out.raw_train_std[a] > 0.0 ? out.raw_train_std[a] : 1.0;

  for (Dataset* ds : parts) {
    ds->norm = norm;
    for (auto& sample : ds->samples) sample.target = norm.normalize(sample.target);
  }
  return out;
}

// --- files ------------------------------------------------------------------

void save_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg, const DatasetSplits& data) {
  std::filesystem::create_directories(dir);
  const Dataset* parts[3] = {&data.train, &data.val, &data.test};
  json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["config"] = json::parse(cfg.to_text());
  manifest["normalization"] = {{"mean", data.train.norm.mean}, {"scale", data.train.norm.scale}};
  manifest["raw_train_std_mm"] = data.raw_train_std;
  manifest["counts"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  manifest["volume_shape"] = data.train.volume_shape;
  for (const Dataset* ds : parts) {
    const auto path = dir / split_file_name(ds->split);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + path.string());
    write_u64(f, ds->size());
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const std::size_t one[] = {i};
      const Tensor seq = ds->sequences(one);
      write_tensor_record(f, seq.reshaped(Shape(seq.shape().begin() + 1, seq.shape().end())));
      write_tensor_record(f, Tensor({3}, std::vector<double>(ds->samples[i].target.begin(), ds->samples[i].target.end())));
    }
    if (!f) throw FormatError("write failed for " + path.string());
  }
  std::ofstream m(dir / "manifest.json", std::ios::trunc);
  m << manifest.dump(2) << '\n';
  if (!m) throw FormatError("cannot write manifest in " + dir.string());
}

namespace {

Dataset read_split(const std::filesystem::path& path, Split split, const NormalizationRecord& norm,
                   std::size_t frames, const Shape& volume_shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  Dataset ds;
  ds.split = split;
  ds.frames = frames;
  ds.volume_shape = volume_shape;
  ds.norm = norm;
  Shape seq_shape{frames};
  seq_shape.insert(seq_shape.end(), volume_shape.begin(), volume_shape.end());
  const std::uint64_t count = read_u64(f);
  const std::size_t frame_size = shape_size(volume_shape);
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const Tensor seq = read_tensor_record(f);
    const Tensor target = read_tensor_record(f);
    if (seq.shape() != seq_shape) {
      throw FormatError(path.string() + ": sequence shape " + shape_str(seq.shape()) + " != manifest " +
                        shape_str(seq_shape));
    }
    if (target.shape() != Shape{3}) throw FormatError(path.string() + ": bad target record");
    SequenceSample s;
    s.target = {target[0], target[1], target[2]};
    const SequenceSample* prev = ds.samples.empty() ? nullptr : &ds.samples.back();
    for (std::size_t t = 0; t < frames; ++t) {
      const double* src = seq.ptr() + t * frame_size;
      // Overlapping windows repeat frames of the previous sequence shifted by one.
      if (prev && t + 1 < frames && std::equal(src, src + frame_size, prev->frames[t + 1]->ptr())) {
        s.frames.push_back(prev->frames[t + 1]);
      } else {
        s.frames.push_back(std::make_shared<const Tensor>(volume_shape, std::vector<double>(src, src + frame_size)));
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json");
  if (!m) throw FormatError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unreadable manifest: ") + e.what());
  }
  const auto version = manifest.value("format_version", 0u);
  if (version == 0 || version > kDatasetFormatVersion) {
    throw FormatError("dataset format version " + std::to_string(version) + " not supported (max " +
                      std::to_string(kDatasetFormatVersion) + ")");
  }
  LoadedDataset out;
  try {
    out.config = DatasetConfig::from_text(manifest.at("config").dump());
    NormalizationRecord norm;
    norm.mean = manifest.at("normalization").at("mean").get<Vec3>();
    norm.scale = manifest.at("normalization").at("scale").get<Vec3>();
    out.data.raw_train_std = manifest.at("raw_train_std_mm").get<Vec3>();
    const Shape vol = manifest.at("volume_shape").get<Shape>();
    out.data.train = read_split(dir / split_file_name(Split::Train), Split::Train, norm, out.config.frames, vol);
    out.data.val = read_split(dir / split_file_name(Split::Val), Split::Val, norm, out.config.frames, vol);
    out.data.test = read_split(dir / split_file_name(Split::Test), Split::Test, norm, out.config.frames, vol);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  return out;
}

}  // namespace v4d
