#include "v4d/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

namespace v4d {

using nlohmann::json;

namespace {

void write_pairs(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& pairs) {
  write_u64(out, pairs.size());
  for (const auto& [name, t] : pairs) {
    write_string(out, name);
    write_tensor_record(out, *t);
  }
}

std::vector<std::pair<std::string, Tensor>> read_pairs(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(in);
    out.emplace_back(std::move(name), read_tensor_record(in));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json meta;
  meta["model_spec"] = json::parse(ckpt.spec.to_text());
  meta["sample_shape"] = ckpt.sample_shape;
  meta["train"] = {{"epochs", ckpt.meta.epochs},
                   {"batch_size", ckpt.meta.batch_size},
                   {"lr", ckpt.meta.lr},
                   {"seed", ckpt.meta.seed},
                   {"best_epoch", ckpt.meta.best_epoch},
                   {"best_val_mae_um", ckpt.meta.best_val_mae_um},
                   {"steps", ckpt.meta.steps},
                   {"dataset", ckpt.meta.dataset}};
  const AdamHyper& h = ckpt.optimizer.hyper;
  meta["adam"] = {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  write_magic(out, "V4DC");
  write_u32(out, kCheckpointVersion);
  write_string(out, meta.dump());

  std::vector<std::pair<std::string, const Tensor*>> params;
  for (const auto& [name, t] : ckpt.params) params.emplace_back(name, &t);
  write_pairs(out, params);

  const Tensor step({1}, {static_cast<double>(ckpt.optimizer.t)});
  std::vector<std::pair<std::string, const Tensor*>> opt{{"t", &step}};
  for (const auto& [name, t] : ckpt.optimizer.m) opt.emplace_back("m/" + name, &t);
  for (const auto& [name, t] : ckpt.optimizer.v) opt.emplace_back("v/" + name, &t);
  write_pairs(out, opt);
  if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  expect_magic(in, "V4DC");
  const std::uint32_t version = read_u32(in);
  if (version == 0 || version > kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " not supported (max " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  try {
    const json meta = json::parse(read_string(in));
    c.spec = ModelSpec::from_text(meta.at("model_spec").dump());
    c.sample_shape = meta.at("sample_shape").get<Shape>();
    const json& t = meta.at("train");
    c.meta.epochs = t.at("epochs");
    c.meta.batch_size = t.at("batch_size");
    c.meta.lr = t.at("lr");
    c.meta.seed = t.at("seed");
    c.meta.best_epoch = t.at("best_epoch");
    c.meta.best_val_mae_um = t.at("best_val_mae_um");
    c.meta.steps = t.at("steps");
    c.meta.dataset = t.at("dataset");
    const json& a = meta.at("adam");
    c.optimizer.hyper = AdamHyper{a.at("lr"), a.at("beta1"), a.at("beta2"), a.at("eps")};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }
  for (auto& [name, t] : read_pairs(in)) c.params.emplace(name, std::move(t));
  for (auto& [name, t] : read_pairs(in)) {
    if (name == "t") {
      c.optimizer.t = static_cast<std::uint64_t>(t[0]);
    } else if (name.rfind("m/", 0) == 0) {
      c.optimizer.m.emplace(name.substr(2), std::move(t));
    } else if (name.rfind("v/", 0) == 0) {
      c.optimizer.v.emplace(name.substr(2), std::move(t));
    } else {
      throw FormatError("unknown optimizer entry " + name);
    }
  }
  return c;
}

Network network_from_checkpoint(const Checkpoint& ckpt) {
  Network net = build_model(ckpt.spec, ckpt.sample_shape);
  net.load_parameters(ckpt.params);
  return net;
}

}  // namespace v4d
