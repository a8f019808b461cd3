#include "linknet/model_io.hpp"

#include <cstdio>

namespace linknet {

namespace fs = std::filesystem;

Checkpoint make_checkpoint(const LinkConfig& config, const ParamStore<float>& params) {
  Checkpoint ckpt;
  for (const auto& [key, t] : params) ckpt.emplace(key, t);
  std::vector<std::int32_t> cfg{static_cast<std::int32_t>(config.num_classes),
                                static_cast<std::int32_t>(config.in_channels),
                                static_cast<std::int32_t>(config.height), static_cast<std::int32_t>(config.width),
                                config.bypass ? 1 : 0};
  for (const auto& w : config.encoder_widths) cfg.insert(cfg.end(), {static_cast<std::int32_t>(w.m), static_cast<std::int32_t>(w.n)});
  for (const auto& w : config.decoder_widths) cfg.insert(cfg.end(), {static_cast<std::int32_t>(w.m), static_cast<std::int32_t>(w.n)});
  cfg.push_back(static_cast<std::int32_t>(config.final_width));
  const auto n = static_cast<Index>(cfg.size());
  ckpt.emplace(kConfigRecord, TensorI({n}, std::move(cfg)));
  return ckpt;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  auto it = ckpt.find(kConfigRecord);
  if (it == ckpt.end()) throw std::runtime_error(std::string("checkpoint has no '") + kConfigRecord + "' record");
  const auto* cfg = std::get_if<TensorI>(&it->second);
  if (!cfg || cfg->shape() != Shape{22}) throw std::runtime_error("checkpoint config record is malformed");
  const auto v = [&](Index i) { return static_cast<Index>((*cfg)[i]); };
  LinkConfig c;
  c.num_classes = v(0);
  c.in_channels = v(1);
  c.height = v(2);
  c.width = v(3);
  c.bypass = v(4) != 0;
  for (std::size_t i = 0; i < 4; ++i) {
    c.encoder_widths[i] = {v(5 + 2 * static_cast<Index>(i)), v(6 + 2 * static_cast<Index>(i))};
    c.decoder_widths[i] = {v(13 + 2 * static_cast<Index>(i)), v(14 + 2 * static_cast<Index>(i))};
  }
  c.final_width = v(21);

  LoadedModel m{c, build_linknet(c), {}};
  for (const auto& [key, t] : ckpt) {
    if (key == kConfigRecord) continue;
    const auto* f = std::get_if<TensorF>(&t);
    if (!f) throw std::runtime_error("checkpoint record '" + key + "' is not real32");
    m.params.emplace(key, *f);
  }
  check_params(m.graph, m.params);
  return m;
}

LoadedModel load_model(const fs::path& path) { return load_model(load_checkpoint(path)); }

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.ltn", index);
  return buf;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = sample_file_name(i);
    save_tensor(dir / "images" / name, data[i].image);
    save_tensor(dir / "labels" / name, data[i].labels);
    if (data[i].instances) save_tensor(dir / "instances" / name, *data[i].instances);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "labels"))
    throw std::runtime_error("'" + dir.string() + "' is not a dataset directory (needs images/ and labels/)");
  Dataset data;
  for (std::size_t i = 0;; ++i) {
    const std::string name = sample_file_name(i);
    if (!fs::exists(dir / "images" / name)) break;
    Sample s;
    s.image = load_real_tensor(dir / "images" / name);
    s.labels = load_int_tensor(dir / "labels" / name);
    if (s.image.rank() != 3 || s.labels.rank() != 2 || s.image.dim(1) != s.labels.dim(0) ||
        s.image.dim(2) != s.labels.dim(1))
      throw ShapeError("sample " + name + ": image " + to_string(s.image.shape()) + " and labels " +
                       to_string(s.labels.shape()) + " do not align");
    if (fs::exists(dir / "instances" / name)) {
      s.instances = load_int_tensor(dir / "instances" / name);
      if (s.instances->shape() != s.labels.shape()) throw ShapeError("sample " + name + ": instance map misaligned");
    }
    data.push_back(std::move(s));
  }
  if (data.empty()) throw std::runtime_error("no samples found in '" + dir.string() + "'");
  return data;
}

}  // namespace linknet
