#pragma once

// Glue between in-memory models/datasets and the on-disk formats.

#include "linknet/io.hpp"
#include "linknet/linknet.hpp"
#include "linknet/train.hpp"

#include <filesystem>

namespace linknet {

// Checkpoint record holding the architecture as int32s:
// [num_classes, in_channels, height, width, bypass, enc m/n x4, dec m/n x4, final_width]
inline constexpr const char* kConfigRecord = "config.link";

Checkpoint make_checkpoint(const LinkConfig& config, const ParamStore<float>& params);

struct LoadedModel {
  LinkConfig config;
  Graph graph;
  ParamStore<float> params;
};

/// Rebuilds the graph from the config record and checks every parameter.
LoadedModel load_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

/// Dataset directory: images/NNNN.ltn (real32 C,H,W), labels/NNNN.ltn
/// (int32 H,W), instances/NNNN.ltn (int32 H,W, optional).
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

std::string sample_file_name(std::size_t index);

}  // namespace linknet
