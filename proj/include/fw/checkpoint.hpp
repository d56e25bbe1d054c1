#pragma once

// Checkpoint = text manifest + raw blob. The manifest holds the model config
// as key=value lines followed by one "tensor <name> <rows> <cols> <offset>"
// line per tensor; the blob (<manifest>.bin) holds every tensor as
// little-endian float32, in manifest order, at the listed byte offsets.

#include <string>

#include "fw/model.hpp"

namespace fw {

void save_checkpoint(const Model<float>& model, const std::string& manifest_path);
Model<float> load_checkpoint(const std::string& manifest_path);

std::string blob_path(const std::string& manifest_path);

}  // namespace fw
