#pragma once

#include <filesystem>
#include <string>

#include "micronet/graph.hpp"
#include "micronet/network.hpp"

namespace micronet::ckpt {

struct CheckpointInfo {
  nn::NetVariant variant;
  int epoch = 0;
  double val_loss = 0.0;
};

/// Binary archive: magic, format version, variant name, width multiplier, input
/// channels, epoch, validation loss, then named parameter and buffer arrays.
void save(const nn::Network& net, const std::filesystem::path& path, int epoch = 0, double val_loss = 0.0);

CheckpointInfo read_info(const std::filesystem::path& path);

/// Loads weights into `net`; throws ShapeError if the archive was written for a
/// different variant, width or channel count.
CheckpointInfo load(nn::Network& net, const std::filesystem::path& path);

/// Builds the matching graph and loads the weights.
nn::Network load_network(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace micronet::ckpt
