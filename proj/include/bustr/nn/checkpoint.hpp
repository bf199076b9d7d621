#pragma once

#include "bustr/nn/layers.hpp"

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace bustr::nn {

/// On-disk layout: 8-byte magic "BUSTRCKP", u32 format version, u64 header
/// length, UTF-8 JSON header, then every tensor as little-endian float32 in
/// the order listed under header["tensors"].
struct CheckpointFile {
  nlohmann::json header;
  std::map<std::string, Matrix> tensors;
};

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const ParamList& params);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into params by name. Missing names or shape differences
/// raise SchemaMismatch.
void load_parameters(const CheckpointFile& file, const ParamList& params);

}  // namespace bustr::nn
