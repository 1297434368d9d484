#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "trajphen/params.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

// Flat checkpoint container: a JSON header (metadata + tensor index) followed
// by the raw little-endian float64 payload. Write-then-reload is bit exact.
void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const nlohmann::json& meta);

// Loads values into an already-constructed registry; every registry entry
// must be present in the file with a matching shape. Returns the metadata.
nlohmann::json load_checkpoint(const std::string& path, ParamRegistry& params);

// Raw load, for inspection and tests.
struct LoadedCheckpoint {
  std::map<std::string, Tensor> tensors;
  nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint_raw(const std::string& path);

// SHA-256 of a file's bytes, hex encoded. Used for manifests and the
// frozen-teacher guard.
std::string sha256_file(const std::string& path);
std::string sha256_bytes(const std::string& bytes);

}  // namespace trajphen
