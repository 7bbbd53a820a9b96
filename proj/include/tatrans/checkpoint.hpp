#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "tatrans/params.hpp"

namespace tatrans::nn {

// Layout (little-endian):
//   8 bytes  magic "TATCKPT\0"
//   u32      format version
//   u64      header length N
//   N bytes  JSON header: dtype, step_count, config_digest, metadata, and per
//            parameter {name, shape, offset}
//   blobs    per parameter: value, moment1, moment2, each numel * sizeof(dtype)

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string dtype;  // "f32" or "f64"
  std::uint64_t step_count = 0;
  std::string config_digest;
  nlohmann::json metadata;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store,
                     const nlohmann::json& metadata, const std::string& config_digest);

/// Reads only the header.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads values and optimizer state into a store whose names and shapes already
/// match (the model constructor defines the layout). Converts dtype if needed.
template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore<T>& store);

}  // namespace tatrans::nn
