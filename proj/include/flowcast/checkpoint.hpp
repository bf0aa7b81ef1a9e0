#pragma once

// Versioned parameter container:
//   "FCKP" | u32 version | u32 len + kind | u32 len + config JSON |
//   u32 count | count x (u32 len + name | u32 ndim | ndim x i64 dim | float32 data)
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace flowcast::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<std::pair<std::string, torch::Tensor>> parameters;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a module's named parameters (detached float32 copies).
Checkpoint capture(const torch::nn::Module& module, std::string kind, nlohmann::json config);

/// Copies parameters into the module; names and shapes must match exactly.
void restore(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& expected_kind);

}  // namespace flowcast::nn
