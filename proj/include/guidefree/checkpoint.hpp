#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "guidefree/denoiser.hpp"

namespace guidefree {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserModel model;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout, all integers and floats little-endian:
//   8  bytes  magic "GFDENOIS"
//   u32       format version
//   u32 x 5   data_dim, hidden_layers, width, num_classes, embed_dim
//   u64       training iteration
//   u64       seed
//   u64       parameter count
//   f64 x n   parameters in DenoiserModel order
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace guidefree
