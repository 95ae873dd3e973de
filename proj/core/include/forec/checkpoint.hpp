#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forec/net.hpp"
#include "forec/tensor.hpp"

namespace forec::ckpt {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// On-disk layout (little endian): magic "FORECKPT", u32 version = 1,
/// u32 tensor count; per tensor u16 name length, name bytes, u8 dtype
/// (0 = f32), u8 ndim, u32 dims[], f32 payload; then u64 step and a 32-byte
/// RNG state block (bytes 0..7 hold the master RNG state, rest reserved).
struct CheckpointData {
  std::vector<NamedTensor> tensors;
  uint64_t step = 0;
  std::array<uint8_t, 32> rng_state{};
};

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Parameter table of one network, names optionally prefixed ("student.").
std::vector<NamedTensor> collect(const net::Network& network, const std::string& prefix = "");

void save_checkpoint(const net::Network& network, const std::filesystem::path& path);

/// Rebuilds a network from a checkpoint, inferring the architecture from the
/// tensor names and shapes. Trainer checkpoints hold both networks under
/// "student."/"teacher." prefixes; the teacher (the evaluation model) is
/// preferred when present.
net::Network load_checkpoint(const std::filesystem::path& path);

/// Same inference from an already-parsed tensor table with bare names.
net::Network network_from_tensors(const std::vector<NamedTensor>& tensors);

}  // namespace forec::ckpt
