#pragma once

// Checkpoint container:
//   8 bytes   magic "PFILLCKP"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: {"config", "step", "tensors": [{name, shape, dtype, offset}]}
//   data      little-endian float32 tensors, column-major, offsets relative to data start

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pianofill/model/config.hpp"
#include "pianofill/model/params.hpp"

namespace pianofill::model {

inline constexpr char kCheckpointMagic[8] = {'P', 'F', 'I', 'L', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<float>& params, const ModelConfig& config,
                                               std::uint64_t step);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const ModelParams<float>& params, const ModelConfig& config,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::string& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace pianofill::model
