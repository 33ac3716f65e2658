#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splatnorm/config.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Container layout (all integers little-endian):
//   "SNGD" | u32 version | u32 completed_stage | u32 config_len | config text
//   | u32 block_count | blocks | u64 fnv1a over everything before it
// block: u32 name_len | name | u32 rank | u64 extents[rank] | f64 payload
inline constexpr uint32_t kCheckpointVersion = 1;

enum class CheckpointError {
  kBadMagic,
  kBadVersion,
  kTruncated,
  kChecksumMismatch,
  kMalformed,
};

struct CheckpointIoError : std::runtime_error {
  CheckpointError code;
  CheckpointIoError(CheckpointError c, const std::string& msg)
      : std::runtime_error(msg), code(c) {}
};

struct Checkpoint {
  TrainConfig config;
  int completed_stage = 0;
  std::vector<std::pair<std::string, Tensor>> blocks;  // write order is kept

  void add(std::string name, Tensor value);
  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

inline constexpr uint64_t kFnvOffsetBasis = 1469598103934665603ull;
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvOffsetBasis);

// Order-sensitive digest of shape and payload; freeze contracts compare it
// before and after a stage.
uint64_t tensor_fingerprint(const Tensor& t);

}  // namespace splatnorm
