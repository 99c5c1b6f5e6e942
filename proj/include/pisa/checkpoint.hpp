#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pisa/nn.hpp"
#include "pisa/tensor.hpp"

namespace pisa {

inline constexpr std::uint8_t kCheckpointVersion = 1;

// Layout (little-endian): "PISA", u8 version, u32 entry count, then per entry
// u32 name length, UTF-8 name, u32 rank, u32 dims, f32 data; finally u32
// length and the UTF-8 JSON config echo.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor32>> tensors;
  std::string config_json;

  const Tensor32* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const NamedTensors<float>& tensors, const std::string& config_json);
void write_checkpoint(std::ostream& out, const NamedTensors<float>& tensors, const std::string& config_json);

// Throws CheckpointHeaderError, CheckpointVersionError or
// CheckpointTruncatedError on malformed input.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint read_checkpoint(std::istream& in);

// Copies tensors into `target` by name; shapes must agree and every target
// name must be present.
void apply_checkpoint(const Checkpoint& ckpt, const NamedTensors<float>& target);

}  // namespace pisa
