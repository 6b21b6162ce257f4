#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distillab/tensor.hpp"

namespace distillab {

// Serialized model snapshot. The JSON form keeps every float as its
// shortest round-tripping decimal; the binary form stores a JSON header
// followed by raw little-endian IEEE-754 arrays.
struct Checkpoint {
  int format_version = 1;
  std::string kind;  // "mlp" | "transformer" | ...
  int64_t step = 0;
  std::string meta_json = "{}";  // free-form metadata object
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);

std::vector<uint8_t> checkpoint_to_binary(const Checkpoint& c);
Checkpoint checkpoint_from_binary(const std::vector<uint8_t>& bytes);

// File I/O; format picked by extension (.json vs anything else = binary).
void save_checkpoint_file(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace distillab
