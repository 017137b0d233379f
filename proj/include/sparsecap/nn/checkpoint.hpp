#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sparsecap/nn/layers.hpp"

namespace sparsecap::nn {

// Binary layout, little-endian:
//   "SCAPCKPT" | u32 version | u32 meta_len | meta (key=value lines)
//   u32 count | count x {u32 name_len | name | u32 ndim | u64 dims[ndim] | u64 offset}
//   float64 payloads; offsets count bytes from the start of the payload section.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  /// Throws ValidationError if absent.
  const Matrix& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
  /// Throws ValidationError if absent.
  const std::string& meta_value(const std::string& key) const;
};

inline constexpr unsigned kCheckpointVersion = 1;

Checkpoint snapshot(const ParameterSet& params, std::map<std::string, std::string> meta = {});
/// Copies every parameter's tensor from the checkpoint; names and shapes must match.
void restore(const Checkpoint& checkpoint, const ParameterSet& params);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sparsecap::nn
