#pragma once

#include <map>
#include <string>

#include "cotune/tensor.hpp"

namespace cotune {

// Named-tensor container, little-endian on disk regardless of host.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "COTCKPT1"
//   u32     version (1)
//   u32     entry count
//   entry*  u32 name length, name bytes,
//           u32 rank, u64 dims[rank],
//           f64 row-major payload
// Entries are written in lexicographic name order so identical parameter
// sets produce identical files.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

// Checksum over (name, shape, raw value bytes) in lexicographic name order.
std::uint64_t checkpoint_checksum(const std::map<std::string, Tensor>& entries);

}  // namespace cotune
