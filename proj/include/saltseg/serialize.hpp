#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/tensor.hpp"

namespace saltseg {

using NamedTensor = std::pair<std::string, Tensor>;

// Flat binary container: magic "SSEG1", u64 entry count, then per entry
// u64 name length, UTF-8 name, u64 rank, u64 dims, raw f64 payload. All
// integers and floats little-endian.
void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);

// Entries come back in file order; tensors are fresh leaves (requires_grad
// false).
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

std::map<std::string, Tensor> to_map(const std::vector<NamedTensor>& entries);

}  // namespace saltseg
