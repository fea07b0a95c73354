#pragma once

#include <cstdint>
#include <filesystem>

#include "segloc/model.hpp"

namespace segloc {

struct Checkpoint {
  Parameters params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

// File layout: one line of JSON terminated by '\n'
//   {"format":"segloc-checkpoint","version":1,"D":..,"N":..,"seed":..,"step":..,
//    "tensors":[{"name":"embed.weight","rows":..,"cols":..}, ...]}
// followed by the tensors' values as little-endian float64, row-major, one
// block per tensor in Parameters::kNames order, no padding.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace segloc
