#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace segloc {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Named sub-seed of a root seed. Streams for labels, init, dropout and
/// batching all hang off one root so changing one consumer never shifts
/// another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

}  // namespace segloc
