#pragma once

#include <cstdint>
#include <filesystem>

#include "langtyp/autograd.hpp"

namespace langtyp {

// Binary parameter checkpoint, all integers and values little-endian:
//
//   magic    8 bytes  "LTYPCKPT"
//   version  u32      kCheckpointVersion
//   seed     u64      training seed
//   count    u32      number of tensors
//   count times:
//     name_len u32, name bytes (UTF-8)
//     ndim u32, ndim x u64 dims
//     prod(dims) x f64 values (IEEE-754 binary64)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, std::uint64_t seed);

// Loads values into an existing ParameterSet. Every stored tensor must match a
// parameter of the same name and shape, and every parameter must be present.
// Returns the stored seed.
std::uint64_t load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

}  // namespace langtyp
