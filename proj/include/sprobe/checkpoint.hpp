#pragma once

#include <filesystem>
#include <string>

#include "sprobe/network.hpp"

namespace sprobe {

// Flat binary parameter file: 8-byte magic "SPROBE01" followed by one record
// per non-empty tensor, in layer order and, within a layer, in the order
// weight, bias, running_mean, running_var. Record layout: layer index (u32),
// rank (u32), dims (u32 each), payload (little-endian f64).
inline constexpr char kCheckpointMagic[9] = "SPROBE01";

std::string encode_params(const ParamSet& params);
// The NetworkSpec fixes how many tensors each layer owns.
ParamSet decode_params(const std::string& bytes, const NetworkSpec& spec);

void save_params(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& path, const NetworkSpec& spec);

}  // namespace sprobe
