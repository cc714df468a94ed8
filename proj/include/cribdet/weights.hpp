// weights.hpp : binary weight container — JSON header (architecture hash +
// tensor directory) followed by raw little-endian float32 payloads.
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "cribdet/network.hpp"

namespace cribdet {

inline constexpr int kWeightFormatVersion = 1;

std::vector<std::byte> serialize_weights(const Network& net);
Network deserialize_weights(const std::byte* data, std::size_t size);

void save_weights(const Network& net, const std::filesystem::path& path);

// Reconstructs the network from the embedded architecture descriptor.
Network load_weights(const std::filesystem::path& path);

// Additionally requires the container to match `expected` exactly.
Network load_weights(const std::filesystem::path& path, const NetworkConfig& expected);

}  // namespace cribdet
