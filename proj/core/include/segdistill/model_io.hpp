// SPDX-License-Identifier: Apache-2.0
// Versioned model container:
//   "SEGDIST1" | u8 version | u32 topology length | topology text |
//   u32 blob count | { u32 name length | name | u32 byte length | f32 LE data }* |
//   u32 CRC-32 of every preceding byte.
// All integers little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segdistill/model.hpp"

namespace segdistill::zoo {

inline constexpr char kModelMagic[8] = {'S', 'E', 'G', 'D', 'I', 'S', 'T', '1'};
inline constexpr std::uint8_t kModelFormatVersion = 1;

/// Structural description sufficient to rebuild the layer graph.
std::string topology_text(const NetworkConfig& cfg);
NetworkConfig parse_topology(const std::string& text);

std::vector<std::uint8_t> serialize_model(const Network& net);
/// Throws FormatError with kind kBadMagic, kUnsupportedVersion, kTruncated,
/// kChecksumMismatch or kMalformed. Never returns a partially loaded network.
Network deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

}  // namespace segdistill::zoo
