// SPDX-License-Identifier: Apache-2.0
// 8-bit PNG reading and writing.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace segdistill::io {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  ///< 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  ///< row-major, interleaved
};

/// Throws FormatError(kIo) when the file cannot be written.
void write_png(const std::filesystem::path& path, const Image8& image);

/// Reads an 8-bit PNG, keeping its channel layout (gray or RGB; alpha is
/// rejected). Throws FormatError(kIo) if unreadable, kMalformed otherwise.
Image8 read_png(const std::filesystem::path& path);

}  // namespace segdistill::io
