// SPDX-License-Identifier: Apache-2.0
// On-disk dataset layout:
//   manifest             text: format version, identities, resolution, palette, sample count
//   images/<id>_<view>.png  8-bit RGB
//   masks/<id>_<view>.png   8-bit gray, one class index per pixel
//   splits.csv           sample,split (optional on load)
//   poses.csv            sample,yaw,pitch,illumination,background (optional on load)
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "segdistill/synthfaces.hpp"

namespace segdistill::io {

inline constexpr int kDatasetFormatVersion = 1;

struct StoredDataset {
  synth::Dataset dataset;
  std::optional<synth::SplitAssignment> splits;
};

/// "<identity>_<view>", the file stem used for a sample.
std::string sample_key(const synth::Sample& s);

/// Writes the layout above, creating directories as needed. Output bytes are
/// a pure function of the arguments.
void save_dataset(const synth::Dataset& dataset, const std::filesystem::path& dir,
                  const synth::SplitAssignment* splits = nullptr);

/// Loads and validates a directory, generated or external. Samples are
/// ordered by identity then view. Errors are FormatError with kind
/// kMalformed, kUnsupportedVersion, kMissingMask, kUnknownClass,
/// kManifestMismatch or kIo.
StoredDataset load_external(const std::filesystem::path& dir);

}  // namespace segdistill::io
