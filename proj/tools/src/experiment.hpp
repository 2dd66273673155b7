// SPDX-License-Identifier: Apache-2.0
// Experiment configuration: dataset parameters plus a list of benchmark arms.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segdistill/model.hpp"
#include "segdistill/trainer.hpp"

namespace segdistill::cli {

/// A configuration file that does not follow the schema; the message carries
/// "<source>:<line>:" context when the location is known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  int identities = 20;
  int views = 40;
  int resolution = 48;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
};

/// Architecture independent of the dataset: head and decoder class counts
/// are filled in from the data.
struct ArchSpec {
  zoo::EncoderConfig encoder;
  int head_features = 64;
  bool decoder = false;
  /// 0 means "the encoder's output width".
  int decoder_base_width = 0;

  zoo::NetworkConfig network(int resolution, int id_classes, int seg_classes) const;
};

struct ArmSpec {
  std::string name;
  ArchSpec arch;
  train::TrainConfig train;

  bool joint() const noexcept { return arch.decoder; }
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<ArmSpec> arms;

  const ArmSpec& arm(const std::string& name) const;
};

/// Parses the YAML schema documented in tools/configs/SCHEMA.md.
ExperimentConfig parse_experiment(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_experiment(const std::string& path);

/// 20 identities x 40 views at 48x48; arms MobileNetV2-ID and Seg-Distilled-ID
/// sharing one small inverted-residual encoder.
ExperimentConfig default_desk_experiment();

/// Named encoder tables: "toy", "desk-mobilenet", "desk-plain", "mobilenetv2".
zoo::EncoderConfig encoder_preset(const std::string& name);

}  // namespace segdistill::cli
