// SPDX-License-Identifier: Apache-2.0
// Procedural pose-varied face-like images with exact segmentation masks.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segdistill/tensor.hpp"

namespace segdistill::synth {

/// Class indices of the built-in palette.
enum FaceClass : std::uint8_t {
  kBackground = 0,
  kSkin = 1,
  kHair = 2,
  kLeftEye = 3,
  kRightEye = 4,
  kNose = 5,
  kMouth = 6,
};

inline constexpr int kFaceClassCount = 7;

std::vector<std::string> default_palette();

/// Attribute levels are quantised before jitter, so two distinct identities
/// differ in at least one normalised attribute by this much.
inline constexpr float kMinSeparation = 0.3f;

struct IdentityGenotype {
  float head_width = 0.6f;   ///< semi-axes as fractions of half the image
  float head_height = 0.75f;
  std::array<float, 3> skin{};
  std::array<float, 3> hair{};
  float eye_spacing_deg = 28.0f;  ///< angular offset of each eye from the face midline
  float eye_size = 0.12f;
  float nose_size = 0.11f;
  float mouth_width = 0.24f;
  float hair_extent = 0.5f;  ///< 0 = receding, 1 = low hairline
  bool spectacles = false;
  bool facial_hair = false;

  /// Every attribute mapped to [0, 1], in a fixed order.
  std::vector<float> normalized() const;

  friend bool operator==(const IdentityGenotype&, const IdentityGenotype&) = default;
};

struct PoseParams {
  float yaw_deg = 0.0f;    ///< [-60, 60]; positive turns the subject's left side away
  float pitch_deg = 0.0f;  ///< [-30, 30]; positive tilts the face down
  float illumination = 1.0f;  ///< [0.6, 1.4]; scales the image only
  int background = 0;      ///< [0, kBackgroundCount)

  friend bool operator==(const PoseParams&, const PoseParams&) = default;
};

inline constexpr int kBackgroundCount = 8;

struct Sample {
  Tensor image;                     ///< [H, W, 3] in [0, 1]
  std::vector<std::uint8_t> mask;   ///< H * W class indices, row-major
  int resolution = 0;
  int identity = 0;
  int view = 0;
  PoseParams pose;
};

struct Dataset {
  int identity_count = 0;
  int resolution = 0;
  std::vector<std::string> palette;
  std::vector<Sample> samples;

  int class_count() const { return static_cast<int>(palette.size()); }
};

/// Pure function of (dataset_seed, index).
IdentityGenotype sample_identity(std::uint64_t dataset_seed, int index);

/// Rasterises one face. Throws ValueError for resolution < 16 or out-of-range pose.
Sample render(const IdentityGenotype& genotype, const PoseParams& pose, int resolution);

/// Pose of one view: yaw and pitch stratified over the views of an identity.
PoseParams stratified_pose(std::uint64_t dataset_seed, int identity, int view, int views_per_identity);

/// identity_count x views_per_identity samples, ordered by identity then view.
Dataset generate_dataset(int identity_count, int views_per_identity, int resolution, std::uint64_t seed);

enum class Split : std::uint8_t { kTrain, kVal, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SplitFractions {
  double test = 0.1;        ///< of each identity's samples
  double validation = 0.2;  ///< of the remainder after the test share
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Per-identity counts: test = max(1, round(test * n)), val = round(validation * (n - test)).
SplitCounts split_counts(std::size_t n, const SplitFractions& fractions = {});

struct SplitAssignment {
  std::vector<Split> tags;  ///< parallel to Dataset::samples

  std::vector<std::size_t> indices(Split which) const;
  SplitCounts totals() const;
};

/// Seeded per-identity shuffle then partition. Throws ValueError if an
/// identity has fewer than 10 samples.
SplitAssignment split(const Dataset& dataset, std::uint64_t seed, const SplitFractions& fractions = {});

/// Per-class pixel counts of a mask.
std::vector<std::size_t> class_histogram(const Sample& s, int classes);

}  // namespace segdistill::synth
