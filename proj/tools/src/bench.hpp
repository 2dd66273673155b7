// SPDX-License-Identifier: Apache-2.0
// Training benchmark arms and rendering Table-style results.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "experiment.hpp"
#include "segdistill/synthfaces.hpp"

namespace segdistill::cli {

struct ArmResult {
  std::string name;
  bool joint = false;
  zoo::ParameterCounts counts;  ///< of the trained network, decoder included
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  train::TrainingReport report;

  std::size_t params_inference() const noexcept { return counts.inference(); }
  /// Train-time count, or nothing for arms that train what they deploy.
  std::optional<std::size_t> params_train() const {
    return joint ? std::optional<std::size_t>(counts.total()) : std::nullopt;
  }
};

struct BenchmarkRun {
  std::uint64_t seed = 0;          ///< training seed
  std::uint64_t dataset_seed = 0;
  std::string split_hash;          ///< FNV-1a of the splits.csv text every arm used
  std::vector<ArmResult> arms;     ///< in config order
};

/// An arm threw; results of arms that finished are in `partial`.
class ArmFailure : public std::runtime_error {
 public:
  ArmFailure(std::string arm, const std::string& what, BenchmarkRun partial)
      : std::runtime_error("arm '" + arm + "' failed: " + what), arm_(std::move(arm)), partial_(std::move(partial)) {}
  const std::string& arm() const noexcept { return arm_; }
  const BenchmarkRun& partial() const noexcept { return partial_; }

 private:
  std::string arm_;
  BenchmarkRun partial_;
};

struct BenchmarkOptions {
  std::uint64_t seed = 0;
  int seeds = 1;
  int jobs = 1;
  std::optional<std::filesystem::path> out;
  /// Use this dataset (and its splits.csv) instead of generating one.
  std::optional<std::filesystem::path> data;
  bool timing = false;
  std::ostream* log = nullptr;
};

/// splits.csv contents for a dataset.
std::string splits_csv(const synth::Dataset& dataset, const synth::SplitAssignment& splits);
std::string fnv1a_hex(const std::string& bytes);

/// Trains one arm, prunes it if joint, and evaluates on the test split.
/// With `out_dir`, writes model.sdm (inference model), joint.sdm for joint
/// arms, metrics.csv and report.txt there.
ArmResult run_arm(const ArmSpec& arm, const synth::Dataset& dataset, const synth::SplitAssignment& splits,
                  std::uint64_t seed, const std::filesystem::path* out_dir, bool timing = false);

/// Runs every arm for opts.seeds consecutive seeds. Sweep index i trains with
/// seed opts.seed + i on a dataset generated with dataset.seed + i and split
/// with dataset.split_seed + i. Writes per-run tables under opts.out.
std::vector<BenchmarkRun> run_benchmark(const ExperimentConfig& cfg, const BenchmarkOptions& opts);

/// "2.4M", "99.1K", or the plain integer below 1000.
std::string format_count(std::size_t n);

std::string results_csv(const BenchmarkRun& run);
std::string results_text(const BenchmarkRun& run);
/// Per-arm mean/min/max test accuracy across runs.
std::string summary_csv(const std::vector<BenchmarkRun>& runs);
std::string summary_text(const std::vector<BenchmarkRun>& runs);

/// Text report of a single training run.
std::string report_text(const ArmResult& r);

}  // namespace segdistill::cli
