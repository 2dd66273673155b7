// SPDX-License-Identifier: Apache-2.0
// Joint identification + segmentation training with early stopping.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "segdistill/metrics.hpp"
#include "segdistill/model.hpp"
#include "segdistill/synthfaces.hpp"

namespace segdistill::train {

struct LossWeights {
  float seg = 1.0f;
  float id = 0.1f;

  /// Throws ValueError for negative, non-finite or all-zero weights.
  void validate() const;
};

struct TrainConfig {
  int max_epochs = 125;
  int patience = 20;
  int batch_size = 16;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
  LossWeights weights;
  /// Record wall-clock seconds per epoch. Off by default so that metrics are
  /// a pure function of the seeds.
  bool timing = false;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_id_acc = 0.0;
  std::optional<double> val_seg_pixacc;
  double seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

enum class StopReason { kExhausted, kPatience, kNonFinite };

const char* stop_reason_name(StopReason r);

/// Tracks the best validation loss; ties do not count as improvement.
class EarlyStopping {
 public:
  enum class Decision { kContinue, kStop };

  EarlyStopping(int patience, int max_epochs);

  /// Feeds the validation loss of the next epoch.
  Decision update(double val_loss);

  int epoch() const noexcept { return epoch_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }
  /// True when the latest update set a new best.
  bool improved() const noexcept { return improved_; }
  int epochs_since_improvement() const noexcept { return epoch_ - best_epoch_; }
  std::optional<StopReason> reason() const noexcept { return reason_; }

 private:
  int patience_;
  int max_epochs_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool improved_ = false;
  std::optional<StopReason> reason_;
};

struct JointBatchOutputs {
  std::optional<PredictionDistribution> seg;
  PredictionDistribution id;
};

struct JointBatchTargets {
  std::optional<OneHotTarget> seg;
  OneHotTarget id;
};

/// seg * CE(Y_seg, T_seg) + id * CE(Y_id, T_id). The seg term is skipped when
/// either side lacks segmentation; a weight of zero keeps the term on the tape
/// but sends it no gradient.
Var joint_loss(const JointBatchOutputs& outputs, const JointBatchTargets& targets, const LossWeights& w);

/// The same combination over already-reduced cross-entropies.
float joint_loss(float ce_seg, float ce_id, const LossWeights& w);

/// Samples of one split.
struct SplitView {
  const synth::Dataset* dataset = nullptr;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

SplitView view(const synth::Dataset& dataset, const synth::SplitAssignment& splits, synth::Split which);

struct EvalMetrics {
  double loss = 0.0;  ///< joint loss (ID-only term when there is no segmentation)
  double id_accuracy = 0.0;
  std::optional<SegMetrics> seg;
  std::size_t samples = 0;
};

/// Infer-mode pass over a split; never modifies the network.
EvalMetrics evaluate(zoo::Network& net, const SplitView& split, const LossWeights& w = {}, int batch_size = 32);
double evaluate_id(zoo::Network& net, const SplitView& split);
SegMetrics evaluate_seg(zoo::Network& net, const SplitView& split);

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  StopReason reason = StopReason::kExhausted;
  std::string diagnostic;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  /// Validation metrics re-measured after restoring the best weights.
  EvalMetrics restored;
  std::optional<EvalMetrics> test;
  zoo::ParameterCounts train_counts;
  zoo::ParameterCounts inference_counts;
};

/// What the epoch loop drives. Implementations own the model state.
class TrainingSubject {
 public:
  virtual ~TrainingSubject() = default;
  /// One pass over the training data; returns the mean training loss.
  virtual double train_epoch(int epoch) = 0;
  virtual EvalMetrics validate() = 0;
  /// Remember the current state as the best so far.
  virtual void snapshot() = 0;
  /// Return to the remembered state.
  virtual void restore() = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// The epoch loop with early stopping and best-state restoration.
TrainingReport run_training(TrainingSubject& subject, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Trains a network with a decoder on the weighted joint loss. Leaves the network
/// at its best-validation weights. Throws ValueError if the network has no decoder.
TrainingReport train_joint(zoo::Network& net, const SplitView& train, const SplitView& val, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Trains encoder + head on the ID loss alone. Throws ValueError if the network
/// has a decoder.
TrainingReport train_id_only(zoo::Network& net, const SplitView& train, const SplitView& val,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Columns epoch,train_loss,val_loss,val_id_acc,val_seg_pixacc,seconds; one
/// row per epoch then a "restored:<best>" row measured after restoration.
void write_metrics_csv(std::ostream& out, const TrainingReport& report);

}  // namespace segdistill::train
