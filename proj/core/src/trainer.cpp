// SPDX-License-Identifier: Apache-2.0
#include "segdistill/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "segdistill/error.hpp"
#include "segdistill/optimizer.hpp"
#include "segdistill/rng.hpp"

namespace segdistill::train {

using zoo::Network;

void LossWeights::validate() const {
  if (!std::isfinite(seg) || !std::isfinite(id) || seg < 0.0f || id < 0.0f) {
    throw ValueError("loss weights must be finite and non-negative");
  }
  if (seg == 0.0f && id == 0.0f) throw ValueError("loss weights must not both be zero");
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ValueError("max_epochs must be >= 1");
  if (patience < 1) throw ValueError("patience must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) throw ValueError("learning rate must be >= 0");
  weights.validate();
}

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kExhausted:
      return "exhausted";
    case StopReason::kPatience:
      return "patience";
    case StopReason::kNonFinite:
      return "non-finite";
  }
  return "?";
}

EarlyStopping::EarlyStopping(int patience, int max_epochs) : patience_(patience), max_epochs_(max_epochs) {
  if (patience < 1) throw ValueError("patience must be >= 1");
  if (max_epochs < 1) throw ValueError("max_epochs must be >= 1");
}

EarlyStopping::Decision EarlyStopping::update(double val_loss) {
  if (reason_) throw ValueError("early stopping already decided to stop");
  ++epoch_;
  improved_ = false;
  if (!std::isfinite(val_loss)) {
    reason_ = StopReason::kNonFinite;
    return Decision::kStop;
  }
  if (best_epoch_ == 0 || val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch_;
    improved_ = true;
  }
  if (epoch_ - best_epoch_ >= patience_) {
    reason_ = StopReason::kPatience;
  } else if (epoch_ >= max_epochs_) {
    reason_ = StopReason::kExhausted;
  }
  return reason_ ? Decision::kStop : Decision::kContinue;
}

Var joint_loss(const JointBatchOutputs& outputs, const JointBatchTargets& targets, const LossWeights& w) {
  w.validate();
  const Var ce_id = categorical_cross_entropy(outputs.id, targets.id);
  if (!outputs.seg || !targets.seg) return scale(ce_id, w.id);
  const Var ce_seg = categorical_cross_entropy(*outputs.seg, *targets.seg);
  return weighted_sum(ce_seg, w.seg, ce_id, w.id);
}

float joint_loss(float ce_seg, float ce_id, const LossWeights& w) {
  w.validate();
  return w.seg * ce_seg + w.id * ce_id;
}

SplitView view(const synth::Dataset& dataset, const synth::SplitAssignment& splits, synth::Split which) {
  if (splits.tags.size() != dataset.samples.size()) throw ValueError("split assignment does not cover the dataset");
  return SplitView{&dataset, splits.indices(which)};
}

namespace {

struct Batch {
  Tensor images;
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> pixels;
};

Batch make_batch(const SplitView& split, std::span<const std::size_t> positions, bool with_masks) {
  const synth::Dataset& ds = *split.dataset;
  const int r = ds.resolution;
  const std::size_t plane = static_cast<std::size_t>(r) * r;
  Batch b;
  b.images = Tensor(Shape{static_cast<int>(positions.size()), r, r, 3});
  b.ids.reserve(positions.size());
  if (with_masks) b.pixels.reserve(positions.size() * plane);
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const synth::Sample& s = ds.samples.at(positions[k]);
    if (s.resolution != r || s.image.size() != plane * 3) throw ShapeError("sample does not match dataset resolution");
    std::copy(s.image.values().begin(), s.image.values().end(), b.images.data().begin() + k * plane * 3);
    b.ids.push_back(s.identity);
    if (with_masks) b.pixels.insert(b.pixels.end(), s.mask.begin(), s.mask.end());
  }
  return b;
}

void check_compatible(const Network& net, const SplitView& split, const char* which) {
  if (!split.dataset || split.indices.empty()) throw ValueError(std::string(which) + " split is empty");
  const synth::Dataset& ds = *split.dataset;
  if (ds.resolution != net.resolution()) {
    throw ShapeError(std::string(which) + " data resolution " + std::to_string(ds.resolution) +
                     " does not match network resolution " + std::to_string(net.resolution()));
  }
  if (ds.identity_count > net.id_classes()) {
    throw ShapeError("dataset has " + std::to_string(ds.identity_count) + " identities but the ID head has " +
                     std::to_string(net.id_classes()) + " classes");
  }
  if (net.has_decoder() && ds.class_count() != net.seg_classes()) {
    throw ShapeError("dataset palette has " + std::to_string(ds.class_count()) +
                     " classes but the decoder predicts " + std::to_string(net.seg_classes()));
  }
}

JointBatchTargets make_targets(const Batch& b, const Network& net, bool with_seg) {
  const int n = static_cast<int>(b.ids.size());
  JointBatchTargets t{std::nullopt, OneHotTarget::from_indices({n}, b.ids, net.id_classes())};
  if (with_seg) {
    const int r = net.resolution();
    t.seg = OneHotTarget::from_indices({n, r, r}, b.pixels, net.seg_classes());
  }
  return t;
}

class NetworkSubject final : public TrainingSubject {
 public:
  NetworkSubject(Network& net, const SplitView& train, const SplitView& val, const TrainConfig& cfg, bool with_seg)
      : net_(net),
        train_(train),
        val_(val),
        cfg_(cfg),
        with_seg_(with_seg),
        weights_(with_seg ? cfg.weights : LossWeights{0.0f, cfg.weights.id}),
        adam_(AdamHyperparameters{cfg.learning_rate}),
        trainable_(net.trainable_indices()) {}

  double train_epoch(int epoch) override {
    std::vector<std::size_t> order = train_.indices;
    Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch), 0x73687566));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
    double total = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + bs);
      // A lone trailing sample would give degenerate batch statistics.
      if (end - start < 2 && start > 0) break;
      const Batch b = make_batch(train_, std::span(order).subspan(start, end - start), with_seg_);

      Tape tape;
      const std::vector<Var> vars = net_.bind(tape);
      const Var x = tape.constant(b.images);
      const Network::Output out = net_.forward(tape, vars, x, Mode::kTrain, with_seg_);
      const Var loss = joint_loss(JointBatchOutputs{out.seg, *out.id}, make_targets(b, net_, with_seg_), weights_);
      const float value = loss.value().item();
      if (!std::isfinite(value)) {
        throw ValueError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index));
      }
      tape.backward(loss);

      std::vector<ParamSlot> slots;
      slots.reserve(trainable_.size());
      auto& params = net_.parameters();
      for (std::size_t k = 0; k < trainable_.size(); ++k) {
        zoo::Parameter& p = params[trainable_[k]];
        slots.push_back(ParamSlot{p.name, p.value.data(), tape.grad(vars[k].id())});
      }
      try {
        adam_.step(slots);
      } catch (const ValueError& e) {
        throw ValueError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
      total += static_cast<double>(value) * static_cast<double>(end - start);
      seen += end - start;
    }
    return total / static_cast<double>(seen);
  }

  EvalMetrics validate() override { return evaluate(net_, val_, weights_, 32); }

  void snapshot() override {
    best_.clear();
    for (const auto& p : net_.parameters()) best_.push_back(p.value);
  }

  void restore() override {
    auto& params = net_.parameters();
    if (best_.size() != params.size()) throw ValueError("no snapshot to restore");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best_[i];
  }

 private:
  Network& net_;
  const SplitView& train_;
  const SplitView& val_;
  TrainConfig cfg_;
  bool with_seg_;
  LossWeights weights_;
  Adam adam_;
  std::vector<std::size_t> trainable_;
  std::vector<Tensor> best_;
};

TrainingReport train_network(Network& net, const SplitView& train, const SplitView& val, const TrainConfig& cfg,
                             bool with_seg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(net, train, "training");
  check_compatible(net, val, "validation");
  NetworkSubject subject(net, train, val, cfg, with_seg);
  TrainingReport report = run_training(subject, cfg, on_epoch);
  report.train_counts = net.count_parameters();
  report.inference_counts = report.train_counts;
  report.inference_counts.decoder = 0;
  return report;
}

}  // namespace

EvalMetrics evaluate(Network& net, const SplitView& split, const LossWeights& w, int batch_size) {
  check_compatible(net, split, "evaluation");
  if (batch_size < 1) throw ValueError("batch size must be >= 1");
  const bool with_seg = net.has_decoder();
  const int r = net.resolution();
  const std::size_t plane = static_cast<std::size_t>(r) * r;
  const std::size_t n = split.indices.size();
  std::vector<float> probs;
  std::vector<std::int32_t> labels;
  std::optional<SegAccumulator> seg;
  if (with_seg) seg.emplace(net.seg_classes());
  double loss_sum = 0.0;
  std::vector<std::uint8_t> pred(plane), truth(plane);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    const Batch b = make_batch(split, std::span(split.indices).subspan(start, end - start), with_seg);
    Tape tape(false);
    const Var x = tape.constant(b.images);
    const Network::Output out = net.forward(tape, x, Mode::kInfer, with_seg);
    const Var loss = joint_loss(JointBatchOutputs{out.seg, *out.id}, make_targets(b, net, with_seg),
                                with_seg ? w : LossWeights{0.0f, w.id});
    loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(end - start);
    const auto& p = out.id->probs().value().values();
    probs.insert(probs.end(), p.begin(), p.end());
    labels.insert(labels.end(), b.ids.begin(), b.ids.end());
    if (with_seg) {
      const Tensor& sp = out.seg->probs().value();
      const int m = net.seg_classes();
      for (std::size_t k = 0; k < end - start; ++k) {
        for (std::size_t px = 0; px < plane; ++px) {
          const std::size_t row = k * plane + px;
          pred[px] = static_cast<std::uint8_t>(argmax(std::span(sp.values()).subspan(row * m, m)));
          truth[px] = static_cast<std::uint8_t>(b.pixels[row]);
        }
        seg->add(pred, truth);
      }
    }
  }
  EvalMetrics m;
  m.samples = n;
  m.loss = loss_sum / static_cast<double>(n);
  m.id_accuracy = id_accuracy(probs, net.id_classes(), labels);
  if (seg) m.seg = seg->result();
  return m;
}

double evaluate_id(Network& net, const SplitView& split) { return evaluate(net, split).id_accuracy; }

SegMetrics evaluate_seg(Network& net, const SplitView& split) {
  if (!net.has_decoder()) throw ValueError("network has no segmentation decoder");
  return *evaluate(net, split).seg;
}

TrainingReport run_training(TrainingSubject& subject, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  EarlyStopping stopper(cfg.patience, cfg.max_epochs);
  TrainingReport report;
  using Clock = std::chrono::steady_clock;
  for (;;) {
    const int epoch = stopper.epoch() + 1;
    const auto t0 = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = subject.train_epoch(epoch);
    const EvalMetrics m = subject.validate();
    rec.val_loss = m.loss;
    rec.val_id_acc = m.id_accuracy;
    if (m.seg) rec.val_seg_pixacc = m.seg->pixel_accuracy;
    if (cfg.timing) rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    const auto decision = stopper.update(m.loss);
    if (stopper.improved()) subject.snapshot();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (decision == EarlyStopping::Decision::kStop) break;
  }
  report.reason = *stopper.reason();
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best_loss();
  if (report.reason == StopReason::kNonFinite) {
    report.diagnostic = "validation loss became non-finite at epoch " + std::to_string(stopper.epoch());
  }
  if (report.best_epoch > 0) subject.restore();
  report.restored = subject.validate();
  return report;
}

TrainingReport train_joint(Network& net, const SplitView& train, const SplitView& val, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  if (!net.has_decoder()) throw ValueError("train_joint needs a network with a segmentation decoder");
  return train_network(net, train, val, cfg, true, on_epoch);
}

TrainingReport train_id_only(Network& net, const SplitView& train, const SplitView& val, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  if (net.has_decoder()) throw ValueError("train_id_only expects a network without a decoder");
  return train_network(net, train, val, cfg, false, on_epoch);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

void write_metrics_csv(std::ostream& out, const TrainingReport& report) {
  out << "epoch,train_loss,val_loss,val_id_acc,val_seg_pixacc,seconds\n";
  for (const EpochRecord& r : report.epochs) {
    out << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_loss) << ',' << fmt(r.val_id_acc) << ','
        << fmt_opt(r.val_seg_pixacc) << ',' << fmt(r.seconds) << '\n';
  }
  if (report.best_epoch > 0) {
    const EpochRecord& best = report.epochs.at(report.best_epoch - 1);
    std::optional<double> seg;
    if (report.restored.seg) seg = report.restored.seg->pixel_accuracy;
    out << "restored:" << report.best_epoch << ',' << fmt(best.train_loss) << ',' << fmt(report.restored.loss)
        << ',' << fmt(report.restored.id_accuracy) << ',' << fmt_opt(seg) << ',' << fmt(0.0) << '\n';
  }
}

}  // namespace segdistill::train
