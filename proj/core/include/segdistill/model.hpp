// SPDX-License-Identifier: Apache-2.0
// Declarative construction of the encoder / segmentation decoder / ID head
// networks, joint assembly and teacher pruning.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "segdistill/ops.hpp"

namespace segdistill::zoo {

enum class Partition { kEncoder, kDecoder, kHead };

const char* partition_name(Partition p);

enum class EncoderKind {
  kInvertedResidual,  ///< expand 1x1 -> depthwise 3x3 -> project 1x1 blocks
  kPlain,             ///< 3x3 conv + BN + ReLU stacks (desk-scale baseline)
};

/// One row of the stage table: expansion t, output channels c, repeats n, first stride s.
struct StageSpec {
  int expansion = 1;
  int channels = 1;
  int repeats = 1;
  int stride = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kInvertedResidual;
  int input_channels = 3;
  int stem_channels = 8;
  int stem_stride = 1;
  std::vector<StageSpec> stages;
  /// Width of a final 1x1 conv (1280 in MobileNetV2); 0 disables it.
  int last_channels = 0;
  /// Channel counts are round(c * multiplier), at least 1.
  float width_multiplier = 1.0f;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderStage {
  int channels = 8;
  /// Index into the encoder's tap list, or -1 for no skip connection.
  int skip = -1;

  friend bool operator==(const DecoderStage&, const DecoderStage&) = default;
};

struct DecoderConfig {
  /// Ordered from the bottleneck outwards; one per encoder downsampling.
  std::vector<DecoderStage> stages;
  int classes = 7;
  int upsample_kernel = 3;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct IdHeadConfig {
  int features = 128;
  int classes = 67;

  friend bool operator==(const IdHeadConfig&, const IdHeadConfig&) = default;
};

struct NetworkConfig {
  int resolution = 32;
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;
  IdHeadConfig head;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Per-sample feature map extents; dense features use height = width = 1.
struct FeatureShape {
  int height = 1;
  int width = 1;
  int channels = 1;

  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
  std::string str() const;
};

struct Parameter {
  std::string name;
  Partition partition = Partition::kEncoder;
  Tensor value;
  /// Batch-norm running statistics are counted but not trained.
  bool trainable = true;
};

enum class LayerKind {
  kConv,
  kDepthwise,
  kTransposeConv,
  kBatchNorm,
  kActivation,
  kAdd,
  kConcat,
  kGlobalPool,
  kDense,
  kSoftmax,
};

/// One node of a layer graph. Inputs and outputs are named feature maps;
/// "input" is the image batch.
struct Layer {
  LayerKind kind = LayerKind::kConv;
  std::string output;
  std::vector<std::string> inputs;
  std::vector<std::string> params;
  int stride = 1;
  Padding padding = Padding::kSame;
  Activation activation = Activation::kLinear;
  FeatureShape shape;
};

struct Tap {
  std::string node;
  FeatureShape shape;
};

struct Graph {
  Partition partition = Partition::kEncoder;
  std::vector<Parameter> params;
  std::vector<Layer> layers;
  std::string output;
  FeatureShape output_shape;
  /// Feature maps read from another component, with the shapes they were built against.
  std::vector<Tap> externals;
};

struct EncoderGraph {
  EncoderConfig config;
  int resolution = 0;
  int downsamplings = 0;
  Graph graph;
  /// Feature maps right before each downsampling, shallow to deep.
  std::vector<Tap> taps;
};

struct DecoderGraph {
  DecoderConfig config;
  Graph graph;
};

struct IdHeadGraph {
  IdHeadConfig config;
  Graph graph;
  std::string logits;
};

/// Scalar parameter counts split by partition.
struct ParameterCounts {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t head = 0;

  std::size_t total() const noexcept { return encoder + decoder + head; }
  std::size_t inference() const noexcept { return encoder + head; }
};

/// Throws ShapeError when the resolution is not divisible by 2^(stride-2 count).
EncoderGraph build_encoder(const EncoderConfig& cfg, int input_resolution, std::uint64_t seed = 0);
DecoderGraph build_decoder(const DecoderConfig& cfg, const EncoderGraph& encoder, std::uint64_t seed = 0);
IdHeadGraph build_id_head(const IdHeadConfig& cfg, const EncoderGraph& encoder, std::uint64_t seed = 0);

/// Decoder whose stage widths halve from `base_width`, skipping into every tap
/// at matching resolution.
DecoderConfig halving_decoder(const EncoderGraph& encoder, int base_width, int classes, int upsample_kernel = 3);

/// Encoder + optional segmentation decoder + ID head over one shared registry.
class Network {
 public:
  struct Output {
    Var id_logits;
    std::optional<PredictionDistribution> id;
    std::optional<PredictionDistribution> seg;
  };

  Network() = default;

  bool has_decoder() const noexcept { return decoder_.has_value(); }
  const NetworkConfig& config() const noexcept { return config_; }
  int resolution() const noexcept { return config_.resolution; }
  int id_classes() const noexcept { return config_.head.classes; }
  int seg_classes() const noexcept { return decoder_ ? decoder_->config.classes : 0; }

  /// Registry in encoder, decoder, head order.
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const Parameter& parameter(const std::string& name) const;
  Parameter& parameter(const std::string& name);
  std::vector<std::size_t> trainable_indices() const;

  const EncoderGraph& encoder() const noexcept { return encoder_; }
  const std::optional<DecoderGraph>& decoder() const noexcept { return decoder_; }
  const IdHeadGraph& head() const noexcept { return head_; }

  ParameterCounts count_parameters() const;

  /// Trainable parameters as tape values: leaves on a recording tape,
  /// constants otherwise. Ordered like trainable_indices().
  std::vector<Var> bind(Tape& tape) const;

  /// Runs encoder and head, plus the decoder when present and requested.
  /// The ID path never reads decoder parameters. Infer mode performs no writes.
  Output forward(Tape& tape, std::span<const Var> trainable, Var images, Mode mode, bool run_decoder = true);
  Output forward(Tape& tape, Var images, Mode mode, bool run_decoder = true);

  /// Human-readable layer listing.
  std::string summary() const;

 private:
  friend Network assemble_joint(EncoderGraph, std::optional<DecoderGraph>, IdHeadGraph);
  friend Network prune_teacher(const Network&);

  void index_parameters();

  NetworkConfig config_;
  EncoderGraph encoder_;
  std::optional<DecoderGraph> decoder_;
  IdHeadGraph head_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Combines components built against the same encoder. Decoder may be absent
/// (ID-only network). Rejects incompatible component shapes.
Network assemble_joint(EncoderGraph encoder, std::optional<DecoderGraph> decoder, IdHeadGraph head);

/// Drops the decoder. ID outputs stay bit-identical. Throws ValueError when
/// the network has no decoder to remove.
Network prune_teacher(const Network& net);

/// Builds every component of `cfg` from one seed.
Network build_network(const NetworkConfig& cfg, std::uint64_t seed);

ParameterCounts count_parameters(const Network& net);

}  // namespace segdistill::zoo
