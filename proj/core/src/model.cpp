// SPDX-License-Identifier: Apache-2.0
#include "segdistill/model.hpp"

#include <cmath>
#include <sstream>

#include "segdistill/error.hpp"
#include "segdistill/rng.hpp"

namespace segdistill::zoo {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::kEncoder:
      return "encoder";
    case Partition::kDecoder:
      return "decoder";
    case Partition::kHead:
      return "head";
  }
  return "?";
}

std::string FeatureShape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

namespace {

Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, std::uint64_t seed) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
  return t;
}

class GraphBuilder {
 public:
  GraphBuilder(Partition partition, std::uint64_t seed) : seed_(seed) { graph_.partition = partition; }

  void add_external(const std::string& node, FeatureShape shape) {
    shapes_[node] = shape;
    graph_.externals.push_back(Tap{node, shape});
  }

  FeatureShape shape(const std::string& node) const { return shapes_.at(node); }

  std::string conv(const std::string& name, const std::string& in, int k, int cout, int stride, bool bias) {
    const FeatureShape s = shape(in);
    Layer l = make(LayerKind::kConv, name, {in});
    l.stride = stride;
    l.params.push_back(param(name + "/kernel", glorot_uniform(Shape{k, k, s.channels, cout}, k * k * s.channels,
                                                              k * k * cout, seed_for(name + "/kernel"))));
    if (bias) l.params.push_back(param(name + "/bias", Tensor(Shape{cout})));
    l.shape = {ceil_div(s.height, stride), ceil_div(s.width, stride), cout};
    return push(std::move(l));
  }

  std::string depthwise(const std::string& name, const std::string& in, int k, int stride) {
    const FeatureShape s = shape(in);
    Layer l = make(LayerKind::kDepthwise, name, {in});
    l.stride = stride;
    l.params.push_back(
        param(name + "/kernel", glorot_uniform(Shape{k, k, s.channels}, k * k, k * k, seed_for(name + "/kernel"))));
    l.shape = {ceil_div(s.height, stride), ceil_div(s.width, stride), s.channels};
    return push(std::move(l));
  }

  std::string transpose_conv(const std::string& name, const std::string& in, int k, int cout, int stride) {
    const FeatureShape s = shape(in);
    Layer l = make(LayerKind::kTransposeConv, name, {in});
    l.stride = stride;
    l.params.push_back(param(name + "/kernel", glorot_uniform(Shape{k, k, cout, s.channels}, k * k * s.channels,
                                                              k * k * cout, seed_for(name + "/kernel"))));
    l.shape = {s.height * stride, s.width * stride, cout};
    return push(std::move(l));
  }

  std::string batch_norm(const std::string& name, const std::string& in) {
    const FeatureShape s = shape(in);
    Layer l = make(LayerKind::kBatchNorm, name, {in});
    l.params.push_back(param(name + "/gamma", Tensor(Shape{s.channels}, 1.0f)));
    l.params.push_back(param(name + "/beta", Tensor(Shape{s.channels}, 0.0f)));
    l.params.push_back(param(name + "/moving_mean", Tensor(Shape{s.channels}, 0.0f), false));
    l.params.push_back(param(name + "/moving_variance", Tensor(Shape{s.channels}, 1.0f), false));
    l.shape = s;
    return push(std::move(l));
  }

  std::string activation(const std::string& name, const std::string& in, Activation kind) {
    Layer l = make(LayerKind::kActivation, name, {in});
    l.activation = kind;
    l.shape = shape(in);
    return push(std::move(l));
  }

  std::string add(const std::string& name, const std::string& a, const std::string& b) {
    Layer l = make(LayerKind::kAdd, name, {a, b});
    l.shape = shape(a);
    return push(std::move(l));
  }

  std::string concat(const std::string& name, const std::string& a, const std::string& b) {
    const FeatureShape sa = shape(a), sb = shape(b);
    if (sa.height != sb.height || sa.width != sb.width) {
      throw ShapeError("cannot concatenate " + a + " (" + sa.str() + ") with " + b + " (" + sb.str() + ")");
    }
    Layer l = make(LayerKind::kConcat, name, {a, b});
    l.shape = {sa.height, sa.width, sa.channels + sb.channels};
    return push(std::move(l));
  }

  std::string global_pool(const std::string& name, const std::string& in) {
    Layer l = make(LayerKind::kGlobalPool, name, {in});
    l.shape = {1, 1, shape(in).channels};
    return push(std::move(l));
  }

  std::string dense(const std::string& name, const std::string& in, int dout) {
    const int din = shape(in).channels;
    Layer l = make(LayerKind::kDense, name, {in});
    l.params.push_back(param(name + "/kernel", glorot_uniform(Shape{din, dout}, din, dout, seed_for(name + "/kernel"))));
    l.params.push_back(param(name + "/bias", Tensor(Shape{dout})));
    l.shape = {1, 1, dout};
    return push(std::move(l));
  }

  std::string softmax(const std::string& name, const std::string& in) {
    Layer l = make(LayerKind::kSoftmax, name, {in});
    l.shape = shape(in);
    return push(std::move(l));
  }

  Graph finish(const std::string& output) {
    graph_.output = output;
    graph_.output_shape = shape(output);
    return std::move(graph_);
  }

 private:
  static int ceil_div(int a, int b) { return (a + b - 1) / b; }

  std::uint64_t seed_for(const std::string& name) const { return mix_seed(seed_, hash_name(name)); }

  Layer make(LayerKind kind, const std::string& name, std::vector<std::string> inputs) const {
    if (shapes_.count(name)) throw ValueError("duplicate layer name " + name);
    for (const auto& in : inputs) {
      if (!shapes_.count(in)) throw ShapeError("layer " + name + " reads unknown feature map " + in);
    }
    Layer l;
    l.kind = kind;
    l.output = name;
    l.inputs = std::move(inputs);
    return l;
  }

  std::string param(const std::string& name, Tensor value, bool trainable = true) {
    graph_.params.push_back(Parameter{name, graph_.partition, std::move(value), trainable});
    return name;
  }

  std::string push(Layer l) {
    shapes_[l.output] = l.shape;
    std::string out = l.output;
    graph_.layers.push_back(std::move(l));
    return out;
  }

  Graph graph_;
  std::uint64_t seed_;
  std::unordered_map<std::string, FeatureShape> shapes_;
};

int scaled(int channels, float multiplier) {
  return std::max(1, static_cast<int>(std::lround(channels * static_cast<double>(multiplier))));
}

std::string conv_bn_act(GraphBuilder& b, const std::string& name, const std::string& in, int k, int cout,
                        int stride, Activation act) {
  std::string x = b.conv(name + "/conv", in, k, cout, stride, /*bias=*/false);
  x = b.batch_norm(name + "/bn", x);
  if (act != Activation::kLinear) x = b.activation(name + "/act", x, act);
  return x;
}

}  // namespace

EncoderGraph build_encoder(const EncoderConfig& cfg, int input_resolution, std::uint64_t seed) {
  if (cfg.input_channels < 1 || cfg.stem_channels < 1) throw ValueError("encoder channels must be >= 1");
  if (cfg.width_multiplier <= 0.0f) throw ValueError("width multiplier must be positive");
  if (cfg.stem_stride != 1 && cfg.stem_stride != 2) throw ValueError("stem stride must be 1 or 2");
  int downsamplings = cfg.stem_stride == 2 ? 1 : 0;
  for (const auto& st : cfg.stages) {
    if (st.stride != 1 && st.stride != 2) throw ValueError("stage strides must be 1 or 2");
    if (st.channels < 1 || st.repeats < 1 || st.expansion < 1) {
      throw ValueError("stage channels, repeats and expansion must be >= 1");
    }
    if (st.stride == 2) ++downsamplings;
  }
  if (input_resolution < 1 || input_resolution % (1 << downsamplings) != 0) {
    throw ShapeError("input resolution " + std::to_string(input_resolution) + " is not divisible by 2^" +
                     std::to_string(downsamplings));
  }

  EncoderGraph enc;
  enc.config = cfg;
  enc.resolution = input_resolution;
  enc.downsamplings = downsamplings;

  GraphBuilder gb(Partition::kEncoder, seed);
  gb.add_external("input", {input_resolution, input_resolution, cfg.input_channels});

  const bool plain = cfg.kind == EncoderKind::kPlain;
  const Activation act = plain ? Activation::kRelu : Activation::kRelu6;
  std::string x = "input";
  // The raw input is never a tap.
  auto maybe_tap = [&](int stride) {
    if (stride == 2 && x != "input") enc.taps.push_back(Tap{x, gb.shape(x)});
  };

  maybe_tap(cfg.stem_stride);
  x = conv_bn_act(gb, "encoder/stem", x, 3, scaled(cfg.stem_channels, cfg.width_multiplier), cfg.stem_stride, act);

  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageSpec& st = cfg.stages[si];
    const int cout = scaled(st.channels, cfg.width_multiplier);
    for (int r = 0; r < st.repeats; ++r) {
      const int stride = r == 0 ? st.stride : 1;
      const std::string name = "encoder/stage" + std::to_string(si + 1) + "_" + std::to_string(r + 1);
      maybe_tap(stride);
      if (plain) {
        x = conv_bn_act(gb, name, x, 3, cout, stride, act);
        continue;
      }
      const std::string block_in = x;
      const int cin = gb.shape(x).channels;
      if (st.expansion != 1) x = conv_bn_act(gb, name + "/expand", x, 1, cin * st.expansion, 1, act);
      x = gb.depthwise(name + "/depthwise/conv", x, 3, stride);
      x = gb.batch_norm(name + "/depthwise/bn", x);
      x = gb.activation(name + "/depthwise/act", x, act);
      x = conv_bn_act(gb, name + "/project", x, 1, cout, 1, Activation::kLinear);
      if (stride == 1 && cin == cout) x = gb.add(name + "/add", block_in, x);
    }
  }
  if (cfg.last_channels > 0) {
    x = conv_bn_act(gb, "encoder/last", x, 1, scaled(cfg.last_channels, cfg.width_multiplier), 1, act);
  }
  enc.graph = gb.finish(x);
  enc.graph.externals.clear();
  return enc;
}

namespace {

std::unordered_map<std::string, FeatureShape> encoder_node_shapes(const EncoderGraph& encoder) {
  std::unordered_map<std::string, FeatureShape> out;
  out["input"] = {encoder.resolution, encoder.resolution, encoder.config.input_channels};
  for (const auto& l : encoder.graph.layers) out[l.output] = l.shape;
  return out;
}

}  // namespace

DecoderGraph build_decoder(const DecoderConfig& cfg, const EncoderGraph& encoder, std::uint64_t seed) {
  if (static_cast<int>(cfg.stages.size()) != encoder.downsamplings) {
    throw ShapeError("decoder has " + std::to_string(cfg.stages.size()) + " upsampling stages but the encoder " +
                     "downsamples " + std::to_string(encoder.downsamplings) + " times");
  }
  if (cfg.classes < 2) throw ValueError("segmentation needs at least 2 classes");
  if (cfg.upsample_kernel < 1) throw ValueError("upsampling kernel must be >= 1");

  GraphBuilder b(Partition::kDecoder, seed);
  b.add_external(encoder.graph.output, encoder.graph.output_shape);
  std::string x = encoder.graph.output;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const DecoderStage& st = cfg.stages[i];
    if (st.channels < 1) throw ValueError("decoder stage channels must be >= 1");
    const std::string name = "decoder/up" + std::to_string(i + 1);
    x = b.transpose_conv(name + "/upsample/conv", x, cfg.upsample_kernel, st.channels, 2);
    x = b.batch_norm(name + "/upsample/bn", x);
    x = b.activation(name + "/upsample/act", x, Activation::kRelu);
    if (st.skip >= 0) {
      if (st.skip >= static_cast<int>(encoder.taps.size())) {
        throw ShapeError(name + " skips into tap " + std::to_string(st.skip) + " but the encoder exposes " +
                         std::to_string(encoder.taps.size()) + " taps");
      }
      const Tap& tap = encoder.taps[st.skip];
      if (tap.shape.height != b.shape(x).height) {
        throw ShapeError(name + " at " + b.shape(x).str() + " cannot skip into tap " + tap.node + " (" +
                         tap.shape.str() + ")");
      }
      b.add_external(tap.node, tap.shape);
      x = b.concat(name + "/skip", x, tap.node);
    }
    x = b.conv(name + "/refine/conv", x, 3, st.channels, 1, false);
    x = b.batch_norm(name + "/refine/bn", x);
    x = b.activation(name + "/refine/act", x, Activation::kRelu);
  }
  x = b.conv("decoder/classifier", x, 1, cfg.classes, 1, /*bias=*/true);
  x = b.softmax("decoder/probs", x);
  DecoderGraph dec;
  dec.config = cfg;
  dec.graph = b.finish(x);
  if (dec.graph.output_shape.height != encoder.resolution) {
    throw ShapeError("decoder output " + dec.graph.output_shape.str() + " does not match input resolution " +
                     std::to_string(encoder.resolution));
  }
  return dec;
}

IdHeadGraph build_id_head(const IdHeadConfig& cfg, const EncoderGraph& encoder, std::uint64_t seed) {
  if (cfg.features < 1) throw ValueError("ID feature width must be >= 1");
  if (cfg.classes < 2) throw ValueError("ID head needs at least 2 classes");
  GraphBuilder b(Partition::kHead, seed);
  b.add_external(encoder.graph.output, encoder.graph.output_shape);
  std::string x = b.global_pool("head/pool", encoder.graph.output);
  x = b.dense("head/features", x, cfg.features);
  x = b.activation("head/features/act", x, Activation::kRelu);
  IdHeadGraph head;
  head.config = cfg;
  head.logits = b.dense("head/classifier", x, cfg.classes);
  x = b.softmax("head/probs", head.logits);
  head.graph = b.finish(x);
  return head;
}

DecoderConfig halving_decoder(const EncoderGraph& encoder, int base_width, int classes, int upsample_kernel) {
  DecoderConfig cfg;
  cfg.classes = classes;
  cfg.upsample_kernel = upsample_kernel;
  int height = encoder.graph.output_shape.height;
  int width = base_width;
  for (int i = 0; i < encoder.downsamplings; ++i) {
    height *= 2;
    int skip = -1;
    for (std::size_t t = 0; t < encoder.taps.size(); ++t) {
      if (encoder.taps[t].shape.height == height) skip = static_cast<int>(t);
    }
    cfg.stages.push_back(DecoderStage{std::max(width, 1), skip});
    width /= 2;
  }
  return cfg;
}

Network assemble_joint(EncoderGraph encoder, std::optional<DecoderGraph> decoder, IdHeadGraph head) {
  const auto shapes = encoder_node_shapes(encoder);
  auto check = [&](const Graph& g, const char* what) {
    for (const Tap& ext : g.externals) {
      auto it = shapes.find(ext.node);
      if (it == shapes.end()) {
        throw ShapeError(std::string(what) + " reads " + ext.node + ", which the encoder does not produce");
      }
      if (!(it->second == ext.shape)) {
        throw ShapeError(std::string(what) + " expects " + ext.node + " as " + ext.shape.str() +
                         " but the encoder produces " + it->second.str());
      }
    }
  };
  check(head.graph, "ID head");
  if (decoder) check(decoder->graph, "decoder");

  Network net;
  net.config_.resolution = encoder.resolution;
  net.config_.encoder = encoder.config;
  net.config_.head = head.config;
  if (decoder) net.config_.decoder = decoder->config;

  auto take = [&](Graph& g) {
    for (auto& p : g.params) net.params_.push_back(std::move(p));
    g.params.clear();
  };
  take(encoder.graph);
  if (decoder) take(decoder->graph);
  take(head.graph);
  net.encoder_ = std::move(encoder);
  net.decoder_ = std::move(decoder);
  net.head_ = std::move(head);
  net.index_parameters();
  return net;
}

void Network::index_parameters() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!index_.emplace(params_[i].name, i).second) throw ValueError("duplicate parameter " + params_[i].name);
  }
}

Network prune_teacher(const Network& net) {
  if (!net.has_decoder()) throw ValueError("network has no segmentation decoder to prune");
  Network out;
  out.config_ = net.config_;
  out.config_.decoder.reset();
  out.encoder_ = net.encoder_;
  out.head_ = net.head_;
  for (const auto& p : net.params_) {
    if (p.partition != Partition::kDecoder) out.params_.push_back(p);
  }
  out.index_parameters();
  return out;
}

Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  EncoderGraph enc = build_encoder(cfg.encoder, cfg.resolution, seed);
  std::optional<DecoderGraph> dec;
  if (cfg.decoder) dec = build_decoder(*cfg.decoder, enc, seed);
  IdHeadGraph head = build_id_head(cfg.head, enc, seed);
  return assemble_joint(std::move(enc), std::move(dec), std::move(head));
}

const Parameter& Network::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter " + name);
  return params_[it->second];
}

Parameter& Network::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter " + name);
  return params_[it->second];
}

std::vector<std::size_t> Network::trainable_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].trainable) out.push_back(i);
  }
  return out;
}

ParameterCounts Network::count_parameters() const {
  ParameterCounts c;
  for (const auto& p : params_) {
    switch (p.partition) {
      case Partition::kEncoder:
        c.encoder += p.value.size();
        break;
      case Partition::kDecoder:
        c.decoder += p.value.size();
        break;
      case Partition::kHead:
        c.head += p.value.size();
        break;
    }
  }
  return c;
}

ParameterCounts count_parameters(const Network& net) { return net.count_parameters(); }

std::vector<Var> Network::bind(Tape& tape) const {
  std::vector<Var> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(tape.leaf(p.value));
  }
  return out;
}

Network::Output Network::forward(Tape& tape, Var images, Mode mode, bool run_decoder) {
  const std::vector<Var> vars = bind(tape);
  return forward(tape, vars, images, mode, run_decoder);
}

Network::Output Network::forward(Tape& tape, std::span<const Var> trainable, Var images, Mode mode,
                                 bool run_decoder) {
  if (&images.tape() != &tape) throw ValueError("images are not on the forward tape");
  const Shape& xs = images.shape();
  const int res = config_.resolution;
  const int ch = config_.encoder.input_channels;
  if (xs.rank() != 4 || xs[1] != res || xs[2] != res || xs[3] != ch) {
    throw ShapeError("network expects images [N," + std::to_string(res) + "," + std::to_string(res) + "," +
                     std::to_string(ch) + "], got " + xs.str());
  }
  std::vector<Var> by_index(params_.size());
  {
    std::size_t k = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].trainable) continue;
      if (k >= trainable.size()) throw ValueError("too few bound parameters for forward");
      by_index[i] = trainable[k++];
    }
    if (k != trainable.size()) throw ValueError("too many bound parameters for forward");
  }
  auto var_of = [&](const std::string& name) { return by_index.at(index_.at(name)); };
  auto tensor_of = [&](const std::string& name) -> Tensor& { return params_[index_.at(name)].value; };

  std::unordered_map<std::string, Var> nodes;
  std::unordered_map<std::string, PredictionDistribution> dists;
  nodes.emplace("input", images);

  auto run = [&](const Graph& g) {
    for (const Layer& l : g.layers) {
      Var in = nodes.at(l.inputs.front());
      Var y;
      switch (l.kind) {
        case LayerKind::kConv:
          y = conv2d(in, var_of(l.params[0]), l.params.size() > 1 ? var_of(l.params[1]) : Var{}, l.stride,
                     l.padding);
          break;
        case LayerKind::kDepthwise:
          y = depthwise_conv2d(in, var_of(l.params[0]), l.stride, l.padding);
          break;
        case LayerKind::kTransposeConv:
          y = transpose_conv2d(in, var_of(l.params[0]), l.params.size() > 1 ? var_of(l.params[1]) : Var{},
                               l.stride);
          break;
        case LayerKind::kBatchNorm:
          y = batch_norm(in, var_of(l.params[0]), var_of(l.params[1]),
                         BatchNormStats{tensor_of(l.params[2]), tensor_of(l.params[3])}, mode);
          break;
        case LayerKind::kActivation:
          y = activation(in, l.activation);
          break;
        case LayerKind::kAdd:
          y = residual_add(in, nodes.at(l.inputs[1]));
          break;
        case LayerKind::kConcat:
          y = concat_channels(in, nodes.at(l.inputs[1]));
          break;
        case LayerKind::kGlobalPool:
          y = global_avg_pool(in);
          break;
        case LayerKind::kDense:
          y = dense(in, var_of(l.params[0]), var_of(l.params[1]));
          break;
        case LayerKind::kSoftmax: {
          PredictionDistribution d = softmax(in);
          y = d.probs();
          dists.emplace(l.output, d);
          break;
        }
      }
      nodes.emplace(l.output, y);
    }
  };

  run(encoder_.graph);
  run(head_.graph);
  if (decoder_ && run_decoder) run(decoder_->graph);

  Output out;
  out.id_logits = nodes.at(head_.logits);
  out.id = dists.at(head_.graph.output);
  if (decoder_ && run_decoder) out.seg = dists.at(decoder_->graph.output);
  return out;
}

std::string Network::summary() const {
  static const char* kinds[] = {"conv",  "depthwise", "transpose_conv", "batch_norm", "activation",
                                "add",   "concat",    "global_pool",    "dense",      "softmax"};
  std::ostringstream os;
  auto dump = [&](const Graph& g) {
    for (const Layer& l : g.layers) {
      std::size_t n = 0;
      for (const auto& p : l.params) n += parameter(p).value.size();
      os << l.output << "  " << kinds[static_cast<int>(l.kind)] << "  " << l.shape.str() << "  " << n << "\n";
    }
  };
  dump(encoder_.graph);
  if (decoder_) dump(decoder_->graph);
  dump(head_.graph);
  return os.str();
}

}  // namespace segdistill::zoo
