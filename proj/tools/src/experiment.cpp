// SPDX-License-Identifier: Apache-2.0
#include "experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "segdistill/presets.hpp"

namespace segdistill::cli {

namespace {

std::string where(const std::string& source, const YAML::Node& node) {
  const YAML::Mark m = node.Mark();
  if (m.line < 0) return source + ": ";
  return source + ":" + std::to_string(m.line + 1) + ": ";
}

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    throw ConfigError(where(source_, node) + msg);
  }

  void expect_map(const YAML::Node& node, const std::string& what, const std::set<std::string>& keys) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      if (!keys.count(key)) fail(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  template <typename T>
  T scalar(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(node, "'" + key + "' must be a scalar");
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, "'" + key + "' has an invalid value '" + node.Scalar() + "'");
    }
  }

  int positive(const YAML::Node& map, const std::string& key, int fallback) const {
    if (!map[key]) return fallback;
    const int v = scalar<int>(map[key], key);
    if (v < 1) fail(map[key], "'" + key + "' must be >= 1");
    return v;
  }

  double real(const YAML::Node& map, const std::string& key, double fallback) const {
    if (!map[key]) return fallback;
    const double v = scalar<double>(map[key], key);
    if (!std::isfinite(v) || v < 0.0) fail(map[key], "'" + key + "' must be a finite non-negative number");
    return v;
  }

  zoo::EncoderConfig encoder(const YAML::Node& node) const {
    if (node.IsScalar()) {
      try {
        return encoder_preset(node.Scalar());
      } catch (const ConfigError& e) {
        fail(node, e.what());
      }
    }
    expect_map(node, "encoder", {"preset", "kind", "stem", "stem_stride", "stages", "last", "width"});
    zoo::EncoderConfig e;
    if (node["preset"]) e = encoder_preset(scalar<std::string>(node["preset"], "preset"));
    if (node["kind"]) {
      const auto kind = scalar<std::string>(node["kind"], "kind");
      if (kind == "inverted-residual") {
        e.kind = zoo::EncoderKind::kInvertedResidual;
      } else if (kind == "plain") {
        e.kind = zoo::EncoderKind::kPlain;
      } else {
        fail(node["kind"], "encoder kind must be 'inverted-residual' or 'plain'");
      }
    }
    e.stem_channels = positive(node, "stem", e.stem_channels);
    e.stem_stride = positive(node, "stem_stride", e.stem_stride);
    if (e.stem_stride > 2) fail(node["stem_stride"], "stem_stride must be 1 or 2");
    if (node["last"]) {
      e.last_channels = scalar<int>(node["last"], "last");
      if (e.last_channels < 0) fail(node["last"], "'last' must be >= 0");
    }
    if (node["width"]) {
      e.width_multiplier = static_cast<float>(real(node, "width", 1.0));
      if (e.width_multiplier <= 0.0f) fail(node["width"], "'width' must be positive");
    }
    if (node["stages"]) {
      const YAML::Node st = node["stages"];
      if (!st.IsSequence() || st.size() == 0) fail(st, "'stages' must be a non-empty list of [t, c, n, s]");
      e.stages.clear();
      for (const auto& row : st) {
        if (!row.IsSequence() || row.size() != 4) fail(row, "each stage must be [expansion, channels, repeats, stride]");
        zoo::StageSpec s{scalar<int>(row[0], "expansion"), scalar<int>(row[1], "channels"),
                         scalar<int>(row[2], "repeats"), scalar<int>(row[3], "stride")};
        if (s.expansion < 1 || s.channels < 1 || s.repeats < 1) fail(row, "stage values must be >= 1");
        if (s.stride != 1 && s.stride != 2) fail(row, "stage stride must be 1 or 2");
        e.stages.push_back(s);
      }
    }
    return e;
  }

  train::TrainConfig train_config(const YAML::Node& node, train::TrainConfig t) const {
    expect_map(node, "train",
               {"max_epochs", "patience", "batch_size", "learning_rate", "lambda_seg", "lambda_id"});
    t.max_epochs = positive(node, "max_epochs", t.max_epochs);
    t.patience = positive(node, "patience", t.patience);
    t.batch_size = positive(node, "batch_size", t.batch_size);
    t.learning_rate = static_cast<float>(real(node, "learning_rate", t.learning_rate));
    t.weights.seg = static_cast<float>(real(node, "lambda_seg", t.weights.seg));
    t.weights.id = static_cast<float>(real(node, "lambda_id", t.weights.id));
    if (t.weights.seg == 0.0f && t.weights.id == 0.0f) fail(node, "lambda_seg and lambda_id must not both be 0");
    return t;
  }

 private:
  std::string source_;
};

}  // namespace

zoo::NetworkConfig ArchSpec::network(int resolution, int id_classes, int seg_classes) const {
  zoo::NetworkConfig cfg;
  cfg.resolution = resolution;
  cfg.encoder = encoder;
  cfg.head = {head_features, id_classes};
  if (decoder) {
    const zoo::EncoderGraph g = zoo::build_encoder(encoder, resolution);
    const int base = decoder_base_width > 0 ? decoder_base_width : g.graph.output_shape.channels;
    cfg.decoder = zoo::halving_decoder(g, base, seg_classes);
  }
  return cfg;
}

const ArmSpec& ExperimentConfig::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  std::string known;
  for (const auto& a : arms) known += (known.empty() ? "" : ", ") + a.name;
  throw ConfigError("no arm named '" + name + "' (arms: " + known + ")");
}

zoo::EncoderConfig encoder_preset(const std::string& name) {
  if (name == "toy") return zoo::toy_config(false).encoder;
  if (name == "desk-mobilenet") return zoo::desk_mobilenet_config(48, 2, false).encoder;
  if (name == "desk-plain") return zoo::desk_plain_config(48, 2).encoder;
  if (name == "mobilenetv2") return zoo::paper_config(false).encoder;
  throw ConfigError("unknown encoder preset '" + name + "' (toy, desk-mobilenet, desk-plain, mobilenetv2)");
}

ExperimentConfig parse_experiment(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  Reader r(source);
  if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
  r.expect_map(root, "experiment", {"dataset", "train", "arms"});

  ExperimentConfig cfg;
  if (const YAML::Node d = root["dataset"]) {
    r.expect_map(d, "dataset", {"identities", "views", "resolution", "seed", "split_seed"});
    cfg.dataset.identities = r.positive(d, "identities", cfg.dataset.identities);
    cfg.dataset.views = r.positive(d, "views", cfg.dataset.views);
    cfg.dataset.resolution = r.positive(d, "resolution", cfg.dataset.resolution);
    if (cfg.dataset.identities < 2) r.fail(d["identities"], "'identities' must be >= 2");
    if (d["seed"]) cfg.dataset.seed = r.scalar<std::uint64_t>(d["seed"], "seed");
    cfg.dataset.split_seed = d["split_seed"] ? r.scalar<std::uint64_t>(d["split_seed"], "split_seed") : cfg.dataset.seed;
  }
  train::TrainConfig defaults;
  if (const YAML::Node t = root["train"]) defaults = r.train_config(t, defaults);

  const YAML::Node arms = root["arms"];
  if (!arms || !arms.IsSequence() || arms.size() == 0) {
    throw ConfigError(where(source, arms ? arms : root) + "'arms' must be a non-empty list");
  }
  std::set<std::string> names;
  for (const auto& a : arms) {
    r.expect_map(a, "arm", {"name", "encoder", "head_features", "decoder", "train"});
    if (!a["name"]) r.fail(a, "arm without 'name'");
    if (!a["encoder"]) r.fail(a, "arm without 'encoder'");
    ArmSpec arm;
    arm.name = r.scalar<std::string>(a["name"], "name");
    if (arm.name.empty() || arm.name.find(',') != std::string::npos) r.fail(a["name"], "arm names must be non-empty and comma-free");
    if (!names.insert(arm.name).second) r.fail(a["name"], "duplicate arm name '" + arm.name + "'");
    arm.arch.encoder = r.encoder(a["encoder"]);
    arm.arch.head_features = r.positive(a, "head_features", arm.arch.head_features);
    if (const YAML::Node dec = a["decoder"]) {
      if (dec.IsMap()) {
        r.expect_map(dec, "decoder", {"base_width"});
        arm.arch.decoder = true;
        arm.arch.decoder_base_width = r.positive(dec, "base_width", 0);
      } else {
        arm.arch.decoder = r.scalar<bool>(dec, "decoder");
      }
    }
    arm.train = a["train"] ? r.train_config(a["train"], defaults) : defaults;
    cfg.arms.push_back(std::move(arm));
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str(), path);
}

ExperimentConfig default_desk_experiment() {
  ExperimentConfig cfg;
  cfg.dataset = DatasetSpec{20, 40, 48, 1, 1};
  train::TrainConfig t;
  t.max_epochs = 40;
  t.patience = 20;
  t.batch_size = 16;

  ArmSpec id_only;
  id_only.name = "MobileNetV2-ID";
  id_only.arch.encoder = encoder_preset("desk-mobilenet");
  id_only.arch.head_features = 64;
  id_only.train = t;

  ArmSpec joint = id_only;
  joint.name = "Seg-Distilled-ID";
  joint.arch.decoder = true;
  joint.arch.decoder_base_width = 64;

  cfg.arms = {id_only, joint};
  return cfg;
}

}  // namespace segdistill::cli
