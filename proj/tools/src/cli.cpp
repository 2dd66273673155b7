// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "bench.hpp"
#include "experiment.hpp"
#include "segdistill/dataset_io.hpp"
#include "segdistill/error.hpp"
#include "segdistill/model_io.hpp"

namespace segdistill::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

ExperimentConfig experiment(const Globals& g) {
  return g.config.empty() ? default_desk_experiment() : load_experiment(g.config);
}

const std::string& require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw UsageError(std::string(command) + " needs --out");
  return g.out;
}

/// "joint" and "id-only" pick the Seg-Distilled arm and its same-encoder
/// ID-only counterpart; anything else must be an arm name.
const ArmSpec& resolve_arm(const ExperimentConfig& cfg, const std::string& name) {
  auto joint = std::find_if(cfg.arms.begin(), cfg.arms.end(), [](const ArmSpec& a) { return a.joint(); });
  if (name == "joint") {
    if (joint == cfg.arms.end()) throw ConfigError("config has no joint arm");
    return *joint;
  }
  if (name == "id-only") {
    for (const ArmSpec& a : cfg.arms) {
      if (!a.joint() && (joint == cfg.arms.end() || a.arch.encoder == joint->arch.encoder)) return a;
    }
    for (const ArmSpec& a : cfg.arms) {
      if (!a.joint()) return a;
    }
    throw ConfigError("config has no ID-only arm");
  }
  return cfg.arm(name);
}

synth::SplitAssignment splits_of(const io::StoredDataset& stored, std::uint64_t seed) {
  return stored.splits ? *stored.splits : synth::split(stored.dataset, seed);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string f3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Segmentation-distilled identification: data generation, training, pruning, benchmarking",
               "segdistill"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for training (and data generation)");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--config", g.config, "Experiment config (YAML)");

  // generate
  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset with splits");
  int ids = 0, views = 0, res = 0;
  std::optional<std::uint64_t> split_seed;
  gen->add_option("--ids", ids, "Number of identities")->check(CLI::PositiveNumber);
  gen->add_option("--views", views, "Views per identity")->check(CLI::Range(10, 100000));
  gen->add_option("--res", res, "Image resolution")->check(CLI::Range(16, 4096));
  gen->add_option("--split-seed", split_seed, "Split seed (default: --seed)");

  // train
  auto* trn = app.add_subcommand("train", "Train one arm of the experiment config");
  std::string data_dir, arm_name = "joint";
  bool timing = false;
  trn->add_option("--data", data_dir, "Dataset directory")->required();
  trn->add_option("--arm", arm_name, "Arm name, or 'joint' / 'id-only'");
  trn->add_flag("--timing", timing, "Record wall-clock seconds in metrics.csv");

  // prune
  auto* prn = app.add_subcommand("prune", "Remove the segmentation decoder from a joint model");
  std::string model_path;
  prn->add_option("--model", model_path, "Joint model file")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a model on a dataset split");
  std::string split_name = "test";
  evl->add_option("--model", model_path, "Model file")->required();
  evl->add_option("--data", data_dir, "Dataset directory")->required();
  evl->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Train every arm and tabulate test accuracy");
  int seeds = 1, jobs = 1;
  std::string bench_data;
  bm->add_option("--seeds", seeds, "Number of consecutive seeds to sweep")->check(CLI::PositiveNumber);
  bm->add_option("--jobs", jobs, "Arms trained in parallel")->check(CLI::PositiveNumber);
  bm->add_option("--data", bench_data, "Use this dataset instead of generating one");
  bm->add_flag("--timing", timing, "Record wall-clock seconds in metrics.csv");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      DatasetSpec spec = g.config.empty() ? DatasetSpec{} : load_experiment(g.config).dataset;
      if (gen->count("--ids")) spec.identities = ids;
      if (gen->count("--views")) spec.views = views;
      if (gen->count("--res")) spec.resolution = res;
      if (app.count("--seed") || g.config.empty()) spec.seed = g.seed;
      spec.split_seed = split_seed ? *split_seed : spec.seed;
      const std::string& dir = require_out(g, "generate");
      const synth::Dataset ds = synth::generate_dataset(spec.identities, spec.views, spec.resolution, spec.seed);
      const synth::SplitAssignment sp = synth::split(ds, spec.split_seed);
      io::save_dataset(ds, dir, &sp);
      const auto t = sp.totals();
      out << "samples=" << ds.samples.size() << " identities=" << ds.identity_count << " resolution=" << ds.resolution
          << " train=" << t.train << " val=" << t.val << " test=" << t.test << '\n';
      return kExitOk;
    }

    if (*trn) {
      const ExperimentConfig cfg = experiment(g);
      const ArmSpec& arm = resolve_arm(cfg, arm_name);
      const fs::path dir = require_out(g, "train");
      const io::StoredDataset stored = io::load_external(data_dir);
      const synth::SplitAssignment sp = splits_of(stored, g.seed);
      const zoo::NetworkConfig net_cfg =
          arm.arch.network(stored.dataset.resolution, stored.dataset.identity_count, stored.dataset.class_count());
      zoo::Network net = zoo::build_network(net_cfg, g.seed);
      train::TrainConfig tc = arm.train;
      tc.seed = g.seed;
      tc.timing = timing;
      const auto tr = train::view(stored.dataset, sp, synth::Split::kTrain);
      const auto va = train::view(stored.dataset, sp, synth::Split::kVal);
      const auto te = train::view(stored.dataset, sp, synth::Split::kTest);
      ArmResult r;
      r.name = arm.name;
      r.joint = arm.joint();
      r.counts = net.count_parameters();
      r.report = r.joint ? train::train_joint(net, tr, va, tc) : train::train_id_only(net, tr, va, tc);
      r.report.test = train::evaluate(net, te, tc.weights);
      r.test_accuracy = r.report.test->id_accuracy;
      r.train_accuracy = train::evaluate_id(net, tr);
      fs::create_directories(dir);
      zoo::save_model(net, dir / "model.sdm");
      std::ostringstream csv;
      train::write_metrics_csv(csv, r.report);
      write_file(dir / "metrics.csv", csv.str());
      write_file(dir / "report.txt", report_text(r));
      out << report_text(r);
      return kExitOk;
    }

    if (*prn) {
      const std::string& dest = require_out(g, "prune");
      const zoo::Network net = zoo::load_model(model_path);
      if (!net.has_decoder()) {
        err << "error: " << model_path << " has no segmentation decoder to remove (already pruned?)\n";
        return kExitDomain;
      }
      const zoo::Network pruned = zoo::prune_teacher(net);
      zoo::save_model(pruned, dest);
      out << "inference=" << pruned.count_parameters().total() << " (train=" << net.count_parameters().total()
          << " +Seg)\n";
      return kExitOk;
    }

    if (*evl) {
      zoo::Network net = zoo::load_model(model_path);
      const io::StoredDataset stored = io::load_external(data_dir);
      const synth::Dataset& ds = stored.dataset;
      if (ds.resolution != net.resolution()) {
        throw ShapeError("model expects resolution " + std::to_string(net.resolution()) + " but dataset " +
                         data_dir + " has resolution " + std::to_string(ds.resolution));
      }
      if (ds.identity_count != net.id_classes()) {
        throw ShapeError("model has " + std::to_string(net.id_classes()) + " identity classes but dataset has " +
                         std::to_string(ds.identity_count));
      }
      if (net.has_decoder() && ds.class_count() != net.seg_classes()) {
        throw ShapeError("model segments " + std::to_string(net.seg_classes()) + " classes but dataset palette has " +
                         std::to_string(ds.class_count()));
      }
      const auto sp = splits_of(stored, g.seed);
      const auto v = train::view(ds, sp, synth::parse_split(split_name));
      const train::EvalMetrics m = train::evaluate(net, v);
      out << "model=" << (net.has_decoder() ? "joint" : "inference") << " split=" << split_name
          << " samples=" << m.samples << '\n'
          << "id_accuracy=" << f3(m.id_accuracy) << '\n';
      if (m.seg) {
        out << "seg_pixel_accuracy=" << f3(m.seg->pixel_accuracy) << '\n' << "seg_miou=" << f3(m.seg->mean_iou) << '\n';
      }
      out << "loss=" << g9(m.loss) << '\n';
      return kExitOk;
    }

    if (*bm) {
      const ExperimentConfig cfg = experiment(g);
      BenchmarkOptions opts;
      opts.seed = g.seed;
      opts.seeds = seeds;
      opts.jobs = jobs;
      opts.timing = timing;
      opts.log = &err;
      if (!g.out.empty()) opts.out = fs::path(g.out);
      if (!bench_data.empty()) opts.data = fs::path(bench_data);
      const std::vector<BenchmarkRun> runs = run_benchmark(cfg, opts);
      for (const auto& r : runs) {
        out << "seed " << r.seed << " (dataset seed " << r.dataset_seed << ", splits " << r.split_hash << ")\n"
            << results_text(r) << '\n';
      }
      if (runs.size() > 1) out << "summary over " << runs.size() << " seeds\n" << summary_text(runs);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArmFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace segdistill::cli
