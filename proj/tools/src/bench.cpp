// SPDX-License-Identifier: Apache-2.0
#include "bench.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "segdistill/dataset_io.hpp"
#include "segdistill/error.hpp"
#include "segdistill/model_io.hpp"

namespace segdistill::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      line += c + 1 == rows[r].size() ? rows[r][c] : pad(rows[r][c], width[c] + 3);
    }
    os << line << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 == width.size() ? 0 : 3);
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace

std::string splits_csv(const synth::Dataset& dataset, const synth::SplitAssignment& splits) {
  std::string out = "sample,split\n";
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    out += io::sample_key(dataset.samples[i]) + "," + synth::split_name(splits.tags.at(i)) + "\n";
  }
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_count(std::size_t n) {
  char buf[32];
  if (n >= 1000000) {
    std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(n) / 1e6);
  } else if (n >= 1000) {
    std::snprintf(buf, sizeof buf, "%.1fK", static_cast<double>(n) / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%zu", n);
  }
  return buf;
}

std::string report_text(const ArmResult& r) {
  std::ostringstream os;
  const auto& rep = r.report;
  os << "arm: " << r.name << '\n'
     << "kind: " << (r.joint ? "joint" : "id-only") << '\n'
     << "epochs: " << rep.epochs.size() << '\n'
     << "stop_reason: " << train::stop_reason_name(rep.reason) << '\n'
     << "best_epoch: " << rep.best_epoch << '\n'
     << "best_val_loss: " << g9(rep.best_val_loss) << '\n'
     << "restored_val_loss: " << g9(rep.restored.loss) << '\n'
     << "restored_val_id_accuracy: " << g9(rep.restored.id_accuracy) << '\n';
  if (rep.restored.seg) {
    os << "restored_val_seg_pixel_accuracy: " << g9(rep.restored.seg->pixel_accuracy) << '\n'
       << "restored_val_seg_miou: " << g9(rep.restored.seg->mean_iou) << '\n';
  }
  os << "params_encoder: " << r.counts.encoder << '\n'
     << "params_decoder: " << r.counts.decoder << '\n'
     << "params_head: " << r.counts.head << '\n'
     << "params_inference: " << r.params_inference() << '\n'
     << "params_train: " << r.counts.total() << '\n'
     << "train_id_accuracy: " << g9(r.train_accuracy) << '\n'
     << "test_id_accuracy: " << g9(r.test_accuracy) << '\n';
  if (!rep.diagnostic.empty()) os << "diagnostic: " << rep.diagnostic << '\n';
  return os.str();
}

ArmResult run_arm(const ArmSpec& arm, const synth::Dataset& dataset, const synth::SplitAssignment& splits,
                  std::uint64_t seed, const fs::path* out_dir, bool timing) {
  const zoo::NetworkConfig net_cfg =
      arm.arch.network(dataset.resolution, dataset.identity_count, dataset.class_count());
  zoo::Network net = zoo::build_network(net_cfg, seed);
  train::TrainConfig tc = arm.train;
  tc.seed = seed;
  tc.timing = timing;

  const auto tr = train::view(dataset, splits, synth::Split::kTrain);
  const auto va = train::view(dataset, splits, synth::Split::kVal);
  const auto te = train::view(dataset, splits, synth::Split::kTest);

  ArmResult r;
  r.name = arm.name;
  r.joint = arm.joint();
  r.counts = net.count_parameters();
  r.report = r.joint ? train::train_joint(net, tr, va, tc) : train::train_id_only(net, tr, va, tc);
  if (out_dir && r.joint) zoo::save_model(net, *out_dir / "joint.sdm");
  zoo::Network inference = r.joint ? zoo::prune_teacher(net) : std::move(net);
  r.test_accuracy = train::evaluate_id(inference, te);
  r.train_accuracy = train::evaluate_id(inference, tr);
  r.report.test = train::evaluate(inference, te, tc.weights);

  if (out_dir) {
    zoo::save_model(inference, *out_dir / "model.sdm");
    std::ostringstream csv;
    train::write_metrics_csv(csv, r.report);
    write_file(*out_dir / "metrics.csv", csv.str());
    write_file(*out_dir / "report.txt", report_text(r));
  }
  return r;
}

std::string results_csv(const BenchmarkRun& run) {
  std::string out = "network,params_inference,params_train,test_accuracy\n";
  for (const ArmResult& a : run.arms) {
    const auto train = a.params_train();
    out += a.name + "," + std::to_string(a.params_inference()) + "," + (train ? std::to_string(*train) : "") + "," +
           fmt3(a.test_accuracy) + "\n";
  }
  return out;
}

std::string results_text(const BenchmarkRun& run) {
  std::vector<std::vector<std::string>> rows{{"Network", "Parameters", "Test Accuracy"}};
  for (const ArmResult& a : run.arms) {
    std::string params = format_count(a.params_inference());
    if (const auto train = a.params_train()) params += " (" + format_count(*train) + " +Seg)";
    rows.push_back({a.name, params, pct(a.test_accuracy) + " (" + fmt3(a.test_accuracy) + ")"});
  }
  return render_table(rows);
}

namespace {

struct Aggregate {
  double sum = 0.0, min = 1.0, max = 0.0;
  int n = 0;
};

std::vector<std::pair<std::string, Aggregate>> aggregate(const std::vector<BenchmarkRun>& runs) {
  std::vector<std::pair<std::string, Aggregate>> out;
  for (const auto& run : runs) {
    for (const auto& a : run.arms) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == a.name; });
      if (it == out.end()) it = out.insert(out.end(), {a.name, Aggregate{}});
      it->second.sum += a.test_accuracy;
      it->second.min = std::min(it->second.min, a.test_accuracy);
      it->second.max = std::max(it->second.max, a.test_accuracy);
      ++it->second.n;
    }
  }
  return out;
}

}  // namespace

std::string summary_csv(const std::vector<BenchmarkRun>& runs) {
  std::string out = "network,runs,mean_test_accuracy,min_test_accuracy,max_test_accuracy\n";
  for (const auto& [name, agg] : aggregate(runs)) {
    out += name + "," + std::to_string(agg.n) + "," + fmt3(agg.sum / agg.n) + "," + fmt3(agg.min) + "," +
           fmt3(agg.max) + "\n";
  }
  return out;
}

std::string summary_text(const std::vector<BenchmarkRun>& runs) {
  std::vector<std::vector<std::string>> rows{{"Network", "Runs", "Mean", "Min", "Max"}};
  for (const auto& [name, agg] : aggregate(runs)) {
    rows.push_back({name, std::to_string(agg.n), pct(agg.sum / agg.n), pct(agg.min), pct(agg.max)});
  }
  return render_table(rows);
}

std::vector<BenchmarkRun> run_benchmark(const ExperimentConfig& cfg, const BenchmarkOptions& opts) {
  if (cfg.arms.size() < 2) throw ConfigError("a benchmark needs at least two arms");
  if (opts.seeds < 1) throw ConfigError("--seeds must be >= 1");
  if (opts.jobs < 1) throw ConfigError("--jobs must be >= 1");

  struct Prepared {
    synth::Dataset dataset;
    synth::SplitAssignment splits;
  };
  std::vector<Prepared> data(opts.seeds);
  std::vector<BenchmarkRun> runs(opts.seeds);
  std::optional<io::StoredDataset> stored;
  if (opts.data) stored = io::load_external(*opts.data);
  for (int i = 0; i < opts.seeds; ++i) {
    BenchmarkRun& run = runs[i];
    run.seed = opts.seed + static_cast<std::uint64_t>(i);
    if (opts.data) {
      data[i].dataset = stored->dataset;
      data[i].splits = stored->splits ? *stored->splits : synth::split(data[i].dataset, cfg.dataset.split_seed);
      run.dataset_seed = cfg.dataset.seed;
    } else {
      run.dataset_seed = cfg.dataset.seed + static_cast<std::uint64_t>(i);
      data[i].dataset = synth::generate_dataset(cfg.dataset.identities, cfg.dataset.views, cfg.dataset.resolution,
                                                run.dataset_seed);
      data[i].splits = synth::split(data[i].dataset, cfg.dataset.split_seed + static_cast<std::uint64_t>(i));
    }
    const std::string csv = splits_csv(data[i].dataset, data[i].splits);
    run.split_hash = fnv1a_hex(csv);
    run.arms.resize(cfg.arms.size());
    if (opts.out) {
      const fs::path dir = *opts.out / ("seed_" + std::to_string(run.seed));
      fs::create_directories(dir);
      write_file(dir / "splits.csv", csv);
    }
  }

  // Each task is one (run, arm) pair; results land in fixed slots so the
  // completion order never matters.
  const std::size_t tasks = runs.size() * cfg.arms.size();
  std::vector<std::exception_ptr> errors(tasks);
  std::vector<char> done(tasks, 0);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t i = t / cfg.arms.size(), k = t % cfg.arms.size();
      const ArmSpec& arm = cfg.arms[k];
      try {
        std::optional<fs::path> dir;
        if (opts.out) {
          dir = *opts.out / ("seed_" + std::to_string(runs[i].seed)) / arm.name;
          fs::create_directories(*dir);
        }
        runs[i].arms[k] = run_arm(arm, data[i].dataset, data[i].splits, runs[i].seed, dir ? &*dir : nullptr,
                                  opts.timing);
        done[t] = 1;
        if (opts.log) {
          std::lock_guard lock(log_mutex);
          *opts.log << "seed " << runs[i].seed << "  " << arm.name << "  test_accuracy=" << fmt3(runs[i].arms[k].test_accuracy)
                    << "  train_accuracy=" << fmt3(runs[i].arms[k].train_accuracy) << "  epochs="
                    << runs[i].arms[k].report.epochs.size() << '\n';
          opts.log->flush();
        }
      } catch (...) {
        errors[t] = std::current_exception();
        next = tasks;  // stop handing out work
      }
    }
  };
  const int threads = std::min<int>(opts.jobs, static_cast<int>(tasks));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < threads; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t t = 0; t < tasks; ++t) {
    if (!errors[t]) continue;
    const std::size_t i = t / cfg.arms.size();
    BenchmarkRun partial = runs[i];
    partial.arms.clear();
    for (std::size_t k = 0; k < cfg.arms.size(); ++k) {
      if (done[i * cfg.arms.size() + k]) partial.arms.push_back(runs[i].arms[k]);
    }
    if (opts.out) {
      const fs::path dir = *opts.out / ("seed_" + std::to_string(partial.seed));
      write_file(dir / "results.partial.csv", results_csv(partial));
    }
    std::string what;
    try {
      std::rethrow_exception(errors[t]);
    } catch (const std::exception& e) {
      what = e.what();
    }
    throw ArmFailure(cfg.arms[t % cfg.arms.size()].name, what, std::move(partial));
  }

  if (opts.out) {
    for (const auto& run : runs) {
      const fs::path dir = *opts.out / ("seed_" + std::to_string(run.seed));
      write_file(dir / "results.csv", results_csv(run));
      write_file(dir / "results.txt", results_text(run));
    }
    if (runs.size() > 1) {
      write_file(*opts.out / "summary.csv", summary_csv(runs));
      write_file(*opts.out / "summary.txt", summary_text(runs));
    }
  }
  return runs;
}

}  // namespace segdistill::cli
