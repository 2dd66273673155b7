// SPDX-License-Identifier: Apache-2.0
// End-to-end command tests, run in-process through cli::run.
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using segdistill::cli::kExitDomain;
using segdistill::cli::kExitOk;
using segdistill::cli::kExitUsage;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = segdistill::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("segdistill_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

/// Every file under dir, by relative path, with contents.
std::vector<std::pair<std::string, std::string>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir).string(), slurp(e.path()));
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string toy_config(int max_epochs, int patience = 20) {
  return "dataset:\n"
         "  identities: 5\n"
         "  views: 10\n"
         "  resolution: 32\n"
         "  seed: 3\n"
         "  split_seed: 3\n"
         "train:\n"
         "  max_epochs: " + std::to_string(max_epochs) + "\n"
         "  patience: " + std::to_string(patience) + "\n"
         "  batch_size: 8\n"
         "  learning_rate: 0.003\n"
         "arms:\n"
         "  - name: Toy-ID\n"
         "    encoder: toy\n"
         "    head_features: 16\n"
         "  - name: Toy-Seg\n"
         "    encoder: toy\n"
         "    head_features: 16\n"
         "    decoder:\n"
         "      base_width: 24\n";
}

long field(const std::string& text, const std::string& key) {
  std::smatch m;
  const std::regex re(key + "[:=] ?([0-9]+)");
  REQUIRE_MESSAGE(std::regex_search(text, m, re), key << " missing from: " << text);
  return std::stol(m[1]);
}

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_SUITE("generate") {
  TEST_CASE("10 identities x 30 views at 32 px, reproducible byte for byte") {
    TempDir a("gen_a"), b("gen_b");
    const auto r1 = run({"--seed", "7", "--out", a.path().string(), "generate", "--ids", "10", "--views", "30", "--res",
                         "32"});
    REQUIRE(r1.code == kExitOk);
    CHECK(field(r1.out, "samples") == 300);
    CHECK(field(r1.out, "identities") == 10);
    CHECK(field(r1.out, "train") + field(r1.out, "val") + field(r1.out, "test") == 300);
    CHECK(fs::exists(a.path() / "splits.csv"));

    const auto r2 = run({"--seed", "7", "--out", b.path().string(), "generate", "--ids", "10", "--views", "30", "--res",
                         "32"});
    REQUIRE(r2.code == kExitOk);
    CHECK(r1.out == r2.out);
    CHECK(snapshot(a.path()) == snapshot(b.path()));
  }

  TEST_CASE("bad arguments exit 2") {
    TempDir d("gen_bad");
    CHECK(run({"--out", d.path().string(), "generate", "--ids", "0"}).code == kExitUsage);
    CHECK(run({"--out", d.path().string(), "generate", "--views", "9"}).code == kExitUsage);
    CHECK(run({"generate", "--ids", "3"}).code == kExitUsage);  // no --out
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
  }
}

TEST_SUITE("config") {
  TEST_CASE("schema errors exit 2 and carry the line number") {
    TempDir d("cfg");
    const std::string bad = toy_config(3);
    std::string text = bad;
    text.replace(text.find("max_epochs: 3"), 13, "max_epochs: three");
    write(d.path() / "bad.yaml", text);
    const auto r = run({"--config", d / "bad.yaml", "--out", d / "o", "benchmark"});
    CHECK(r.code == kExitUsage);
    CHECK_MESSAGE(r.err.find("bad.yaml:8") != std::string::npos, r.err);

    text = bad;
    text.replace(text.find("encoder: toy"), 12, "encoder: tyo");
    write(d.path() / "enc.yaml", text);
    const auto r2 = run({"--config", d / "enc.yaml", "--out", d / "o", "benchmark"});
    CHECK(r2.code == kExitUsage);
    CHECK_MESSAGE(r2.err.find("tyo") != std::string::npos, r2.err);

    CHECK(run({"--config", d / "missing.yaml", "--out", d / "o", "benchmark"}).code == kExitUsage);
  }

  TEST_CASE("shipped configs parse") {
    const fs::path dir = SEGDISTILL_CONFIG_DIR;
    for (const char* name : {"desk.yaml", "desk-with-baseline.yaml", "paper-scale.yaml"}) {
      CAPTURE(name);
      CHECK_NOTHROW(segdistill::cli::load_experiment((dir / name).string()));
    }
    const auto paper = segdistill::cli::load_experiment((dir / "paper-scale.yaml").string());
    std::vector<std::string> names;
    for (const auto& a : paper.arms) names.push_back(a.name);
    CHECK(names == std::vector<std::string>{"MobileNetV2-ID", "ResNet-101-ID", "VGG-19-ID", "InceptionV3-ID",
                                            "Seg-Distilled-ID"});
    CHECK(paper.dataset.identities == 67);
    CHECK(paper.dataset.resolution == 128);
  }
}

TEST_SUITE("train / prune / eval") {
  TEST_CASE("joint train, prune and eval agree; id-only has no decoder") {
    TempDir d("pipeline");
    write(d.path() / "toy.yaml", toy_config(4));
    REQUIRE(run({"--seed", "3", "--out", d / "data", "generate", "--ids", "5", "--views", "10", "--res", "32"}).code ==
            kExitOk);

    const auto t1 = run({"--config", d / "toy.yaml", "--seed", "1", "--out", d / "joint", "train", "--data", d / "data"});
    REQUIRE_MESSAGE(t1.code == kExitOk, t1.err);
    const std::string csv = slurp(d.path() / "joint" / "metrics.csv");
    CHECK(count_lines(csv) >= 3);
    CHECK(count_lines(csv) <= 1 + 4 + 1);  // header, at most max_epochs, restored row
    CHECK(csv.find("restored") != std::string::npos);
    const long decoder = field(t1.out, "params_decoder");
    const long train_total = field(t1.out, "params_train");
    CHECK(decoder > 0);

    SUBCASE("rerun reproduces the metrics bit for bit") {
      const auto t2 =
          run({"--config", d / "toy.yaml", "--seed", "1", "--out", d / "joint2", "train", "--data", d / "data"});
      REQUIRE(t2.code == kExitOk);
      CHECK(slurp(d.path() / "joint2" / "metrics.csv") == csv);
      CHECK(slurp(d.path() / "joint2" / "model.sdm") == slurp(d.path() / "joint" / "model.sdm"));
    }

    SUBCASE("id-only arm trains without a decoder") {
      const auto t3 = run({"--config", d / "toy.yaml", "--seed", "1", "--out", d / "idonly", "train", "--data",
                           d / "data", "--arm", "id-only"});
      REQUIRE(t3.code == kExitOk);
      CHECK(field(t3.out, "params_decoder") == 0);
      CHECK(t3.out.find("arm: Toy-ID") != std::string::npos);
      CHECK(run({"--config", d / "toy.yaml", "--out", d / "x", "train", "--data", d / "data", "--arm", "Nope"}).code ==
            kExitUsage);
    }

    SUBCASE("prune removes exactly the decoder; pruning twice is a domain error") {
      const auto p = run({"--out", d / "pruned.sdm", "prune", "--model", d / "joint/model.sdm"});
      REQUIRE_MESSAGE(p.code == kExitOk, p.err);
      CHECK(field(p.out, "inference") == train_total - decoder);
      CHECK(field(p.out, "train") == train_total);

      const auto again = run({"--out", d / "pruned2.sdm", "prune", "--model", d / "pruned.sdm"});
      CHECK(again.code == kExitDomain);
      CHECK(again.err.find("decoder") != std::string::npos);

      const auto ej = run({"eval", "--model", d / "joint/model.sdm", "--data", d / "data", "--split", "test"});
      const auto ep = run({"eval", "--model", d / "pruned.sdm", "--data", d / "data", "--split", "test"});
      REQUIRE(ej.code == kExitOk);
      REQUIRE(ep.code == kExitOk);
      CHECK(ej.out.find("model=joint") != std::string::npos);
      CHECK(ep.out.find("model=inference") != std::string::npos);
      CHECK(ej.out.find("seg_miou=") != std::string::npos);
      CHECK(ep.out.find("seg_") == std::string::npos);
      const auto acc = [](const std::string& s) { return s.substr(s.find("id_accuracy=")).substr(0, 17); };
      CHECK(acc(ej.out) == acc(ep.out));
    }

    SUBCASE("a dataset at the wrong resolution is rejected naming both") {
      REQUIRE(run({"--seed", "3", "--out", d / "data48", "generate", "--ids", "5", "--views", "10", "--res", "48"})
                  .code == kExitOk);
      const auto e = run({"eval", "--model", d / "joint/model.sdm", "--data", d / "data48"});
      CHECK(e.code == kExitDomain);
      CHECK_MESSAGE(e.err.find("32") != std::string::npos, e.err);
      CHECK_MESSAGE(e.err.find("48") != std::string::npos, e.err);
    }

    SUBCASE("missing model and missing dataset are domain errors") {
      CHECK(run({"eval", "--model", d / "nope.sdm", "--data", d / "data"}).code == kExitDomain);
      CHECK(run({"--out", d / "q", "train", "--data", d / "nodata"}).code == kExitDomain);
    }
  }

  TEST_CASE("a longer toy run fits its training split") {
    TempDir d("fit");
    write(d.path() / "toy.yaml", toy_config(40, 40));
    REQUIRE(run({"--seed", "3", "--out", d / "data", "generate", "--ids", "5", "--views", "10", "--res", "32"}).code ==
            kExitOk);
    const auto t = run({"--config", d / "toy.yaml", "--out", d / "m", "train", "--data", d / "data", "--arm", "id-only"});
    REQUIRE_MESSAGE(t.code == kExitOk, t.err);
    const auto e = run({"eval", "--model", d / "m/model.sdm", "--data", d / "data", "--split", "train"});
    REQUIRE(e.code == kExitOk);
    const std::string line = e.out.substr(e.out.find("id_accuracy=") + 12);
    CHECK_MESSAGE(std::stod(line) >= 0.95, e.out);
  }
}

TEST_SUITE("benchmark") {
  TEST_CASE("two seeds over two arms: tables, summary, shared splits per seed") {
    TempDir d("bench");
    write(d.path() / "toy.yaml", toy_config(3));
    const auto r = run({"--config", d / "toy.yaml", "--out", d / "b", "benchmark", "--seeds", "2"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.find("summary over 2 seeds") != std::string::npos);
    CHECK(r.out.find("Toy-ID") != std::string::npos);
    CHECK(r.out.find("+Seg") != std::string::npos);
    CHECK(fs::exists(d.path() / "b" / "summary.csv"));

    // Each seed's arms share one split file; the two seeds differ.
    std::vector<std::string> hashes;
    const std::regex re("splits ([0-9a-f]+)");
    for (auto it = std::sregex_iterator(r.out.begin(), r.out.end(), re); it != std::sregex_iterator(); ++it) {
      hashes.push_back((*it)[1]);
    }
    REQUIRE(hashes.size() == 2);
    CHECK(hashes[0] != hashes[1]);

    const auto again = run({"--config", d / "toy.yaml", "--out", d / "b2", "benchmark", "--seeds", "2"});
    REQUIRE(again.code == kExitOk);
    CHECK(again.out == r.out);
    CHECK(snapshot(d.path() / "b") == snapshot(d.path() / "b2"));
  }

  TEST_CASE("a single arm is a config error") {
    TempDir d("bench1");
    std::string text = toy_config(2);
    text = text.substr(0, text.find("  - name: Toy-Seg"));
    write(d.path() / "one.yaml", text);
    CHECK(run({"--config", d / "one.yaml", "benchmark"}).code == kExitUsage);
  }
}
