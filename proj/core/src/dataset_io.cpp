// SPDX-License-Identifier: Apache-2.0
#include "segdistill/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "segdistill/error.hpp"
#include "segdistill/image_io.hpp"

namespace segdistill::io {

namespace fs = std::filesystem;
using synth::Dataset;
using synth::Sample;
using Kind = FormatError::Kind;

namespace {

constexpr const char* kManifestHeader = "segdistill-dataset";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError(Kind::kIo, "cannot write " + path.string());
}

// Parses "<id>_<view>" into its two integers.
bool parse_key(const std::string& key, int& id, int& view) {
  const auto us = key.find('_');
  if (us == std::string::npos || us == 0 || us + 1 == key.size()) return false;
  try {
    std::size_t p1 = 0, p2 = 0;
    id = std::stoi(key.substr(0, us), &p1);
    view = std::stoi(key.substr(us + 1), &p2);
    return p1 == us && p2 == key.size() - us - 1 && id >= 0 && view >= 0;
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

struct Manifest {
  int version = 0;
  int identities = 0;
  int resolution = 0;
  std::vector<std::string> palette;
  std::size_t samples = 0;
};

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(Kind::kMalformed, "missing manifest: " + path.string());
  Manifest m;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(Kind::kMalformed, path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  int classes = -1;
  bool saw_header = false, saw_samples = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!saw_header) {
      if (key != kManifestHeader || !(ls >> m.version)) fail("expected '" + std::string(kManifestHeader) + " <version>'");
      if (m.version != kDatasetFormatVersion) {
        throw FormatError(Kind::kUnsupportedVersion,
                          path.string() + ": unsupported dataset format version " + std::to_string(m.version));
      }
      saw_header = true;
      continue;
    }
    bool ok = true;
    if (key == "identities") {
      ok = static_cast<bool>(ls >> m.identities) && m.identities >= 1;
    } else if (key == "resolution") {
      ok = static_cast<bool>(ls >> m.resolution) && m.resolution >= 1;
    } else if (key == "classes") {
      ok = static_cast<bool>(ls >> classes) && classes >= 2 && classes <= 256;
    } else if (key == "class") {
      int index = -1;
      std::string name;
      ok = static_cast<bool>(ls >> index >> name) && index == static_cast<int>(m.palette.size());
      if (ok) m.palette.push_back(name);
    } else if (key == "samples") {
      ok = static_cast<bool>(ls >> m.samples);
      saw_samples = ok;
    } else {
      fail("unknown key '" + key + "'");
    }
    if (!ok) fail("bad value for '" + key + "'");
  }
  if (!saw_header) fail("empty manifest");
  if (m.identities < 1 || m.resolution < 1 || !saw_samples) fail("identities, resolution and samples are required");
  if (classes < 0 || static_cast<int>(m.palette.size()) != classes) fail("palette does not list 'classes' names");
  return m;
}

}  // namespace

std::string sample_key(const Sample& s) { return std::to_string(s.identity) + "_" + std::to_string(s.view); }

void save_dataset(const Dataset& dataset, const fs::path& dir, const synth::SplitAssignment* splits) {
  if (splits && splits->tags.size() != dataset.samples.size()) {
    throw ValueError("split assignment does not cover the dataset");
  }
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec || !fs::is_directory(dir / "images")) {
    throw FormatError(Kind::kIo, "cannot create dataset directory " + dir.string());
  }

  std::ostringstream manifest;
  manifest << kManifestHeader << ' ' << kDatasetFormatVersion << '\n'
           << "identities " << dataset.identity_count << '\n'
           << "resolution " << dataset.resolution << '\n'
           << "classes " << dataset.palette.size() << '\n';
  for (std::size_t c = 0; c < dataset.palette.size(); ++c) manifest << "class " << c << ' ' << dataset.palette[c] << '\n';
  manifest << "samples " << dataset.samples.size() << '\n';
  write_text(dir / "manifest", manifest.str());

  std::ostringstream poses;
  poses << "sample,yaw,pitch,illumination,background\n";
  char buf[160];
  for (const Sample& s : dataset.samples) {
    const std::string key = sample_key(s);
    Image8 img{s.resolution, s.resolution, 3, {}};
    img.pixels.resize(s.image.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image[i], 0.0f, 1.0f) * 255.0f));
    }
    write_png(dir / "images" / (key + ".png"), img);
    write_png(dir / "masks" / (key + ".png"), Image8{s.resolution, s.resolution, 1, s.mask});
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%d\n", key.c_str(), s.pose.yaw_deg, s.pose.pitch_deg,
                  s.pose.illumination, s.pose.background);
    poses << buf;
  }
  write_text(dir / "poses.csv", poses.str());

  if (splits) {
    std::ostringstream csv;
    csv << "sample,split\n";
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      csv << sample_key(dataset.samples[i]) << ',' << synth::split_name(splits->tags[i]) << '\n';
    }
    write_text(dir / "splits.csv", csv.str());
  }
}

StoredDataset load_external(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(Kind::kIo, "dataset directory not found: " + dir.string());
  const Manifest m = read_manifest(dir / "manifest");
  const int classes = static_cast<int>(m.palette.size());

  std::vector<std::pair<std::pair<int, int>, fs::path>> images;
  if (!fs::is_directory(dir / "images")) throw FormatError(Kind::kMalformed, "missing images/ in " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir / "images")) {
    if (entry.path().extension() != ".png") continue;
    int id = 0, view = 0;
    if (!parse_key(entry.path().stem().string(), id, view)) {
      throw FormatError(Kind::kMalformed, "image name is not <id>_<view>.png: " + entry.path().string());
    }
    images.push_back({{id, view}, entry.path()});
  }
  std::sort(images.begin(), images.end());
  if (images.size() != m.samples) {
    throw FormatError(Kind::kManifestMismatch, "manifest lists " + std::to_string(m.samples) + " samples but " +
                                                   std::to_string(images.size()) + " images were found");
  }

  StoredDataset out;
  Dataset& ds = out.dataset;
  ds.identity_count = m.identities;
  ds.resolution = m.resolution;
  ds.palette = m.palette;
  ds.samples.reserve(images.size());
  std::map<std::string, std::size_t> index_of;
  const int r = m.resolution;
  for (const auto& [key, image_path] : images) {
    const auto [id, view] = key;
    if (id >= m.identities) {
      throw FormatError(Kind::kManifestMismatch, image_path.string() + ": identity " + std::to_string(id) +
                                                     " outside manifest identity count " +
                                                     std::to_string(m.identities));
    }
    const fs::path mask_path = dir / "masks" / image_path.filename();
    if (!fs::is_regular_file(mask_path)) {
      throw FormatError(Kind::kMissingMask, "no mask for " + image_path.string() + " (expected " +
                                                mask_path.string() + ")");
    }
    const Image8 img = read_png(image_path);
    const Image8 mask = read_png(mask_path);
    if (img.width != r || img.height != r || mask.width != r || mask.height != r) {
      throw FormatError(Kind::kManifestMismatch, image_path.string() + ": size does not match manifest resolution " +
                                                     std::to_string(r));
    }
    if (img.channels != 3) throw FormatError(Kind::kMalformed, image_path.string() + ": expected RGB");
    if (mask.channels != 1) throw FormatError(Kind::kMalformed, mask_path.string() + ": expected single channel");
    for (std::uint8_t c : mask.pixels) {
      if (c >= classes) {
        throw FormatError(Kind::kUnknownClass, mask_path.string() + ": class index " + std::to_string(c) +
                                                   " not in palette of " + std::to_string(classes));
      }
    }
    Sample s;
    s.resolution = r;
    s.identity = id;
    s.view = view;
    s.image = Tensor(Shape{r, r, 3});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    s.mask = mask.pixels;
    index_of[image_path.stem().string()] = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }

  if (std::ifstream poses(dir / "poses.csv"); poses) {
    std::string line;
    std::getline(poses, line);
    while (std::getline(poses, line)) {
      const auto cells = split_csv(line);
      const auto it = cells.size() == 5 ? index_of.find(cells[0]) : index_of.end();
      if (it == index_of.end()) throw FormatError(Kind::kMalformed, "poses.csv: bad row '" + line + "'");
      try {
        auto& p = ds.samples[it->second].pose;
        p.yaw_deg = std::stof(cells[1]);
        p.pitch_deg = std::stof(cells[2]);
        p.illumination = std::stof(cells[3]);
        p.background = std::stoi(cells[4]);
      } catch (const std::exception&) {
        throw FormatError(Kind::kMalformed, "poses.csv: bad row '" + line + "'");
      }
    }
  }

  if (std::ifstream csv(dir / "splits.csv"); csv) {
    synth::SplitAssignment a;
    a.tags.assign(ds.samples.size(), synth::Split::kTrain);
    std::vector<bool> seen(ds.samples.size(), false);
    std::string line;
    std::getline(csv, line);
    if (line != "sample,split") throw FormatError(Kind::kMalformed, "splits.csv: header must be 'sample,split'");
    while (std::getline(csv, line)) {
      const auto cells = split_csv(line);
      const auto it = cells.size() == 2 ? index_of.find(cells[0]) : index_of.end();
      if (it == index_of.end()) throw FormatError(Kind::kMalformed, "splits.csv: bad row '" + line + "'");
      try {
        a.tags[it->second] = synth::parse_split(cells[1]);
      } catch (const ValueError&) {
        throw FormatError(Kind::kMalformed, "splits.csv: bad split in '" + line + "'");
      }
      seen[it->second] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw FormatError(Kind::kManifestMismatch, "splits.csv does not assign every sample");
    }
    out.splits = std::move(a);
  }
  return out;
}

}  // namespace segdistill::io
