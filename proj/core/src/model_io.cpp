// SPDX-License-Identifier: Apache-2.0
#include "segdistill/model_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

#include "segdistill/error.hpp"

namespace segdistill::zoo {

namespace {

using Kind = FormatError::Kind;

const char* encoder_kind_name(EncoderKind k) {
  return k == EncoderKind::kPlain ? "plain" : "inverted_residual";
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large models.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw FormatError(Kind::kTruncated, "model file ends inside a record");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

std::unordered_map<std::string, std::string> key_values(std::istringstream& line, int line_no) {
  std::unordered_map<std::string, std::string> kv;
  std::string tok;
  while (line >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) {
      throw FormatError(Kind::kMalformed, "topology line " + std::to_string(line_no) + ": expected key=value, got '" +
                                              tok + "'");
    }
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

int int_field(const std::unordered_map<std::string, std::string>& kv, const std::string& key, int line_no) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    throw FormatError(Kind::kMalformed, "topology line " + std::to_string(line_no) + ": missing " + key);
  }
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError(Kind::kMalformed, "topology line " + std::to_string(line_no) + ": bad integer for " + key);
  }
}

}  // namespace

std::string topology_text(const NetworkConfig& cfg) {
  std::ostringstream os;
  const EncoderConfig& e = cfg.encoder;
  os << "segdistill-topology 1\n";
  os << "resolution " << cfg.resolution << "\n";
  os << "encoder " << encoder_kind_name(e.kind) << " input_channels=" << e.input_channels
     << " stem=" << e.stem_channels << " stem_stride=" << e.stem_stride << " last=" << e.last_channels
     << " width=" << format_float(e.width_multiplier) << "\n";
  for (const auto& s : e.stages) {
    os << "stage " << s.expansion << " " << s.channels << " " << s.repeats << " " << s.stride << "\n";
  }
  if (cfg.decoder) {
    os << "decoder classes=" << cfg.decoder->classes << " kernel=" << cfg.decoder->upsample_kernel << "\n";
    for (const auto& s : cfg.decoder->stages) os << "upsample " << s.channels << " " << s.skip << "\n";
  }
  os << "head features=" << cfg.head.features << " classes=" << cfg.head.classes << "\n";
  os << "end\n";
  return os.str();
}

NetworkConfig parse_topology(const std::string& text) {
  NetworkConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool header = false, ended = false, have_encoder = false, have_head = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (raw.empty()) continue;
    std::istringstream line(raw);
    std::string key;
    line >> key;
    auto bad = [&](const std::string& why) {
      return FormatError(Kind::kMalformed, "topology line " + std::to_string(line_no) + ": " + why);
    };
    if (ended) throw bad("content after end");
    if (!header) {
      int version = 0;
      if (key != "segdistill-topology" || !(line >> version)) throw bad("missing topology header");
      if (version != 1) throw bad("unsupported topology version " + std::to_string(version));
      header = true;
    } else if (key == "resolution") {
      if (!(line >> cfg.resolution)) throw bad("bad resolution");
    } else if (key == "encoder") {
      std::string kind;
      line >> kind;
      if (kind == "plain") {
        cfg.encoder.kind = EncoderKind::kPlain;
      } else if (kind == "inverted_residual") {
        cfg.encoder.kind = EncoderKind::kInvertedResidual;
      } else {
        throw bad("unknown encoder kind '" + kind + "'");
      }
      const auto kv = key_values(line, line_no);
      cfg.encoder.input_channels = int_field(kv, "input_channels", line_no);
      cfg.encoder.stem_channels = int_field(kv, "stem", line_no);
      cfg.encoder.stem_stride = int_field(kv, "stem_stride", line_no);
      cfg.encoder.last_channels = int_field(kv, "last", line_no);
      auto w = kv.find("width");
      if (w == kv.end()) throw bad("missing width");
      try {
        cfg.encoder.width_multiplier = std::stof(w->second);
      } catch (const std::exception&) {
        throw bad("bad width");
      }
      have_encoder = true;
    } else if (key == "stage") {
      StageSpec s;
      if (!(line >> s.expansion >> s.channels >> s.repeats >> s.stride)) throw bad("bad stage");
      cfg.encoder.stages.push_back(s);
    } else if (key == "decoder") {
      const auto kv = key_values(line, line_no);
      DecoderConfig d;
      d.classes = int_field(kv, "classes", line_no);
      d.upsample_kernel = int_field(kv, "kernel", line_no);
      cfg.decoder = d;
    } else if (key == "upsample") {
      if (!cfg.decoder) throw bad("upsample before decoder");
      DecoderStage s;
      if (!(line >> s.channels >> s.skip)) throw bad("bad upsample stage");
      cfg.decoder->stages.push_back(s);
    } else if (key == "head") {
      const auto kv = key_values(line, line_no);
      cfg.head.features = int_field(kv, "features", line_no);
      cfg.head.classes = int_field(kv, "classes", line_no);
      have_head = true;
    } else if (key == "end") {
      ended = true;
    } else {
      throw bad("unknown record '" + key + "'");
    }
  }
  if (!header || !ended || !have_encoder || !have_head) {
    throw FormatError(Kind::kMalformed, "topology is incomplete");
  }
  return cfg;
}

std::vector<std::uint8_t> serialize_model(const Network& net) {
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  out.push_back(kModelFormatVersion);
  const std::string topo = topology_text(net.config());
  put_u32(out, static_cast<std::uint32_t>(topo.size()));
  out.insert(out.end(), topo.begin(), topo.end());
  put_u32(out, static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.value.size() * sizeof(float)));
    for (float v : p.value.data()) put_f32(out, v);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Network deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kModelMagic + 1) throw FormatError(Kind::kTruncated, "model file too short");
  if (!std::equal(std::begin(kModelMagic), std::end(kModelMagic), bytes.begin())) {
    throw FormatError(Kind::kBadMagic, "not a segdistill model (bad magic)");
  }
  const std::uint8_t version = bytes[sizeof kModelMagic];
  if (version != kModelFormatVersion) {
    throw FormatError(Kind::kUnsupportedVersion, "unsupported model format version " + std::to_string(version) +
                                                     " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  if (bytes.size() < sizeof kModelMagic + 1 + 4) throw FormatError(Kind::kTruncated, "model file too short");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes, body, bytes.size());
  if (tail.u32() != crc_of(bytes.data(), body)) {
    throw FormatError(Kind::kChecksumMismatch, "model checksum mismatch (file truncated or corrupted)");
  }

  Reader r(bytes, sizeof kModelMagic + 1, body);
  const std::uint32_t topo_len = r.u32();
  NetworkConfig cfg = parse_topology(r.str(topo_len));
  Network net;
  try {
    net = build_network(cfg, 0);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(Kind::kMalformed, std::string("model topology is invalid: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  if (count != net.parameters().size()) {
    throw FormatError(Kind::kMalformed, "model holds " + std::to_string(count) + " parameter blobs, topology needs " +
                                            std::to_string(net.parameters().size()));
  }
  std::vector<bool> seen(net.parameters().size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t nbytes = r.u32();
    Parameter* p = nullptr;
    try {
      p = &net.parameter(name);
    } catch (const ValueError&) {
      throw FormatError(Kind::kMalformed, "model holds unknown parameter " + name);
    }
    const auto idx = static_cast<std::size_t>(p - net.parameters().data());
    if (seen[idx]) throw FormatError(Kind::kMalformed, "duplicate parameter blob " + name);
    seen[idx] = true;
    if (nbytes != p->value.size() * sizeof(float)) {
      throw FormatError(Kind::kMalformed, "parameter " + name + " has " + std::to_string(nbytes) +
                                              " bytes, expected " + std::to_string(p->value.size() * sizeof(float)));
    }
    for (float& v : p->value.data()) v = r.f32();
  }
  if (!r.done()) throw FormatError(Kind::kMalformed, "trailing bytes after parameter blobs");
  return net;
}

void save_model(const Network& net, const std::filesystem::path& path) {
  const auto bytes = serialize_model(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Kind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(Kind::kIo, "failed writing " + path.string());
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace segdistill::zoo
