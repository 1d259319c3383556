#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/model.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/vocab.hpp"
#include "cxmx/vq.hpp"

namespace cxmx {

using json = nlohmann::json;

// Little-endian byte sink.
class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    using Un = std::make_unsigned_t<U>;
    auto u = static_cast<Un>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>(u & 0xffu));
      if constexpr (sizeof(U) > 1) u = static_cast<Un>(u >> 8);
    }
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  template <typename U>
  U get() {
    static_assert(std::is_integral_v<U>);
    need(sizeof(U));
    std::make_unsigned_t<U> u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      u = static_cast<std::make_unsigned_t<U>>(u | (static_cast<std::make_unsigned_t<U>>(data_[pos_ + i]) << (8 * i)));
    }
    pos_ += sizeof(U);
    return static_cast<U>(u);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void seek(std::size_t p) {
    if (p > data_.size()) throw FormatError(what_ + ": offset beyond end of data");
    pos_ = p;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated");
  }
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Shard files
//
//   "CXMX" | version u16 | count u32 | text_size u32 | image_size u32
//   per sample:
//     image token count u16 | ids u32[count]
//     report length u16 | report bytes
//     label bits u16
//     finding count u8 | (shape u8, intensity u8, quadrant u8)[count]
//
// All integers little-endian.

inline constexpr std::uint16_t kShardVersion = 1;

struct ShardRecord {
  std::vector<TokenId> image_tokens;  // empty before tokenization
  std::string report;
  std::uint16_t labels = 0;
  std::vector<Finding> findings;  // sorted

  friend bool operator==(const ShardRecord&, const ShardRecord&) = default;
};

struct Shard {
  std::uint32_t text_size = 64;
  std::uint32_t image_size = 256;
  std::vector<ShardRecord> records;

  friend bool operator==(const Shard&, const Shard&) = default;
};

inline ShardRecord shard_record(const SyntheticSample& s, std::vector<TokenId> image_tokens = {}) {
  return {std::move(image_tokens), s.report, s.labels, std::vector<Finding>(s.findings.begin(), s.findings.end())};
}

inline std::vector<std::uint8_t> serialize_shard(const Shard& shard) {
  const VocabLayout vocab{static_cast<int>(shard.text_size), static_cast<int>(shard.image_size)};
  ByteWriter w;
  w.put_bytes("CXMX");
  w.put(kShardVersion);
  require(shard.records.size() <= 0xffffffffu, "shard: too many samples");
  w.put(static_cast<std::uint32_t>(shard.records.size()));
  w.put(shard.text_size);
  w.put(shard.image_size);
  for (const auto& r : shard.records) {
    require(r.image_tokens.size() <= 0xffffu, "shard: image token count exceeds u16");
    require(r.report.size() <= 0xffffu, "shard: report exceeds u16 bytes");
    require(r.findings.size() <= 0xffu, "shard: too many findings");
    w.put(static_cast<std::uint16_t>(r.image_tokens.size()));
    for (TokenId id : r.image_tokens) {
      require(vocab.valid(id), "shard: token id out of vocabulary");
      w.put(static_cast<std::uint32_t>(id));
    }
    w.put(static_cast<std::uint16_t>(r.report.size()));
    w.put_bytes(r.report);
    w.put(r.labels);
    w.put(static_cast<std::uint8_t>(r.findings.size()));
    for (const auto& f : r.findings) {
      w.put(static_cast<std::uint8_t>(f.shape));
      w.put(static_cast<std::uint8_t>(f.intensity));
      w.put(static_cast<std::uint8_t>(f.quadrant));
    }
  }
  return w.bytes();
}

inline Shard parse_shard(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "shard");
  if (r.get_bytes(4) != "CXMX") throw FormatError("shard: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kShardVersion) {
    throw FormatError("shard: unsupported version " + std::to_string(version));
  }
  Shard s;
  const auto count = r.get<std::uint32_t>();
  s.text_size = r.get<std::uint32_t>();
  s.image_size = r.get<std::uint32_t>();
  const VocabLayout vocab{static_cast<int>(s.text_size), static_cast<int>(s.image_size)};
  s.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ShardRecord rec;
    const auto n = r.get<std::uint16_t>();
    rec.image_tokens.resize(n);
    for (auto& id : rec.image_tokens) {
      const auto v = r.get<std::uint32_t>();
      if (v >= static_cast<std::uint32_t>(vocab.total())) throw FormatError("shard: token id out of vocabulary");
      id = static_cast<TokenId>(v);
    }
    rec.report = r.get_bytes(r.get<std::uint16_t>());
    rec.labels = r.get<std::uint16_t>();
    const auto nf = r.get<std::uint8_t>();
    for (int f = 0; f < nf; ++f) {
      const auto sh = r.get<std::uint8_t>();
      const auto in = r.get<std::uint8_t>();
      const auto qu = r.get<std::uint8_t>();
      if (sh >= kShapeNames.size() || in >= kIntensityNames.size() || qu >= kQuadrantNames.size()) {
        throw FormatError("shard: finding triple out of range");
      }
      rec.findings.push_back({static_cast<Shape>(sh), static_cast<Intensity>(in), static_cast<Quadrant>(qu)});
    }
    s.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("shard: trailing bytes after declared samples");
  return s;
}

inline void write_shard(const std::filesystem::path& path, const Shard& shard) { write_file(path, serialize_shard(shard)); }
inline Shard read_shard(const std::filesystem::path& path) { return parse_shard(read_file(path)); }

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "CXCK" | version u16 | tensor count u32
//   directory entry: name length u16 | name | dtype u8 | rank u8 | dims u32[rank] | offset u64
//   payload length u64 | payload (offsets are relative to its start)
//   metadata length u32 | metadata (JSON text)

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

struct NamedTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;  // little-endian payload

  std::size_t elements() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  static NamedTensor from_f32(std::string name, std::vector<std::uint32_t> dims, std::span<const float> v) {
    NamedTensor t{std::move(name), DType::f32, std::move(dims), {}};
    ByteWriter w;
    for (float x : v) w.put_f32(x);
    t.data = w.bytes();
    require(t.elements() == v.size(), "tensor: dims do not match element count");
    return t;
  }
  static NamedTensor from_f64(std::string name, std::vector<std::uint32_t> dims, std::span<const double> v) {
    NamedTensor t{std::move(name), DType::f64, std::move(dims), {}};
    ByteWriter w;
    for (double x : v) w.put_f64(x);
    t.data = w.bytes();
    require(t.elements() == v.size(), "tensor: dims do not match element count");
    return t;
  }
  std::vector<float> as_f32() const {
    if (dtype != DType::f32) throw FormatError("tensor " + name + ": expected f32");
    ByteReader r(data, name);
    std::vector<float> v(elements());
    for (auto& x : v) x = r.get_f32();
    return v;
  }
  std::vector<double> as_f64() const {
    if (dtype != DType::f64) throw FormatError("tensor " + name + ": expected f64");
    ByteReader r(data, name);
    std::vector<double> v(elements());
    for (auto& x : v) x = r.get_f64();
    return v;
  }

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  json metadata = json::object();

  const NamedTensor& find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw FormatError("checkpoint: missing tensor " + std::string(name));
  }
};

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.put_bytes("CXCK");
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(ck.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    require(t.name.size() <= 0xffffu && t.dims.size() <= 0xffu, "checkpoint: tensor name or rank too large");
    require(t.data.size() == t.elements() * dtype_size(t.dtype), "checkpoint: tensor byte size mismatch");
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put(static_cast<std::uint8_t>(t.dtype));
    w.put(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put(d);
    w.put(offset);
    offset += t.data.size();
  }
  w.put(offset);
  for (const auto& t : ck.tensors) {
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(t.data.data()), t.data.size()));
  }
  const std::string meta = ck.metadata.dump();
  w.put(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta);
  return w.bytes();
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.get_bytes(4) != "CXCK") throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ck;
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_bytes(r.get<std::uint16_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw FormatError("checkpoint: unknown dtype tag for " + t.name);
    t.dtype = static_cast<DType>(dt);
    const auto rank = r.get<std::uint8_t>();
    for (int d = 0; d < rank; ++d) t.dims.push_back(r.get<std::uint32_t>());
    offsets.push_back(r.get<std::uint64_t>());
    ck.tensors.push_back(std::move(t));
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len > r.remaining()) throw FormatError("checkpoint: truncated payload");
  const std::size_t base = r.pos();
  // The directory must tile the payload exactly, in order.
  std::uint64_t expect = 0;
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& t = ck.tensors[i];
    const std::uint64_t len = t.elements() * dtype_size(t.dtype);
    if (offsets[i] != expect) throw FormatError("checkpoint: tensor offsets overlap or leave gaps");
    r.seek(base + offsets[i]);
    const auto raw = r.get_bytes(len);
    t.data.assign(raw.begin(), raw.end());
    expect += len;
  }
  if (expect != payload_len) throw FormatError("checkpoint: directory does not cover the payload");
  r.seek(base + payload_len);
  const auto meta = r.get_bytes(r.get<std::uint32_t>());
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  try {
    ck.metadata = json::parse(meta);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, serialize_checkpoint(ck));
}
inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Model and codebook <-> checkpoint

inline json model_config_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"text_size", c.vocab.text_size},
          {"image_size", c.vocab.image_size},
          {"max_len", c.max_len},
          {"attention", c.attention == AttentionVariant::causal ? "causal" : "bidirectional_image"},
          {"rope_base", c.rope_base}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.vocab = VocabLayout{j.at("text_size").get<int>(), j.at("image_size").get<int>()};
    c.max_len = j.at("max_len").get<int>();
    const auto att = j.at("attention").get<std::string>();
    if (att != "causal" && att != "bidirectional_image") throw FormatError("unknown attention variant " + att);
    c.attention = att == "causal" ? AttentionVariant::causal : AttentionVariant::bidirectional_image;
    c.rope_base = j.at("rope_base").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline Checkpoint model_checkpoint(const Model<float>& model, json metadata) {
  Checkpoint ck;
  const auto& params = model.params();
  for (const auto& t : model.layout().tensors()) {
    std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)};
    ck.tensors.push_back(NamedTensor::from_f32(t.name, dims, std::span(params).subspan(t.offset, t.size())));
  }
  metadata["model"] = model_config_json(model.config());
  ck.metadata = std::move(metadata);
  return ck;
}

inline Model<float> model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("model")) throw FormatError("checkpoint: no model config in metadata");
  const ModelConfig cfg = model_config_from_json(ck.metadata.at("model"));
  const ParameterLayout layout(cfg);
  ParamVector<float> params(layout.total());
  for (const auto& info : layout.tensors()) {
    const auto& t = ck.find(info.name);
    if (t.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(info.rows), static_cast<std::uint32_t>(info.cols)}) {
      throw FormatError("checkpoint: shape mismatch for " + info.name);
    }
    const auto v = t.as_f32();
    std::copy(v.begin(), v.end(), params.begin() + static_cast<std::ptrdiff_t>(info.offset));
  }
  return Model<float>(cfg, std::move(params));
}

inline Checkpoint codebook_checkpoint(const VqCodebook& book, json metadata) {
  Checkpoint ck;
  ck.tensors.push_back(NamedTensor::from_f64(
      "vq.codes", {static_cast<std::uint32_t>(book.code_count), static_cast<std::uint32_t>(book.dim())}, book.codes));
  const std::vector<double> stats{book.distortion, book.peak_distortion};
  ck.tensors.push_back(NamedTensor::from_f64("vq.distortion", {2}, stats));
  metadata["codebook"] = {{"patch_side", book.patch_side}, {"code_count", book.code_count},
                          {"iterations", book.iterations}};
  ck.metadata = std::move(metadata);
  return ck;
}

inline VqCodebook codebook_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("codebook")) throw FormatError("checkpoint: no codebook metadata");
  VqCodebook book;
  const auto& m = ck.metadata.at("codebook");
  book.patch_side = m.at("patch_side").get<int>();
  book.code_count = m.at("code_count").get<int>();
  book.iterations = m.at("iterations").get<int>();
  const auto& codes = ck.find("vq.codes");
  if (codes.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(book.code_count),
                                               static_cast<std::uint32_t>(book.dim())}) {
    throw FormatError("codebook: code tensor shape mismatch");
  }
  book.codes = codes.as_f64();
  const auto stats = ck.find("vq.distortion").as_f64();
  if (stats.size() != 2) throw FormatError("codebook: distortion tensor must hold 2 values");
  book.distortion = stats[0];
  book.peak_distortion = stats[1];
  return book;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, 8-bit); several images of equal height are placed side by side.

inline std::vector<std::uint8_t> encode_pgm(std::span<const Image> panels) {
  require(!panels.empty(), "pgm: no images");
  const int h = panels[0].height;
  int w = 0;
  for (const auto& p : panels) {
    require(p.height == h, "pgm: panels must share a height");
    w += p.width;
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (int r = 0; r < h; ++r) {
    for (const auto& p : panels) {
      for (int c = 0; c < p.width; ++c) {
        const double v = std::clamp(p.at(r, c), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

inline Image decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: not a binary graymap");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError("pgm: bad header");
  }
  if (maxval != 255 || w <= 0 || h <= 0) throw FormatError("pgm: only 8-bit images are supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos != static_cast<std::size_t>(w) * h) throw FormatError("pgm: pixel data size mismatch");
  Image img(h, w);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = bytes[pos + i] / 255.0;
  return img;
}

// Appends one JSON record per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw ValidationError("cannot write " + path.string());
  }
  void write(const json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace cxmx
