#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/config.hpp"
#include "cxmx/experiment.hpp"
#include "cxmx/io.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/vq.hpp"

// File-level stages: generated data directory -> tokenized data directory ->
// checkpoints. Every artefact is a deterministic function of its inputs.
namespace cxmx {

namespace fs = std::filesystem;

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

inline const std::vector<std::size_t>& split_indices(const DatasetSplits& s, int which) {
  return which == 0 ? s.train : which == 1 ? s.val : s.test;
}

// Pixel companion file: "CXPX" | version u16 | count u32 | height u32 | width u32 | f64 pixels.
inline std::vector<std::uint8_t> serialize_pixels(std::span<const Image> images) {
  ByteWriter w;
  w.put_bytes("CXPX");
  w.put(std::uint16_t{1});
  w.put(static_cast<std::uint32_t>(images.size()));
  const int h = images.empty() ? 0 : images[0].height;
  const int wd = images.empty() ? 0 : images[0].width;
  w.put(static_cast<std::uint32_t>(h));
  w.put(static_cast<std::uint32_t>(wd));
  for (const auto& im : images) {
    require(im.height == h && im.width == wd, "pixels: images must share a shape");
    for (double p : im.pixels) w.put_f64(p);
  }
  return w.bytes();
}

inline std::vector<Image> parse_pixels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "pixel file");
  if (r.get_bytes(4) != "CXPX") throw FormatError("pixel file: bad magic");
  if (r.get<std::uint16_t>() != 1) throw FormatError("pixel file: unsupported version");
  const auto n = r.get<std::uint32_t>();
  const auto h = static_cast<int>(r.get<std::uint32_t>());
  const auto w = static_cast<int>(r.get<std::uint32_t>());
  std::vector<Image> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Image im(h, w);
    for (auto& p : im.pixels) p = r.get_f64();
    out.push_back(std::move(im));
  }
  if (r.remaining() != 0) throw FormatError("pixel file: trailing bytes");
  return out;
}

struct GenDataOptions {
  std::size_t n = 5000;
  std::uint64_t seed = 0;
  double noise = 0.02;
};

// Writes <split>.cxmx (reports, labels, findings; no image tokens yet),
// <split>.cxpx (pixels) and manifest.json.
inline json gen_data(const GenDataOptions& opt, const fs::path& out) {
  const auto samples = generate_dataset(opt.n, opt.seed, opt.noise);
  const auto splits = split_dataset(opt.n);
  json manifest = {{"generator", {{"n", opt.n}, {"seed", opt.seed}, {"noise", opt.noise}}}, {"splits", json::object()}};
  for (int s = 0; s < 3; ++s) {
    const auto& idx = split_indices(splits, s);
    Shard shard;
    std::vector<Image> images;
    for (std::size_t i : idx) {
      shard.records.push_back(shard_record(samples[i]));
      images.push_back(samples[i].image);
    }
    write_shard(out / (std::string(kSplitNames[s]) + ".cxmx"), shard);
    write_file(out / (std::string(kSplitNames[s]) + ".cxpx"), serialize_pixels(images));
    manifest["splits"][kSplitNames[s]] = {{"first", idx.empty() ? 0 : idx.front()}, {"count", idx.size()}};
  }
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

struct FitTokenizerOptions {
  int codes = 256;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;
};

// Fits the codebook on the training pixels, then writes codebook.cxck and
// tokenized copies of every shard.
inline VqCodebook fit_tokenizer(const fs::path& data_dir, const FitTokenizerOptions& opt, const fs::path& out) {
  const auto train_pixels = parse_pixels(read_file(data_dir / "train.cxpx"));
  require(!train_pixels.empty(), "fit-tokenizer: empty training split");
  PatchSet patches;
  patches.dim = 16;
  for (const auto& im : train_pixels) {
    const auto p = extract_patches(im, 4);
    patches.values.insert(patches.values.end(), p.values.begin(), p.values.end());
  }
  const auto book = fit_codebook(patches, opt.codes, opt.seed, 4, opt.kmeans);
  const VocabLayout vocab{64, opt.codes};
  json meta = {{"fit", {{"codes", opt.codes}, {"seed", opt.seed}, {"max_iterations", opt.kmeans.max_iterations},
                        {"tolerance", opt.kmeans.tolerance}, {"training_images", train_pixels.size()}}}};
  write_checkpoint(out / "codebook.cxck", codebook_checkpoint(book, meta));
  for (const char* name : kSplitNames) {
    auto shard = read_shard(data_dir / (std::string(name) + ".cxmx"));
    const auto pixels = parse_pixels(read_file(data_dir / (std::string(name) + ".cxpx")));
    require(pixels.size() == shard.records.size(), "fit-tokenizer: pixel and shard counts differ");
    shard.text_size = static_cast<std::uint32_t>(vocab.text_size);
    shard.image_size = static_cast<std::uint32_t>(vocab.image_size);
    for (std::size_t i = 0; i < pixels.size(); ++i) shard.records[i].image_tokens = encode_image(pixels[i], book, vocab);
    write_shard(out / (std::string(name) + ".cxmx"), shard);
    fs::copy_file(data_dir / (std::string(name) + ".cxpx"), out / (std::string(name) + ".cxpx"),
                  fs::copy_options::overwrite_existing);
  }
  if (fs::exists(data_dir / "manifest.json")) {
    fs::copy_file(data_dir / "manifest.json", out / "manifest.json", fs::copy_options::overwrite_existing);
  }
  return book;
}

// A tokenized data directory loaded back into memory.
inline PreparedData load_prepared(const fs::path& dir) {
  PreparedData d;
  d.codebook = codebook_from_checkpoint(read_checkpoint(dir / "codebook.cxck"));
  d.vocab = VocabLayout{64, d.codebook.code_count};
  d.tokenizer = TextTokenizer(d.vocab);
  for (int s = 0; s < 3; ++s) {
    const auto shard = read_shard(dir / (std::string(kSplitNames[s]) + ".cxmx"));
    const auto pixels = parse_pixels(read_file(dir / (std::string(kSplitNames[s]) + ".cxpx")));
    require(pixels.size() == shard.records.size(), "data: pixel and shard counts differ");
    require(shard.image_size == static_cast<std::uint32_t>(d.codebook.code_count),
            "data: shard vocabulary does not match the codebook");
    auto& idx = s == 0 ? d.splits.train : s == 1 ? d.splits.val : d.splits.test;
    for (std::size_t i = 0; i < shard.records.size(); ++i) {
      const auto& r = shard.records[i];
      require(!r.image_tokens.empty(), "data: shard is not tokenized (run fit-tokenizer first)");
      idx.push_back(d.samples.size());
      SyntheticSample sample;
      sample.image = pixels[i];
      sample.report = r.report;
      sample.labels = r.labels;
      sample.findings = FindingSet(r.findings.begin(), r.findings.end());
      d.samples.push_back(std::move(sample));
      d.image_tokens.push_back(r.image_tokens);
      d.text_tokens.push_back(d.tokenizer.encode(r.report));
    }
  }
  d.options.samples = d.samples.size();
  d.options.codes = d.codebook.code_count;
  if (fs::exists(dir / "manifest.json")) {
    const auto bytes = read_file(dir / "manifest.json");
    const auto m = json::parse(bytes.begin(), bytes.end());
    d.options.seed = m.at("generator").at("seed").get<std::uint64_t>();
    d.options.noise = m.at("generator").at("noise").get<double>();
  }
  return d;
}

}  // namespace cxmx
