#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/evaluation.hpp"
#include "cxmx/io.hpp"
#include "cxmx/model.hpp"
#include "cxmx/probe.hpp"
#include "cxmx/sequence.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/training.hpp"
#include "cxmx/vocab.hpp"
#include "cxmx/vq.hpp"

namespace cxmx {

struct DataOptions {
  std::size_t samples = 5000;
  std::uint64_t seed = 0;
  double noise = 0.02;
  int codes = 256;
  std::uint64_t codebook_seed = 0;
  KMeansOptions kmeans;
};

// Generated samples, the codebook fitted on the training split, and every
// sample tokenized.
struct PreparedData {
  DataOptions options;
  VocabLayout vocab;
  TextTokenizer tokenizer;
  std::vector<SyntheticSample> samples;
  DatasetSplits splits;
  VqCodebook codebook;
  std::vector<std::vector<TokenId>> image_tokens;
  std::vector<std::vector<TokenId>> text_tokens;
};

inline PatchSet training_patches(std::span<const SyntheticSample> samples, std::span<const std::size_t> indices,
                                 int patch_side) {
  PatchSet all;
  all.dim = patch_side * patch_side;
  for (std::size_t i : indices) {
    const auto p = extract_patches(samples[i].image, patch_side);
    all.values.insert(all.values.end(), p.values.begin(), p.values.end());
  }
  return all;
}

inline PreparedData prepare_data(const DataOptions& opts) {
  PreparedData d;
  d.options = opts;
  d.vocab = VocabLayout{64, opts.codes};
  d.tokenizer = TextTokenizer(d.vocab);
  d.samples = generate_dataset(opts.samples, opts.seed, opts.noise);
  d.splits = split_dataset(opts.samples);
  d.codebook = fit_codebook(training_patches(d.samples, d.splits.train, 4), opts.codes, opts.codebook_seed, 4,
                            opts.kmeans);
  for (const auto& s : d.samples) {
    d.image_tokens.push_back(encode_image(s.image, d.codebook, d.vocab));
    d.text_tokens.push_back(d.tokenizer.encode(s.report));
  }
  return d;
}

inline TrainData select_train_data(const PreparedData& d, std::span<const std::size_t> indices) {
  TrainData t;
  for (std::size_t i : indices) {
    t.image_tokens.push_back(d.image_tokens[i]);
    t.text_tokens.push_back(d.text_tokens[i]);
  }
  return t;
}

inline ProbeDataset make_probe_dataset(const PreparedData& d) {
  ProbeDataset p;
  auto fill = [&](std::span<const std::size_t> idx, std::vector<std::vector<TokenId>>& images, LabelMatrix& labels) {
    std::vector<std::uint16_t> bits;
    for (std::size_t i : idx) {
      images.push_back(d.image_tokens[i]);
      bits.push_back(d.samples[i].labels);
    }
    labels = labels_matrix(bits);
  };
  fill(d.splits.train, p.train_images, p.train_labels);
  fill(d.splits.val, p.val_images, p.val_labels);
  fill(d.splits.test, p.test_images, p.test_labels);
  return p;
}

struct InpaintSummary {
  double ratio = 0.0;
  double mean_psnr = 0.0;  // finite values only
  double mean_ssim = 0.0;
  double blank_psnr = 0.0;
  double blank_ssim = 0.0;
  int infinite_psnr = 0;  // reconstructions identical to the reference
  int count = 0;
  int unrestricted_disagreements = 0;
};

template <typename T>
InpaintSummary inpaint_eval(const Model<T>& model, const PreparedData& d, std::span<const std::size_t> indices,
                            double ratio, std::uint64_t seed) {
  InpaintSummary s;
  s.ratio = ratio;
  int finite = 0, blank_finite = 0;
  for (std::size_t i : indices) {
    const auto seq = image_prompt(d.image_tokens[i], model.config().vocab, static_cast<std::int64_t>(i));
    const auto rec = corrupt_image(seq, ratio, derive_seed(seed, i), model.config().vocab);
    const auto r = inpaint(model, seq, rec.masked_positions, d.codebook);
    if (is_infinite_psnr(r.psnr)) {
      ++s.infinite_psnr;
    } else {
      s.mean_psnr += r.psnr;
      ++finite;
    }
    if (!is_infinite_psnr(r.blank_psnr)) {
      s.blank_psnr += r.blank_psnr;
      ++blank_finite;
    }
    s.mean_ssim += r.ssim;
    s.blank_ssim += r.blank_ssim;
    s.unrestricted_disagreements += r.unrestricted_disagreements;
    ++s.count;
  }
  if (finite) s.mean_psnr /= finite;
  if (blank_finite) s.blank_psnr /= blank_finite;
  if (s.count) {
    s.mean_ssim /= s.count;
    s.blank_ssim /= s.count;
  }
  return s;
}

struct ReportSummary {
  double ratio = 0.0;
  double micro_f1 = 0.0;
  double mean_f1 = 0.0;
  double exact_match = 0.0;
  int count = 0;
};

// Greedy reports from image-first prompts whose payload is masked at `ratio`;
// the length cap is the reference report's token count (bounded by the
// remaining context).
template <typename T>
ReportSummary report_eval(const Model<T>& model, const PreparedData& d, std::span<const std::size_t> indices,
                          double ratio, std::uint64_t seed, std::vector<std::string>* reports = nullptr) {
  ReportSummary s;
  s.ratio = ratio;
  MicroF1 micro;
  const auto& cfg = model.config();
  for (std::size_t i : indices) {
    const auto seq = image_prompt(d.image_tokens[i], cfg.vocab, static_cast<std::int64_t>(i));
    const auto rec = corrupt_image(seq, ratio, derive_seed(seed, i), cfg.vocab);
    const int room = cfg.max_len - seq.size();
    const int cap = std::min(static_cast<int>(d.text_tokens[i].size()), room);
    const auto text = generate_report(model, rec.corrupted_ids, seq.image_payload(), cap, d.tokenizer);
    const auto parsed = parse_report(text);
    micro.add(parsed.findings, d.samples[i].findings);
    s.mean_f1 += finding_f1(parsed.findings, d.samples[i].findings);
    s.exact_match += text == d.samples[i].report.substr(0, static_cast<std::size_t>(cap)) ? 1.0 : 0.0;
    if (reports) reports->push_back(text);
    ++s.count;
  }
  s.micro_f1 = micro.value();
  if (s.count) {
    s.mean_f1 /= s.count;
    s.exact_match /= s.count;
  }
  return s;
}

struct TtaSummary {
  int k = 0;
  TtaMode mode = TtaMode::mask_subset;
  double consolidated_micro_f1 = 0.0;
  double view_micro_f1 = 0.0;  // pooled over every single view
  double consolidated_mean_f1 = 0.0;
  double view_mean_f1 = 0.0;
  int count = 0;
};

template <typename T>
TtaSummary tta_eval(const Model<T>& model, const PreparedData& d, std::span<const std::size_t> indices, int k,
                    TtaMode mode, std::uint64_t seed) {
  TtaSummary s;
  s.k = k;
  s.mode = mode;
  MicroF1 consolidated, views;
  const auto& cfg = model.config();
  for (std::size_t i : indices) {
    const auto& img = d.image_tokens[i];
    const auto part = make_tta_partition(static_cast<int>(img.size()), k, derive_seed(seed, i), mode);
    const int room = cfg.max_len - static_cast<int>(img.size()) - 3;
    const int cap = std::min(static_cast<int>(d.text_tokens[i].size()), room);
    const auto r = tta_generate(model, img, d.samples[i].findings, part, cap, d.tokenizer);
    consolidated.add(r.consolidated, d.samples[i].findings);
    for (const auto& v : r.view_findings) views.add(v, d.samples[i].findings);
    s.consolidated_mean_f1 += r.consolidated_f1;
    s.view_mean_f1 += r.mean_view_f1;
    ++s.count;
  }
  s.consolidated_micro_f1 = consolidated.value();
  s.view_micro_f1 = views.value();
  if (s.count) {
    s.consolidated_mean_f1 /= s.count;
    s.view_mean_f1 /= s.count;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training runs with on-disk caching. Runs are deterministic, so a checkpoint
// whose recorded run key matches is the result of re-running that exact job.

inline json train_config_json(const TrainConfig& t) {
  return {{"stage", t.stage == Stage::s1 ? "s1" : "s2"},
          {"mask_ratio", t.mask_ratio},
          {"lr_peak", t.lr_peak},
          {"adam_beta1", t.adam.beta1},
          {"adam_beta2", t.adam.beta2},
          {"adam_eps", t.adam.eps},
          {"weight_decay", t.adam.weight_decay},
          {"clip_norm", t.clip_norm},
          {"batch_size", t.batch_size},
          {"grad_accum", t.grad_accum},
          {"steps", t.steps},
          {"seed", t.seed},
          {"loss_rule", t.loss_rule == LossRule::follow_mask ? "follow_mask" : "at_mask"},
          {"context_cap", t.context_cap}};
}

inline json data_options_json(const DataOptions& o) {
  return {{"samples", o.samples},
          {"seed", o.seed},
          {"noise", o.noise},
          {"codes", o.codes},
          {"codebook_seed", o.codebook_seed},
          {"kmeans_max_iterations", o.kmeans.max_iterations},
          {"kmeans_tolerance", o.kmeans.tolerance}};
}

struct RunSpec {
  std::string name;
  ModelConfig model;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  std::optional<std::string> init_from;  // name of a finished run
};

inline json run_key(const RunSpec& spec, const DataOptions& data, const json& init_key) {
  return {{"model", model_config_json(spec.model)},
          {"model_seed", spec.model_seed},
          {"train", train_config_json(spec.train)},
          {"data", data_options_json(data)},
          {"init", init_key}};
}

class RunCache {
 public:
  explicit RunCache(std::filesystem::path dir, std::function<void(const std::string&)> log = {})
      : dir_(std::move(dir)), log_(std::move(log)) {}

  // Trains (or reloads) the run; `init` must be the model the run starts from
  // when spec.train.stage is s2.
  Model<float> run(const RunSpec& spec, const PreparedData& data, const Model<float>* init, const json& init_key,
                   json* key_out = nullptr) {
    check_stage_init(spec.train, init != nullptr);
    const json key = run_key(spec, data.options, init_key);
    if (key_out) *key_out = key;
    const auto path = dir_ / (spec.name + ".cxck");
    if (std::filesystem::exists(path)) {
      try {
        auto ck = read_checkpoint(path);
        if (ck.metadata.contains("run_key") && ck.metadata.at("run_key") == key) {
          say("reusing " + path.string());
          return model_from_checkpoint(ck);
        }
      } catch (const FormatError&) {
      }
      say("stale cache entry " + path.string() + ", retraining");
    }
    Model<float> model = init ? *init : Model<float>(spec.model, spec.model_seed);
    require(model.config().max_len >= spec.train.context_cap, "run: context cap exceeds model max_len");
    TrainHooks hooks;
    const auto every = std::max<std::int64_t>(1, spec.train.steps / 20);
    hooks.on_step = [&](const TrainRecord& r) {
      if ((r.step + 1) % every == 0) {
        say(spec.name + " step " + std::to_string(r.step + 1) + "/" + std::to_string(spec.train.steps) +
            " loss " + std::to_string(r.loss) + " (" + std::to_string(static_cast<int>(r.wall_seconds)) + " s)");
      }
    };
    const auto log = train(model, spec.train, select_train_data(data, data.splits.train), hooks);
    json meta = {{"run_key", key},
                 {"step", spec.train.steps},
                 {"stage", spec.train.stage == Stage::s1 ? "s1" : "s2"},
                 {"rng", {{"seed", spec.train.seed}, {"next_step", spec.train.steps}}},
                 {"final_loss", log.back().loss}};
    std::filesystem::create_directories(dir_);
    write_checkpoint(path, model_checkpoint(model, meta));
    return model;
  }

 private:
  void say(const std::string& s) const {
    if (log_) log_(s);
  }
  std::filesystem::path dir_;
  std::function<void(const std::string&)> log_;
};

}  // namespace cxmx
