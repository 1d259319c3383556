#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/vocab.hpp"

namespace cxmx {

// Half-open index interval [begin, end).
struct Span {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(int i) const { return i >= begin && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

// Joint image/text sequence. image_span covers IMG_START..IMG_END inclusive,
// text_span covers TXT_START and the report tokens that follow it.
struct TokenSequence {
  std::vector<TokenId> ids;
  Span image_span;
  Span text_span;
  bool image_first = true;
  std::int64_t source = -1;

  int size() const { return static_cast<int>(ids.size()); }
  Span image_payload() const {
    if (image_span.empty()) return {};
    return {image_span.begin + 1, image_span.end - 1};
  }
  Span text_payload() const {
    if (text_span.empty()) return {};
    return {text_span.begin + 1, text_span.end};
  }
};

inline TokenSequence assemble(std::span<const TokenId> image_tokens,
                              std::span<const TokenId> text_tokens, bool image_first, int cap,
                              const VocabLayout& vocab, std::int64_t source = -1) {
  const int n_img = static_cast<int>(image_tokens.size());
  require(cap >= n_img + 3, "assemble: cap " + std::to_string(cap) +
                                " cannot hold the image payload plus special tokens");
  for (TokenId id : image_tokens) require(vocab.is_image(id), "assemble: non-image id in image payload");
  for (TokenId id : text_tokens) require(vocab.is_text(id), "assemble: non-text id in text payload");

  const int n_txt = std::min(static_cast<int>(text_tokens.size()), cap - n_img - 3);
  TokenSequence seq;
  seq.image_first = image_first;
  seq.source = source;
  seq.ids.reserve(static_cast<std::size_t>(n_img + n_txt + 3));

  auto push_image = [&] {
    const int b = seq.size();
    seq.ids.push_back(vocab.img_start());
    seq.ids.insert(seq.ids.end(), image_tokens.begin(), image_tokens.end());
    seq.ids.push_back(vocab.img_end());
    seq.image_span = {b, seq.size()};
  };
  auto push_text = [&] {
    const int b = seq.size();
    seq.ids.push_back(vocab.txt_start());
    seq.ids.insert(seq.ids.end(), text_tokens.begin(), text_tokens.begin() + n_txt);
    seq.text_span = {b, seq.size()};
  };
  if (image_first) {
    push_image();
    push_text();
  } else {
    push_text();
    push_image();
  }
  return seq;
}

// [TXT_START, text...] with an empty image span; used to embed reports on
// their own for retrieval.
inline TokenSequence assemble_text_only(std::span<const TokenId> text_tokens, int cap,
                                        const VocabLayout& vocab, std::int64_t source = -1) {
  require(cap >= 1, "assemble_text_only: cap must be >= 1");
  for (TokenId id : text_tokens) require(vocab.is_text(id), "assemble_text_only: non-text id");
  const int n_txt = std::min(static_cast<int>(text_tokens.size()), cap - 1);
  TokenSequence seq;
  seq.source = source;
  seq.image_first = false;
  seq.ids.push_back(vocab.txt_start());
  seq.ids.insert(seq.ids.end(), text_tokens.begin(), text_tokens.begin() + n_txt);
  seq.text_span = {0, seq.size()};
  return seq;
}

enum class LossRule { follow_mask, at_mask };

struct CorruptionRecord {
  std::vector<TokenId> corrupted_ids;
  std::vector<int> masked_positions;
  std::vector<int> loss_positions;
  double mask_ratio = 0.0;
  std::uint64_t seed = 0;
};

// Target positions that receive loss. follow_mask: positions whose input
// predecessor was masked. at_mask: the masked positions themselves, except
// position 0 which no row predicts.
inline std::vector<int> loss_positions_for(std::span<const int> masked_sorted, int length,
                                           LossRule rule) {
  std::vector<int> out;
  out.reserve(masked_sorted.size());
  for (int m : masked_sorted) {
    const int target = rule == LossRule::follow_mask ? m + 1 : m;
    if (target >= 1 && target < length) out.push_back(target);
  }
  return out;
}

inline CorruptionRecord corrupt_at(std::span<const TokenId> ids, std::vector<int> masked,
                                   LossRule rule, const VocabLayout& vocab) {
  std::sort(masked.begin(), masked.end());
  require(std::adjacent_find(masked.begin(), masked.end()) == masked.end(),
          "corrupt_at: duplicate masked position");
  CorruptionRecord rec;
  rec.corrupted_ids.assign(ids.begin(), ids.end());
  for (int m : masked) {
    require(m >= 0 && m < static_cast<int>(ids.size()), "corrupt_at: position out of range");
    require(!vocab.is_special(ids[static_cast<std::size_t>(m)]),
            "corrupt_at: special tokens cannot be masked");
    rec.corrupted_ids[static_cast<std::size_t>(m)] = vocab.mask();
  }
  rec.loss_positions = loss_positions_for(masked, static_cast<int>(ids.size()), rule);
  rec.masked_positions = std::move(masked);
  if (!ids.empty()) {
    rec.mask_ratio = static_cast<double>(rec.masked_positions.size()) / static_cast<double>(ids.size());
  }
  return rec;
}

inline int masked_count(double ratio, int candidates) {
  return static_cast<int>(std::floor(ratio * candidates + 1e-9));
}

// Uniformly choose floor(ratio * |candidates|) of the candidates.
inline std::vector<int> sample_positions(std::vector<int> candidates, double ratio,
                                         std::uint64_t seed) {
  const int count = masked_count(ratio, static_cast<int>(candidates.size()));
  Rng rng = make_rng(seed);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   uniform_index(rng, candidates.size() - static_cast<std::size_t>(i));
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
  }
  candidates.resize(static_cast<std::size_t>(count));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

// Stage-2 corruption over all non-special positions.
inline CorruptionRecord corrupt(const TokenSequence& seq, double mask_ratio, std::uint64_t seed,
                                const VocabLayout& vocab, LossRule rule = LossRule::follow_mask) {
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, "corrupt: mask_ratio must lie in [0,1]");
  std::vector<int> candidates;
  for (int i = 0; i < seq.size(); ++i) {
    if (!vocab.is_special(seq.ids[static_cast<std::size_t>(i)])) candidates.push_back(i);
  }
  auto rec = corrupt_at(seq.ids, sample_positions(std::move(candidates), mask_ratio, seed), rule, vocab);
  rec.mask_ratio = mask_ratio;
  rec.seed = seed;
  return rec;
}

// Evaluation-time corruption restricted to the image payload; no loss positions.
inline CorruptionRecord corrupt_image(const TokenSequence& seq, double mask_ratio,
                                      std::uint64_t seed, const VocabLayout& vocab) {
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, "corrupt_image: mask_ratio must lie in [0,1]");
  const Span payload = seq.image_payload();
  std::vector<int> candidates;
  for (int i = payload.begin; i < payload.end; ++i) candidates.push_back(i);
  auto rec = corrupt_at(seq.ids, sample_positions(std::move(candidates), mask_ratio, seed),
                        LossRule::follow_mask, vocab);
  rec.loss_positions.clear();
  rec.mask_ratio = mask_ratio;
  rec.seed = seed;
  return rec;
}

enum class TtaMode { mask_subset, keep_subset };

struct TtaPartition {
  int k = 5;
  int image_len = 0;
  std::vector<std::vector<int>> subsets;  // payload-relative indices, sorted
  TtaMode mode = TtaMode::mask_subset;
};

// Seeded shuffle of payload indices dealt round-robin into k subsets.
inline TtaPartition make_tta_partition(int image_len, int k, std::uint64_t seed,
                                       TtaMode mode = TtaMode::mask_subset) {
  require(k >= 1, "make_tta_partition: k must be >= 1");
  require(image_len >= k, "make_tta_partition: k exceeds image length");
  std::vector<int> order(static_cast<std::size_t>(image_len));
  for (int i = 0; i < image_len; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = make_rng(seed);
  cxmx::shuffle(order.begin(), order.end(), rng);
  TtaPartition part;
  part.k = k;
  part.image_len = image_len;
  part.mode = mode;
  part.subsets.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < image_len; ++i) {
    part.subsets[static_cast<std::size_t>(i % k)].push_back(order[static_cast<std::size_t>(i)]);
  }
  for (auto& s : part.subsets) std::sort(s.begin(), s.end());
  return part;
}

inline CorruptionRecord apply_tta_view(const TokenSequence& seq, const TtaPartition& part,
                                       int view_index, const VocabLayout& vocab) {
  require(view_index >= 0 && view_index < part.k, "apply_tta_view: view index out of range");
  const Span payload = seq.image_payload();
  require(payload.size() == part.image_len, "apply_tta_view: partition does not match payload");
  const auto& subset = part.subsets[static_cast<std::size_t>(view_index)];
  std::vector<int> masked;
  if (part.mode == TtaMode::mask_subset) {
    for (int i : subset) masked.push_back(payload.begin + i);
  } else {
    std::vector<char> keep(static_cast<std::size_t>(part.image_len), 0);
    for (int i : subset) keep[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < part.image_len; ++i) {
      if (!keep[static_cast<std::size_t>(i)]) masked.push_back(payload.begin + i);
    }
  }
  auto rec = corrupt_at(seq.ids, std::move(masked), LossRule::follow_mask, vocab);
  rec.loss_positions.clear();
  return rec;
}

}  // namespace cxmx
