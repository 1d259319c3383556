#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/metrics.hpp"
#include "cxmx/model.hpp"
#include "cxmx/probe.hpp"
#include "cxmx/sequence.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/vocab.hpp"
#include "cxmx/vq.hpp"

namespace cxmx {

// [IMG_START, payload, IMG_END, TXT_START]: the prompt used for inpainting,
// report generation and probing.
inline TokenSequence image_prompt(std::span<const TokenId> image_tokens, const VocabLayout& vocab,
                                  std::int64_t source = -1) {
  return assemble(image_tokens, {}, true, static_cast<int>(image_tokens.size()) + 3, vocab, source);
}

template <typename T>
TokenId argmax_range(const RowMat<T>& logits, int row, TokenId lo, TokenId hi) {
  TokenId best = lo;
  for (TokenId i = lo + 1; i < hi; ++i) {
    if (logits(row, i) > logits(row, best)) best = i;
  }
  return best;
}

struct InpaintResult {
  std::vector<TokenId> predicted_ids;  // full sequence with masked slots filled
  Image reference;                     // decode of the uncorrupted tokens
  Image reconstruction;
  Image blank;                         // decode with MASK left as zeros
  double psnr = 0.0;
  double ssim = 0.0;
  double blank_psnr = 0.0;
  double blank_ssim = 0.0;
  int unrestricted_disagreements = 0;  // masked slots where the full-vocab argmax was not an image id
};

// Single forward pass over the corrupted sequence; masked slot i takes the
// image-block argmax of logits row i - 1.
template <typename T>
InpaintResult inpaint(const Model<T>& model, const TokenSequence& seq, std::span<const int> masked,
                      const VqCodebook& book) {
  const auto& vocab = model.config().vocab;
  const Span payload = seq.image_payload();
  for (int m : masked) require(payload.contains(m), "inpaint: masked index outside the image payload");
  const auto rec = corrupt_at(seq.ids, std::vector<int>(masked.begin(), masked.end()), LossRule::follow_mask, vocab);
  InpaintResult res;
  res.predicted_ids = rec.corrupted_ids;
  if (!masked.empty()) {
    const auto out = model.forward(rec.corrupted_ids, build_attention_mask(seq, model.config().attention));
    const TokenId lo = vocab.image_offset();
    const TokenId hi = vocab.image_offset() + vocab.image_size;
    for (int m : masked) {
      const TokenId pick = argmax_range(out.logits, m - 1, lo, hi);
      const TokenId any = argmax_range(out.logits, m - 1, 0, vocab.total());
      if (any != pick) ++res.unrestricted_disagreements;
      res.predicted_ids[static_cast<std::size_t>(m)] = pick;
    }
  }
  auto slice = [&](const std::vector<TokenId>& ids) {
    return std::vector<TokenId>(ids.begin() + payload.begin, ids.begin() + payload.end);
  };
  res.reference = decode_tokens(slice(seq.ids), book, vocab);
  res.reconstruction = decode_tokens(slice(res.predicted_ids), book, vocab);
  res.blank = decode_tokens(slice(rec.corrupted_ids), book, vocab);
  res.psnr = psnr(res.reference, res.reconstruction);
  res.ssim = ssim(res.reference, res.reconstruction);
  res.blank_psnr = psnr(res.reference, res.blank);
  res.blank_ssim = ssim(res.reference, res.blank);
  return res;
}

// Greedy decoding after the prompt (which must end in TXT_START). Only
// character-bearing text ids or PAD (stop) can be chosen.
template <typename T>
std::string generate_report(const Model<T>& model, std::span<const TokenId> prompt, Span image_payload,
                            int max_tokens, const TextTokenizer& tok) {
  require(max_tokens >= 1, "generate_report: max_tokens must be >= 1");
  const auto& cfg = model.config();
  require(!prompt.empty() && prompt.back() == cfg.vocab.txt_start(), "generate_report: prompt must end in TXT_START");
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  std::vector<TokenId> text;
  Activations<T> acts;
  while (static_cast<int>(text.size()) < max_tokens && static_cast<int>(ids.size()) < cfg.max_len) {
    model.forward(ids, build_attention_mask(static_cast<int>(ids.size()), image_payload, cfg.attention), acts);
    const int row = static_cast<int>(ids.size()) - 1;
    const TokenId best_text = argmax_range(acts.out.logits, row, 0, tok.used_ids());
    if (acts.out.logits(row, cfg.vocab.pad()) > acts.out.logits(row, best_text)) break;
    ids.push_back(best_text);
    text.push_back(best_text);
  }
  return tok.decode(text);
}

struct RetrievalRecall {
  double image_to_text = 0.0;
  double text_to_image = 0.0;
  int pools = 0;
};

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// Recall@k inside disjoint pools of consecutive pairs (remainder dropped). A
// query hits when fewer than k candidates score strictly above its partner.
inline RetrievalRecall retrieval_recall(const FeatureMatrix& image_emb, const FeatureMatrix& text_emb, int pool_size,
                                        int k) {
  require(image_emb.rows() == text_emb.rows(), "retrieve: embedding count mismatch");
  require(pool_size >= 1 && image_emb.rows() >= pool_size, "retrieve: pool larger than sample count");
  require(k >= 1, "retrieve: k must be >= 1");
  RetrievalRecall r;
  const auto pools = static_cast<int>(image_emb.rows() / pool_size);
  std::size_t hits_it = 0, hits_ti = 0;
  for (int p = 0; p < pools; ++p) {
    const int base = p * pool_size;
    Eigen::MatrixXd sim(pool_size, pool_size);
    for (int i = 0; i < pool_size; ++i) {
      for (int j = 0; j < pool_size; ++j) sim(i, j) = cosine(image_emb.row(base + i), text_emb.row(base + j));
    }
    for (int i = 0; i < pool_size; ++i) {
      int above_row = 0, above_col = 0;
      for (int j = 0; j < pool_size; ++j) {
        if (sim(i, j) > sim(i, i)) ++above_row;
        if (sim(j, i) > sim(i, i)) ++above_col;
      }
      hits_it += above_row < k ? 1 : 0;
      hits_ti += above_col < k ? 1 : 0;
    }
  }
  const double queries = static_cast<double>(pools) * pool_size;
  r.image_to_text = static_cast<double>(hits_it) / queries;
  r.text_to_image = static_cast<double>(hits_ti) / queries;
  r.pools = pools;
  return r;
}

struct PairedEmbeddings {
  FeatureMatrix image, text;
};

// Image payload and text span are encoded in separate forward passes so
// neither modality sees the other.
template <typename T>
PairedEmbeddings embed_pairs(const Model<T>& model, std::span<const std::vector<TokenId>> images,
                             std::span<const std::vector<TokenId>> texts, int layer) {
  require(images.size() == texts.size(), "embed_pairs: size mismatch");
  const auto& cfg = model.config();
  require(layer >= 0 && layer <= cfg.layers, "embed_pairs: layer out of range");
  PairedEmbeddings e;
  e.image.resize(static_cast<Eigen::Index>(images.size()), cfg.model_dim);
  e.text.resize(static_cast<Eigen::Index>(images.size()), cfg.model_dim);
  Activations<T> acts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto iseq = image_prompt(images[i], cfg.vocab);
    model.forward(iseq.ids, build_attention_mask(iseq, cfg.attention), acts);
    e.image.row(static_cast<Eigen::Index>(i)) = extract_embedding(acts.out, layer, iseq.image_payload()).template cast<double>();
    const auto tseq = assemble_text_only(texts[i], cfg.max_len, cfg.vocab);
    model.forward(tseq.ids, build_attention_mask(tseq, cfg.attention), acts);
    e.text.row(static_cast<Eigen::Index>(i)) = extract_embedding(acts.out, layer, tseq.text_span).template cast<double>();
  }
  return e;
}

template <typename T>
RetrievalRecall retrieve(const Model<T>& model, std::span<const std::vector<TokenId>> images,
                         std::span<const std::vector<TokenId>> texts, int pool_size, int k, int layer) {
  require(static_cast<int>(images.size()) >= pool_size, "retrieve: pool larger than sample count");
  const auto e = embed_pairs(model, images, texts, layer);
  return retrieval_recall(e.image, e.text, pool_size, k);
}

// Findings present in at least ceil(k/2) of the k views.
inline FindingSet consolidate_findings(std::span<const FindingSet> views) {
  std::map<Finding, int> votes;
  for (const auto& v : views) {
    for (const auto& f : v) ++votes[f];
  }
  const int need = static_cast<int>((views.size() + 1) / 2);
  FindingSet out;
  for (const auto& [f, n] : votes) {
    if (n >= need) out.insert(f);
  }
  return out;
}

struct TtaResult {
  std::vector<std::string> reports;
  std::vector<FindingSet> view_findings;
  FindingSet consolidated;
  double consolidated_f1 = 0.0;
  double mean_view_f1 = 0.0;
};

template <typename T>
TtaResult tta_generate(const Model<T>& model, std::span<const TokenId> image_tokens, const FindingSet& truth,
                       const TtaPartition& part, int max_tokens, const TextTokenizer& tok) {
  const auto& vocab = model.config().vocab;
  const auto seq = image_prompt(image_tokens, vocab);
  TtaResult res;
  double f1_sum = 0.0;
  for (int v = 0; v < part.k; ++v) {
    const auto rec = apply_tta_view(seq, part, v, vocab);
    res.reports.push_back(generate_report(model, rec.corrupted_ids, seq.image_payload(), max_tokens, tok));
    res.view_findings.push_back(parse_report(res.reports.back()).findings);
    f1_sum += finding_f1(res.view_findings.back(), truth);
  }
  res.consolidated = consolidate_findings(res.view_findings);
  res.consolidated_f1 = finding_f1(res.consolidated, truth);
  res.mean_view_f1 = f1_sum / part.k;
  return res;
}

}  // namespace cxmx
