#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/model.hpp"
#include "cxmx/sequence.hpp"

namespace cxmx {

// Logits row `row` is scored against `target` (the token at row + 1).
struct LossTarget {
  int row = 0;
  TokenId target = 0;
};

struct LossValue {
  double loss = 0.0;  // mean nats per counted position
  int count = 0;
};

// Next-token targets for every position after the first, PAD excluded.
inline std::vector<LossTarget> stage1_targets(std::span<const TokenId> ids, const VocabLayout& vocab) {
  std::vector<LossTarget> out;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] != vocab.pad()) out.push_back({static_cast<int>(i) - 1, ids[i]});
  }
  return out;
}

// Targets at the record's loss positions, read from the uncorrupted sequence.
inline std::vector<LossTarget> stage2_targets(const CorruptionRecord& rec, const TokenSequence& original) {
  std::vector<LossTarget> out;
  out.reserve(rec.loss_positions.size());
  for (int p : rec.loss_positions) out.push_back({p - 1, original.ids[static_cast<std::size_t>(p)]});
  return out;
}

// Sum of -log softmax(logits[row])[target]; optionally writes
// grad_scale * d(sum)/d(logits) into `dlogits`.
template <typename T>
double cross_entropy_sum(const RowMat<T>& logits, std::span<const LossTarget> targets, T grad_scale,
                         RowMat<T>* dlogits) {
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (const auto& t : targets) {
    const auto row = logits.row(t.row);
    const T mx = row.maxCoeff();
    const auto shifted = (row.array() - mx).exp();
    const T z = shifted.sum();
    total += static_cast<double>(std::log(z) + mx - row(t.target));
    if (dlogits) {
      dlogits->row(t.row) = (shifted / z * grad_scale).matrix();
      (*dlogits)(t.row, t.target) -= grad_scale;
    }
  }
  return total;
}

// One forward/backward over `ids`; gradient of grad_scale * (summed loss) is
// accumulated into `grad` when given. Returns the summed loss.
template <typename T>
double accumulate_loss(const Model<T>& model, std::span<const TokenId> ids, const AttentionMask& mask,
                       std::span<const LossTarget> targets, T grad_scale, ParamVector<T>* grad,
                       Activations<T>& acts) {
  model.forward(ids, mask, acts);
  if (!grad) return cross_entropy_sum<T>(acts.out.logits, targets, grad_scale, nullptr);
  RowMat<T> dlogits;
  const double sum = cross_entropy_sum<T>(acts.out.logits, targets, grad_scale, &dlogits);
  model.backward(acts, dlogits, *grad);
  return sum;
}

// Mean next-token cross-entropy over positions 2..N.
template <typename T>
LossValue stage1_loss(const Model<T>& model, const TokenSequence& seq, ParamVector<T>* grad = nullptr) {
  require(seq.size() >= 2, "stage1_loss: sequence must have at least 2 tokens");
  const auto targets = stage1_targets(seq.ids, model.config().vocab);
  require(!targets.empty(), "stage1_loss: no countable positions");
  const auto mask = build_attention_mask(seq, model.config().attention);
  Activations<T> acts;
  const T scale = T(1) / static_cast<T>(targets.size());
  const double sum = accumulate_loss<T>(model, seq.ids, mask, targets, scale, grad, acts);
  return {sum / static_cast<double>(targets.size()), static_cast<int>(targets.size())};
}

// Mean cross-entropy at the record's loss positions, forward pass on the
// corrupted ids.
template <typename T>
LossValue stage2_loss(const Model<T>& model, const CorruptionRecord& rec, const TokenSequence& original,
                      ParamVector<T>* grad = nullptr) {
  require(rec.corrupted_ids.size() == original.ids.size(), "stage2_loss: record/sequence length mismatch");
  require(!rec.loss_positions.empty(), "stage2_loss: empty loss positions (resample the corruption)");
  const auto targets = stage2_targets(rec, original);
  const auto mask = build_attention_mask(original, model.config().attention);
  Activations<T> acts;
  const T scale = T(1) / static_cast<T>(targets.size());
  const double sum = accumulate_loss<T>(model, rec.corrupted_ids, mask, targets, scale, grad, acts);
  return {sum / static_cast<double>(targets.size()), static_cast<int>(targets.size())};
}

inline double cosine_lr(std::int64_t step, std::int64_t total, double peak) {
  if (total <= 0 || step >= total) return 0.0;
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

// Scales `grad` in place so its global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(ParamVector<T>& grad, double max_norm) {
  double sq = 0.0;
  for (T g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (T& g : grad) g *= s;
  }
  return norm;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.1;
};

// AdamW with decoupled weight decay applied only to tensors flagged `decay`.
template <typename T>
class AdamW {
 public:
  AdamW(const ParameterLayout& layout, AdamWOptions opts)
      : opts_(opts), m_(layout.total(), T(0)), v_(layout.total(), T(0)) {
    decay_mask_.assign(layout.total(), 0);
    for (const auto& t : layout.tensors()) {
      if (t.decay) std::fill_n(decay_mask_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1);
    }
  }

  void step(ParamVector<T>& params, const ParamVector<T>& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1);
    const T b2 = static_cast<T>(opts_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(opts_.eps);
    const T decay = static_cast<T>(lr * opts_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grad[i] * grad[i];
      if (decay_mask_[i]) params[i] -= decay * params[i];
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) * inv_sqrt_bc2 + eps);
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  AdamWOptions opts_;
  ParamVector<T> m_, v_;
  std::vector<char> decay_mask_;
  std::int64_t t_ = 0;
};

enum class Stage { s1, s2 };

struct TrainConfig {
  Stage stage = Stage::s1;
  double mask_ratio = 0.5;
  double lr_peak = 3e-4;
  AdamWOptions adam;
  double clip_norm = 1.0;
  int batch_size = 4;
  int grad_accum = 1;
  std::int64_t steps = 1000;
  std::uint64_t seed = 0;
  LossRule loss_rule = LossRule::follow_mask;
  int context_cap = 132;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  bool allow_scratch = false;

  void validate() const {
    require(steps > 0, "train: steps must be positive");
    require(batch_size >= 1 && grad_accum >= 1, "train: batch_size and grad_accum must be >= 1");
    if (stage == Stage::s2) {
      require(mask_ratio > 0.0 && mask_ratio <= 1.0, "train: stage s2 needs mask_ratio in (0,1]");
    }
  }
};

// Stage 2 continues from a stage-1 checkpoint unless explicitly overridden.
inline void check_stage_init(const TrainConfig& cfg, bool has_init) {
  if (cfg.stage == Stage::s2 && !has_init && !cfg.allow_scratch) {
    throw ValidationError(
        "stage s2 must be initialised from a stage-1 checkpoint (pass --init, or --allow-scratch to override)");
  }
}

// Pre-tokenized training pairs.
struct TrainData {
  std::vector<std::vector<TokenId>> image_tokens;
  std::vector<std::vector<TokenId>> text_tokens;

  std::size_t size() const { return image_tokens.size(); }
};

struct TrainRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  int counted = 0;
  double wall_seconds = 0.0;
};

struct StepExample {
  TokenSequence seq;
  CorruptionRecord corruption;  // stage s2 only
  std::vector<LossTarget> targets;
};

// Example e of step `step`: sample index, ordering coin and corruption seed
// all derive from (seed, step, e).
inline StepExample make_step_example(const TrainConfig& cfg, const TrainData& data, const VocabLayout& vocab,
                                     std::int64_t step, int e) {
  const auto s = static_cast<std::uint64_t>(step);
  const auto ue = static_cast<std::uint64_t>(e);
  const auto idx = static_cast<std::size_t>(derive_seed(cfg.seed, s, ue, 0) % data.size());
  const bool image_first = (derive_seed(cfg.seed, s, ue, 1) & 1u) != 0;
  StepExample ex;
  ex.seq = assemble(data.image_tokens[idx], data.text_tokens[idx], image_first, cfg.context_cap, vocab,
                    static_cast<std::int64_t>(idx));
  if (cfg.stage == Stage::s1) {
    ex.targets = stage1_targets(ex.seq.ids, vocab);
  } else {
    for (std::uint64_t attempt = 0;; ++attempt) {
      ex.corruption = corrupt(ex.seq, cfg.mask_ratio, derive_seed(cfg.seed, s, ue, 2 + attempt), vocab, cfg.loss_rule);
      if (!ex.corruption.loss_positions.empty()) break;
      require(attempt < 64, "train: could not draw a corruption with loss positions");
    }
    ex.targets = stage2_targets(ex.corruption, ex.seq);
  }
  return ex;
}

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_step;
  std::function<void(std::int64_t, const ParamVector<float>&)> on_checkpoint;
};

// AdamW + cosine decay + global-norm clipping. Loss per step is the mean over
// every counted position of the batch_size * grad_accum examples.
template <typename T>
std::vector<TrainRecord> train(Model<T>& model, const TrainConfig& cfg, const TrainData& data,
                               const TrainHooks& hooks = {}) {
  cfg.validate();
  require(data.size() > 0, "train: empty dataset");
  const auto& vocab = model.config().vocab;
  AdamW<T> opt(model.layout(), cfg.adam);
  ParamVector<T> grad(model.params().size());
  std::vector<TrainRecord> log;
  log.reserve(static_cast<std::size_t>(cfg.steps));
  Activations<T> acts;
  const auto start = std::chrono::steady_clock::now();
  const int per_step = cfg.batch_size * cfg.grad_accum;

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<StepExample> batch;
    batch.reserve(static_cast<std::size_t>(per_step));
    std::size_t counted = 0;
    for (int e = 0; e < per_step; ++e) {
      batch.push_back(make_step_example(cfg, data, vocab, step, e));
      counted += batch.back().targets.size();
    }
    require(counted > 0, "train: batch has no countable positions");
    std::fill(grad.begin(), grad.end(), T(0));
    const T scale = T(1) / static_cast<T>(counted);
    double loss_sum = 0.0;
    for (const auto& ex : batch) {
      const auto mask = build_attention_mask(ex.seq, model.config().attention);
      const auto& ids = cfg.stage == Stage::s1 ? ex.seq.ids : ex.corruption.corrupted_ids;
      loss_sum += accumulate_loss<T>(model, ids, mask, ex.targets, scale, &grad, acts);
    }
    const double loss = loss_sum / static_cast<double>(counted);
    const double norm = clip_grad_norm(grad, cfg.clip_norm);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      throw NumericalError("non-finite loss at step " + std::to_string(step) + " (loss=" + std::to_string(loss) +
                           ", grad_norm=" + std::to_string(norm) + ")");
    }
    const double lr = cosine_lr(step, cfg.steps, cfg.lr_peak);
    opt.step(model.params(), grad, lr);

    TrainRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.lr = lr;
    rec.grad_norm = norm;
    rec.counted = static_cast<int>(counted);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      if constexpr (std::is_same_v<T, float>) hooks.on_checkpoint(step + 1, model.params());
    }
  }
  return log;
}

}  // namespace cxmx
