#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cxmx/training.hpp"

using namespace cxmx;

namespace {

ModelConfig tiny(int max_len = 24) {
  ModelConfig c;
  c.layers = 1;
  c.model_dim = 8;
  c.heads = 2;
  c.vocab = VocabLayout{64, 16};
  c.max_len = max_len;
  return c;
}

TrainData tiny_data(const VocabLayout& v, int n, std::uint64_t seed) {
  TrainData d;
  Rng rng = make_rng(seed);
  for (int i = 0; i < n; ++i) {
    std::vector<TokenId> img, txt;
    for (int k = 0; k < 4; ++k) img.push_back(v.image_token(static_cast<int>(uniform_index(rng, 16))));
    for (int k = 0; k < 6; ++k) txt.push_back(static_cast<TokenId>(uniform_index(rng, 40)));
    d.image_tokens.push_back(img);
    d.text_tokens.push_back(txt);
  }
  return d;
}

// log-sum-exp written per row without Eigen reductions.
double oracle_nll(const RowMat<double>& logits, int row, TokenId target) {
  double mx = logits(row, 0);
  for (Eigen::Index j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(row, j));
  double z = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(row, j) - mx);
  return mx + std::log(z) - logits(row, target);
}

}  // namespace

TEST(Stage1Loss, UniformLogitsGiveLogVocab) {
  Model<double> model(tiny(), 0);
  std::fill(model.params().begin(), model.params().end(), 0.0);
  const auto& v = model.config().vocab;
  const auto seq = assemble(std::vector<TokenId>{v.image_token(1), v.image_token(2)}, std::vector<TokenId>{5, 6}, true, 24, v);
  EXPECT_NEAR(stage1_loss(model, seq).loss, std::log(v.total()), 1e-12);
}

TEST(Stage1Loss, LengthTwoAndOracle) {
  const Model<double> model(tiny(), 3);
  const auto& v = model.config().vocab;
  TokenSequence two;
  two.ids = {4, 9};
  const auto out2 = model.forward(two.ids, build_attention_mask(two, AttentionVariant::causal));
  EXPECT_NEAR(stage1_loss(model, two).loss, oracle_nll(out2.logits, 0, 9), 1e-12);

  const auto seq = assemble(std::vector<TokenId>{v.image_token(3), v.image_token(0), v.image_token(7)},
                            std::vector<TokenId>{1, 2, 3, 4}, false, 24, v);
  const auto out = model.forward(seq.ids, build_attention_mask(seq, AttentionVariant::causal));
  double sum = 0;
  for (int i = 1; i < seq.size(); ++i) sum += oracle_nll(out.logits, i - 1, seq.ids[static_cast<std::size_t>(i)]);
  const auto lv = stage1_loss(model, seq);
  EXPECT_EQ(lv.count, seq.size() - 1);
  EXPECT_NEAR(lv.loss, sum / (seq.size() - 1), 1e-12);

  TokenSequence one;
  one.ids = {4};
  EXPECT_THROW(stage1_loss(model, one), ValidationError);
}

TEST(Stage1Loss, PadTargetsExcluded) {
  const VocabLayout v{64, 16};
  const std::vector<TokenId> ids = {1, 2, v.pad(), 3, v.pad()};
  const auto t = stage1_targets(ids, v);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].row, 0);
  EXPECT_EQ(t[1].row, 2);
}

TEST(Stage2Loss, WorkedCaseSingleTerm) {
  const Model<double> model(tiny(), 5);
  const auto& v = model.config().vocab;
  TokenSequence seq;
  seq.ids = {10, 11, 12};
  const auto rec = corrupt_at(seq.ids, {1}, LossRule::follow_mask, v);
  const auto out = model.forward(rec.corrupted_ids, build_attention_mask(seq, AttentionVariant::causal));
  const auto lv = stage2_loss(model, rec, seq);
  EXPECT_EQ(lv.count, 1);
  EXPECT_NEAR(lv.loss, oracle_nll(out.logits, 1, 12), 1e-12);
  EXPECT_THROW(stage2_loss(model, corrupt_at(seq.ids, {2}, LossRule::follow_mask, v), seq), ValidationError);
}

TEST(Stage2Loss, AtMaskMatchesLiteralSum) {
  const Model<double> model(tiny(), 6);
  const auto& v = model.config().vocab;
  const auto seq = assemble(std::vector<TokenId>{v.image_token(2), v.image_token(9)}, std::vector<TokenId>{7, 8, 9}, true, 24, v);
  const auto rec = corrupt_at(seq.ids, {1, 2, 6}, LossRule::at_mask, v);
  const auto out = model.forward(rec.corrupted_ids, build_attention_mask(seq, AttentionVariant::causal));
  double sum = 0;
  for (int m : {1, 2, 6}) sum += oracle_nll(out.logits, m - 1, seq.ids[static_cast<std::size_t>(m)]);
  EXPECT_NEAR(stage2_loss(model, rec, seq).loss, sum / 3, 1e-12);
}

TEST(Stage2Loss, CountedPositionsFollowRatio) {
  const VocabLayout v{64, 16};
  const auto seq = assemble(std::vector<TokenId>(16, v.image_token(0)), std::vector<TokenId>(20, 3), true, 64, v);
  for (double r : {0.1, 0.3, 0.5, 0.8}) {
    const auto rec = corrupt(seq, r, 3, v);
    const int expect = masked_count(r, 36);
    EXPECT_LE(static_cast<int>(rec.loss_positions.size()), expect);
    // Only a mask on the final token loses its follower.
    EXPECT_GE(static_cast<int>(rec.loss_positions.size()), expect - 1);
  }
}

TEST(Stage2Loss, CountedTermsEqualStage1TermsWhenContextUnchanged) {
  // Masking the last token leaves every earlier row's input untouched.
  const Model<double> model(tiny(), 8);
  const auto& v = model.config().vocab;
  const auto seq = assemble(std::vector<TokenId>{v.image_token(1)}, std::vector<TokenId>{3, 4, 5}, true, 24, v);
  const int last = seq.size() - 1;
  const auto rec = corrupt_at(seq.ids, {last}, LossRule::at_mask, v);
  const auto out = model.forward(seq.ids, build_attention_mask(seq, AttentionVariant::causal));
  EXPECT_NEAR(stage2_loss(model, rec, seq).loss, oracle_nll(out.logits, last - 1, seq.ids.back()), 1e-12);
}

TEST(Optimizer, ClipToUnitNorm) {
  ParamVector<double> g = {6.0, 8.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 10.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 1.0, 1e-15);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  ParamVector<double> small = {0.3, 0.4};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small, (ParamVector<double>{0.3, 0.4}));
}

TEST(Optimizer, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 3e-4), 3e-4);
  EXPECT_NEAR(cosine_lr(50, 100, 3e-4), 1.5e-4, 1e-18);
  EXPECT_EQ(cosine_lr(100, 100, 3e-4), 0.0);
  for (int s = 1; s < 100; ++s) EXPECT_LE(cosine_lr(s, 100, 1.0), cosine_lr(s - 1, 100, 1.0));
}

TEST(Optimizer, DecayOnlyOnFlaggedTensors) {
  const ModelConfig cfg = tiny();
  Model<double> model(cfg, 1);
  const auto before = model.params();
  AdamW<double> opt(model.layout(), {0.9, 0.98, 1e-6, 0.5});
  const ParamVector<double> zero(before.size(), 0.0);
  opt.step(model.params(), zero, 0.1);
  for (const auto& t : model.layout().tensors()) {
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      if (t.decay) {
        EXPECT_DOUBLE_EQ(model.params()[i], before[i] * (1 - 0.1 * 0.5)) << t.name;
      } else {
        EXPECT_EQ(model.params()[i], before[i]) << t.name;
      }
    }
  }
}

TEST(Optimizer, FirstAdamStepMovesByLr) {
  const ModelConfig cfg = tiny();
  Model<double> model(cfg, 1);
  const auto before = model.params();
  AdamW<double> opt(model.layout(), {0.9, 0.98, 0.0, 0.0});
  ParamVector<double> g(before.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = i % 2 ? 0.25 : -3.0;
  opt.step(model.params(), g, 0.01);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(model.params()[i] - before[i], g[i] > 0 ? -0.01 : 0.01, 1e-12);
}

TEST(Train, StageTwoNeedsInit) {
  TrainConfig cfg;
  cfg.stage = Stage::s2;
  EXPECT_THROW(check_stage_init(cfg, false), ValidationError);
  EXPECT_NO_THROW(check_stage_init(cfg, true));
  cfg.allow_scratch = true;
  EXPECT_NO_THROW(check_stage_init(cfg, false));
  cfg.stage = Stage::s1;
  cfg.allow_scratch = false;
  EXPECT_NO_THROW(check_stage_init(cfg, false));
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.steps = 10;
  cfg.stage = Stage::s2;
  cfg.mask_ratio = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Train, OrderingCoinIsFair) {
  const VocabLayout v{64, 16};
  const auto data = tiny_data(v, 50, 1);
  TrainConfig cfg;
  cfg.context_cap = 24;
  int image_first = 0;
  for (int step = 0; step < 2500; ++step) {
    for (int e = 0; e < 4; ++e) image_first += make_step_example(cfg, data, v, step, e).seq.image_first ? 1 : 0;
  }
  const double frac = image_first / 10000.0;
  EXPECT_GE(frac, 0.48);
  EXPECT_LE(frac, 0.52);
}

TEST(Train, BitIdenticalReplay) {
  const ModelConfig mc = tiny();
  const auto data = tiny_data(mc.vocab, 12, 2);
  for (Stage stage : {Stage::s1, Stage::s2}) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.steps = 15;
    cfg.seed = 9;
    cfg.context_cap = 24;
    Model<float> a(mc, 4), b(mc, 4);
    const auto la = train(a, cfg, data);
    const auto lb = train(b, cfg, data);
    EXPECT_EQ(a.params(), b.params());
    ASSERT_EQ(la.size(), 15u);
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss);
    EXPECT_EQ(la.back().lr, cosine_lr(14, 15, cfg.lr_peak));
  }
}

TEST(Train, LossFallsOnTinyFixture) {
  const ModelConfig mc = tiny();
  const auto data = tiny_data(mc.vocab, 2, 3);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.lr_peak = 1e-2;
  cfg.context_cap = 24;
  Model<float> m(mc, 1);
  const auto log = train(m, cfg, data);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += log[static_cast<std::size_t>(i)].loss;
    last += log[log.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(Train, CheckpointHookCadence) {
  const ModelConfig mc = tiny();
  const auto data = tiny_data(mc.vocab, 4, 3);
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.checkpoint_every = 3;
  cfg.context_cap = 24;
  Model<float> m(mc, 1);
  std::vector<std::int64_t> seen;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::int64_t s, const ParamVector<float>&) { seen.push_back(s); };
  train(m, cfg, data, hooks);
  EXPECT_EQ(seen, (std::vector<std::int64_t>{3, 6, 9}));
}
