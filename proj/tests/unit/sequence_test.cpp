#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cxmx/sequence.hpp"

using namespace cxmx;

namespace {

std::vector<TokenId> image_ids(const VocabLayout& v, int n) {
  std::vector<TokenId> ids;
  for (int i = 0; i < n; ++i) ids.push_back(v.image_token(i % v.image_size));
  return ids;
}

std::vector<TokenId> text_ids(const VocabLayout& v, int n) {
  std::vector<TokenId> ids;
  for (int i = 0; i < n; ++i) ids.push_back(i % v.text_size);
  return ids;
}

}  // namespace

TEST(Assemble, ImageFirstLayout) {
  const VocabLayout v;
  const auto img = image_ids(v, 64);
  const auto txt = text_ids(v, 20);
  const auto seq = assemble(img, txt, true, 100, v);
  ASSERT_EQ(seq.size(), 87);
  EXPECT_EQ(seq.ids[0], v.img_start());
  EXPECT_TRUE(std::equal(img.begin(), img.end(), seq.ids.begin() + 1));
  EXPECT_EQ(seq.ids[65], v.img_end());
  EXPECT_EQ(seq.ids[66], v.txt_start());
  EXPECT_TRUE(std::equal(txt.begin(), txt.end(), seq.ids.begin() + 67));
  EXPECT_EQ(seq.image_span, (Span{0, 66}));
  EXPECT_EQ(seq.text_span, (Span{66, 87}));
  EXPECT_EQ(seq.image_payload(), (Span{1, 65}));
  EXPECT_EQ(seq.text_payload(), (Span{67, 87}));
}

TEST(Assemble, TextFirstLayout) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 20), false, 100, v);
  EXPECT_EQ(seq.ids[0], v.txt_start());
  EXPECT_EQ(seq.text_span, (Span{0, 21}));
  EXPECT_EQ(seq.image_span, (Span{21, 87}));
  EXPECT_EQ(seq.ids[21], v.img_start());
  EXPECT_EQ(seq.ids[86], v.img_end());
}

TEST(Assemble, TruncatesTextOnly) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 20), true, 70, v);
  EXPECT_EQ(seq.size(), 70);
  EXPECT_EQ(seq.text_payload().size(), 3);
  EXPECT_EQ(seq.image_payload().size(), 64);
}

TEST(Assemble, LargeScaleCap) {
  const VocabLayout v{64, 1024};
  const auto seq = assemble(image_ids(v, 1024), text_ids(v, 270), true, 1300, v);
  EXPECT_EQ(seq.size(), 1297);
  const auto capped = assemble(image_ids(v, 1024), text_ids(v, 280), true, 1300, v);
  EXPECT_EQ(capped.size(), 1300);
  EXPECT_EQ(capped.image_payload().size(), 1024);
  EXPECT_EQ(capped.text_payload().size(), 273);
}

TEST(Assemble, RejectsBadInput) {
  const VocabLayout v;
  EXPECT_THROW(assemble(image_ids(v, 64), text_ids(v, 5), true, 66, v), ValidationError);
  EXPECT_THROW(assemble(text_ids(v, 4), text_ids(v, 5), true, 100, v), ValidationError);
  EXPECT_THROW(assemble(image_ids(v, 4), image_ids(v, 5), true, 100, v), ValidationError);
}

TEST(Assemble, TextOnly) {
  const VocabLayout v;
  const auto seq = assemble_text_only(text_ids(v, 10), 132, v);
  EXPECT_EQ(seq.size(), 11);
  EXPECT_EQ(seq.ids[0], v.txt_start());
  EXPECT_TRUE(seq.image_span.empty());
  EXPECT_EQ(seq.text_span, (Span{0, 11}));
}

TEST(Corrupt, ZeroRatioIsIdentity) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 20), true, 132, v);
  const auto rec = corrupt(seq, 0.0, 5, v);
  EXPECT_TRUE(rec.masked_positions.empty());
  EXPECT_TRUE(rec.loss_positions.empty());
  EXPECT_EQ(rec.corrupted_ids, seq.ids);
}

TEST(Corrupt, WorkedThreeTokenCase) {
  const VocabLayout v;
  const std::vector<TokenId> ids = {3, 7, 11};  // t1 t2 t3
  const auto rec = corrupt_at(ids, {1}, LossRule::follow_mask, v);
  EXPECT_EQ(rec.corrupted_ids, (std::vector<TokenId>{3, v.mask(), 11}));
  EXPECT_EQ(rec.loss_positions, std::vector<int>{2});
  EXPECT_EQ(corrupt_at(ids, {1}, LossRule::at_mask, v).loss_positions, std::vector<int>{1});
  EXPECT_TRUE(corrupt_at(ids, {2}, LossRule::follow_mask, v).loss_positions.empty());
  EXPECT_TRUE(corrupt_at(ids, {0}, LossRule::at_mask, v).loss_positions.empty());
}

TEST(Corrupt, ExhaustiveLossPositionOracle) {
  for (int n = 1; n <= 6; ++n) {
    for (int bits = 0; bits < (1 << n); ++bits) {
      std::vector<int> masked;
      for (int i = 0; i < n; ++i) {
        if (bits >> i & 1) masked.push_back(i);
      }
      std::vector<int> follow, at;
      for (int i = 0; i < n; ++i) {
        if (i >= 1 && (bits >> (i - 1) & 1)) follow.push_back(i);
        if (i >= 1 && (bits >> i & 1)) at.push_back(i);
      }
      EXPECT_EQ(loss_positions_for(masked, n, LossRule::follow_mask), follow);
      EXPECT_EQ(loss_positions_for(masked, n, LossRule::at_mask), at);
    }
  }
}

TEST(Corrupt, CountSpecialsAndDeterminism) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 40), false, 132, v);
  const int non_special = 104;
  for (double r : {0.1, 0.25, 0.5, 0.9, 1.0}) {
    const auto rec = corrupt(seq, r, 17, v);
    EXPECT_EQ(static_cast<int>(rec.masked_positions.size()), masked_count(r, non_special));
    for (int m : rec.masked_positions) EXPECT_FALSE(v.is_special(seq.ids[static_cast<std::size_t>(m)]));
    for (int i = 0; i < seq.size(); ++i) {
      if (v.is_special(seq.ids[static_cast<std::size_t>(i)])) {
        EXPECT_EQ(rec.corrupted_ids[static_cast<std::size_t>(i)], seq.ids[static_cast<std::size_t>(i)]);
      }
    }
    EXPECT_EQ(corrupt(seq, r, 17, v).masked_positions, rec.masked_positions);
  }
  EXPECT_NE(corrupt(seq, 0.5, 1, v).masked_positions, corrupt(seq, 0.5, 2, v).masked_positions);
  EXPECT_THROW(corrupt(seq, 1.5, 0, v), ValidationError);
  EXPECT_THROW(corrupt(seq, -0.1, 0, v), ValidationError);
}

TEST(Corrupt, ImageOnlyCorruption) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 40), true, 132, v);
  const auto rec = corrupt_image(seq, 0.6, 3, v);
  EXPECT_EQ(rec.masked_positions.size(), 38u);
  for (int m : rec.masked_positions) EXPECT_TRUE(seq.image_payload().contains(m));
  EXPECT_TRUE(rec.loss_positions.empty());
}

TEST(TtaPartition, SixtyFourIntoFive) {
  const auto part = make_tta_partition(64, 5, 8);
  std::multiset<std::size_t> sizes;
  std::set<int> all;
  std::size_t total = 0;
  for (const auto& s : part.subsets) {
    sizes.insert(s.size());
    total += s.size();
    all.insert(s.begin(), s.end());
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  }
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{12, 13, 13, 13, 13}));
  EXPECT_EQ(total, 64u);
  EXPECT_EQ(all.size(), 64u);
  EXPECT_EQ(*all.rbegin(), 63);
}

TEST(TtaPartition, SingleSubsetAndErrors) {
  const auto part = make_tta_partition(10, 1, 0);
  ASSERT_EQ(part.subsets.size(), 1u);
  EXPECT_EQ(part.subsets[0].size(), 10u);
  EXPECT_THROW(make_tta_partition(4, 5, 0), ValidationError);
  EXPECT_THROW(make_tta_partition(4, 0, 0), ValidationError);
}

TEST(TtaPartition, LargeGridHidesAboutAFifth) {
  const auto part = make_tta_partition(1024, 5, 1);
  for (const auto& s : part.subsets) EXPECT_NEAR(static_cast<double>(s.size()) / 1024, 0.2, 0.001);
}

TEST(TtaView, MaskAndKeepModes) {
  const VocabLayout v;
  const auto seq = assemble(image_ids(v, 64), text_ids(v, 30), true, 132, v);
  const auto payload = seq.image_payload();
  for (TtaMode mode : {TtaMode::mask_subset, TtaMode::keep_subset}) {
    const auto part = make_tta_partition(64, 5, 2, mode);
    std::set<int> union_masked;
    for (int k = 0; k < 5; ++k) {
      const auto rec = apply_tta_view(seq, part, k, v);
      EXPECT_TRUE(rec.loss_positions.empty());
      for (int i = seq.text_span.begin; i < seq.text_span.end; ++i) EXPECT_EQ(rec.corrupted_ids[static_cast<std::size_t>(i)], seq.ids[static_cast<std::size_t>(i)]);
      const auto& sub = part.subsets[static_cast<std::size_t>(k)];
      if (mode == TtaMode::mask_subset) {
        EXPECT_EQ(rec.masked_positions.size(), sub.size());
      } else {
        const auto visible = 64 - rec.masked_positions.size();
        EXPECT_TRUE(visible == 12 || visible == 13);
        EXPECT_EQ(visible, sub.size());
      }
      for (int m : rec.masked_positions) EXPECT_TRUE(payload.contains(m));
      union_masked.insert(rec.masked_positions.begin(), rec.masked_positions.end());
    }
    EXPECT_EQ(union_masked.size(), 64u);
    EXPECT_THROW(apply_tta_view(seq, part, 5, v), ValidationError);
  }
  const auto whole = apply_tta_view(seq, make_tta_partition(64, 1, 0), 0, v);
  EXPECT_EQ(whole.masked_positions.size(), 64u);
}
