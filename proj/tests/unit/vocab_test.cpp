#include <gtest/gtest.h>

#include "cxmx/common.hpp"
#include "cxmx/vocab.hpp"

using namespace cxmx;

TEST(VocabLayout, DefaultSizesAndSpecialOrder) {
  const VocabLayout v;
  EXPECT_EQ(v.total(), 325);
  EXPECT_EQ(v.img_start(), 320);
  EXPECT_EQ(v.img_end(), 321);
  EXPECT_EQ(v.txt_start(), 322);
  EXPECT_EQ(v.mask(), 323);
  EXPECT_EQ(v.pad(), 324);
}

TEST(VocabLayout, EveryIdHasExactlyOneCategory) {
  for (const VocabLayout v : {VocabLayout{}, VocabLayout{40, 16}, VocabLayout{64, 1}}) {
    for (TokenId id = 0; id < v.total(); ++id) {
      const int n = int(v.is_text(id)) + int(v.is_image(id)) + int(v.is_special(id));
      EXPECT_EQ(n, 1) << "id " << id;
    }
    EXPECT_FALSE(v.valid(-1));
    EXPECT_FALSE(v.valid(v.total()));
    EXPECT_THROW(v.category(v.total()), ValidationError);
  }
}

TEST(VocabLayout, ImageCodeRoundTrip) {
  const VocabLayout v;
  for (int c = 0; c < v.image_size; ++c) EXPECT_EQ(v.code_of(v.image_token(c)), c);
  EXPECT_THROW(v.image_token(256), ValidationError);
  EXPECT_THROW(v.code_of(3), ValidationError);
}

TEST(TextTokenizer, RoundTripOverAlphabet) {
  const TextTokenizer tok;
  const std::string all(TextTokenizer::kAlphabet);
  EXPECT_EQ(tok.decode(tok.encode(all)), all);

  Rng rng = make_rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const auto len = uniform_index(rng, 80);
    for (std::uint64_t i = 0; i < len; ++i) s.push_back(all[uniform_index(rng, all.size())]);
    const auto ids = tok.encode(s);
    for (TokenId id : ids) EXPECT_TRUE(tok.vocab().is_text(id));
    EXPECT_EQ(tok.decode(ids), s);
  }
}

TEST(TextTokenizer, RejectsCharactersOutsideAlphabet) {
  const TextTokenizer tok;
  EXPECT_THROW(tok.encode("Findings"), ValidationError);
  EXPECT_THROW(tok.encode("a,b"), ValidationError);
  EXPECT_THROW(tok.decode(std::vector<TokenId>{63}), ValidationError);
}

TEST(TextTokenizer, TextBlockMustHoldAlphabet) { EXPECT_THROW(TextTokenizer(VocabLayout{10, 256}), ValidationError); }
