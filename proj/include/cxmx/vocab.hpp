#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxmx/common.hpp"

namespace cxmx {

using TokenId = std::int32_t;

enum class TokenCategory { text, image, special };

enum class Special : int { img_start = 0, img_end = 1, txt_start = 2, mask = 3, pad = 4 };

inline constexpr int kSpecialCount = 5;

// Unified id space: [text block | image block | IMG_START IMG_END TXT_START MASK PAD].
struct VocabLayout {
  int text_size = 64;
  int image_size = 256;

  constexpr int total() const { return text_size + image_size + kSpecialCount; }
  constexpr TokenId image_offset() const { return text_size; }
  constexpr TokenId special(Special s) const {
    return text_size + image_size + static_cast<int>(s);
  }
  constexpr TokenId img_start() const { return special(Special::img_start); }
  constexpr TokenId img_end() const { return special(Special::img_end); }
  constexpr TokenId txt_start() const { return special(Special::txt_start); }
  constexpr TokenId mask() const { return special(Special::mask); }
  constexpr TokenId pad() const { return special(Special::pad); }

  constexpr bool valid(TokenId id) const { return id >= 0 && id < total(); }
  constexpr bool is_text(TokenId id) const { return id >= 0 && id < text_size; }
  constexpr bool is_image(TokenId id) const {
    return id >= text_size && id < text_size + image_size;
  }
  constexpr bool is_special(TokenId id) const {
    return id >= text_size + image_size && id < total();
  }

  TokenCategory category(TokenId id) const {
    require(valid(id), "token id " + std::to_string(id) + " outside vocabulary");
    if (is_text(id)) return TokenCategory::text;
    if (is_image(id)) return TokenCategory::image;
    return TokenCategory::special;
  }

  TokenId image_token(int code) const {
    require(code >= 0 && code < image_size, "image code out of range");
    return image_offset() + code;
  }
  int code_of(TokenId id) const {
    require(is_image(id), "not an image token: " + std::to_string(id));
    return id - image_offset();
  }

  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

// Character-level tokenizer over the report grammar's alphabet.
class TextTokenizer {
 public:
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 :;.";

  explicit TextTokenizer(VocabLayout vocab = {}) : vocab_(vocab) {
    require(static_cast<int>(kAlphabet.size()) <= vocab.text_size,
            "text block too small for the alphabet");
    index_.fill(-1);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
      index_[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
    }
  }

  const VocabLayout& vocab() const { return vocab_; }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (char c : text) {
      const int id = index_[static_cast<unsigned char>(c)];
      if (id < 0) {
        throw ValidationError(std::string("character '") + c + "' not in tokenizer alphabet");
      }
      ids.push_back(id);
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
      require(id >= 0 && id < static_cast<TokenId>(kAlphabet.size()),
              "text id " + std::to_string(id) + " has no character");
      out.push_back(kAlphabet[static_cast<std::size_t>(id)]);
    }
    return out;
  }

  // Ids in the text block that map to a character.
  int used_ids() const { return static_cast<int>(kAlphabet.size()); }

 private:
  VocabLayout vocab_;
  std::array<int, 256> index_{};
};

}  // namespace cxmx
