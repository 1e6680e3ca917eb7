#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace contrastgeo {

/// Token inventory with the four reserved specials at fixed ids.
/// Construction is deterministic: tokens rank by frequency, ties break
/// lexicographically.
struct Vocabulary {
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kSpecialCount = 4;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, std::size_t> token_to_id;

  std::size_t size() const { return id_to_token.size(); }
  bool operator==(const Vocabulary& other) const {
    return id_to_token == other.id_to_token;
  }
};

/// Lowercased whitespace-and-punctuation word split; UTF-8 bytes above ASCII
/// are kept as word characters.
std::vector<std::string> word_tokens(const std::string& text);

Vocabulary build_vocab(const std::vector<std::string>& corpus,
                       std::size_t max_size = 8192);

/// [CLS] + body ids truncated to max_len total; unseen tokens map to UNK.
std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab,
                                  std::size_t max_len);

}  // namespace contrastgeo
