#include "contrastgeo/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "contrastgeo/errors.hpp"

namespace contrastgeo {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (const char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t max_size) {
  if (corpus.empty()) throw DataError("build_vocab: corpus is empty");
  if (max_size <= Vocabulary::kSpecialCount) {
    throw ConfigError("build_vocab: max_size must exceed the 4 special tokens");
  }

  std::unordered_map<std::string, std::size_t> counts;
  for (const std::string& text : corpus) {
    for (std::string& token : word_tokens(text)) counts[std::move(token)] += 1;
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto& [token, count] : ranked) {
    (void)count;
    if (vocab.id_to_token.size() >= max_size) break;
    vocab.id_to_token.push_back(token);
  }
  for (std::size_t id = 0; id < vocab.id_to_token.size(); ++id) {
    vocab.token_to_id.emplace(vocab.id_to_token[id], id);
  }
  return vocab;
}

std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab,
                                  std::size_t max_len) {
  std::vector<std::size_t> ids{Vocabulary::kCls};
  for (const std::string& token : word_tokens(text)) {
    if (ids.size() >= max_len) break;
    const auto it = vocab.token_to_id.find(token);
    ids.push_back(it != vocab.token_to_id.end() ? it->second : Vocabulary::kUnk);
  }
  return ids;
}

}  // namespace contrastgeo
