#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dslu/corpus.hpp"

namespace dslu {

// Token ids: specials [0, 4), intents [4, 4 + n_intents), then words.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary() = default;
  static Vocabulary from_grammar(const IntentGrammar& grammar);
  // Rebuilds from an exported token list (specials, "#intent" labels, words).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_intents() const { return n_intents_; }
  int n_words() const { return size() - word_begin(); }
  int intent_begin() const { return kNumSpecial; }
  int intent_end() const { return kNumSpecial + n_intents_; }
  int word_begin() const { return intent_end(); }
  int word_end() const { return size(); }

  bool is_intent(int id) const { return id >= intent_begin() && id < intent_end(); }
  bool is_word(int id) const { return id >= word_begin() && id < word_end(); }

  int intent_token(int intent_index) const;
  int intent_of(int token) const;
  int word_id(const std::string& word) const;  // throws std::out_of_range
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Words& words) const;
  Words decode(std::span<const int> ids) const;  // word tokens only
  // [BOS, intent, words..., EOS]
  std::vector<int> target_sequence(int intent_index, const Words& words) const;

  std::string to_json() const;
  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> word_index_;
  int n_intents_ = 0;
};

}  // namespace dslu
