#include "dslu/vocab.hpp"

#include <json.hpp>
#include <stdexcept>

namespace dslu {

Vocabulary Vocabulary::from_grammar(const IntentGrammar& grammar) {
  std::vector<std::string> tokens = {"<pad>", "<s>", "</s>", "<mask>"};
  for (const auto& i : grammar.intents) tokens.push_back("#" + i.label());
  tokens.insert(tokens.end(), grammar.lexicon.begin(), grammar.lexicon.end());
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecial || tokens[0] != "<pad>" || tokens[1] != "<s>" ||
      tokens[2] != "</s>" || tokens[3] != "<mask>")
    throw std::invalid_argument("vocabulary: missing special tokens");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  std::size_t i = kNumSpecial;
  while (i < v.tokens_.size() && !v.tokens_[i].empty() && v.tokens_[i][0] == '#') ++i;
  v.n_intents_ = static_cast<int>(i) - kNumSpecial;
  for (; i < v.tokens_.size(); ++i) {
    if (!v.word_index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocabulary: duplicate word '" + v.tokens_[i] + "'");
  }
  return v;
}

int Vocabulary::intent_token(int intent_index) const {
  if (intent_index < 0 || intent_index >= n_intents_)
    throw std::out_of_range("vocabulary: intent index " + std::to_string(intent_index));
  return intent_begin() + intent_index;
}

int Vocabulary::intent_of(int token) const {
  if (!is_intent(token)) throw std::out_of_range("vocabulary: token " + std::to_string(token) +
                                                 " is not an intent");
  return token - intent_begin();
}

int Vocabulary::word_id(const std::string& word) const {
  auto it = word_index_.find(word);
  if (it == word_index_.end()) throw std::out_of_range("vocabulary: unknown word '" + word + "'");
  return it->second;
}

std::vector<int> Vocabulary::encode(const Words& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(word_id(w));
  return out;
}

Words Vocabulary::decode(std::span<const int> ids) const {
  Words out;
  for (int id : ids)
    if (is_word(id)) out.push_back(token(id));
  return out;
}

std::vector<int> Vocabulary::target_sequence(int intent_index, const Words& words) const {
  std::vector<int> out = {kBos, intent_token(intent_index)};
  for (int id : encode(words)) out.push_back(id);
  out.push_back(kEos);
  return out;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j = {{"tokens", tokens_},
                      {"n_intents", n_intents_},
                      {"intent_begin", intent_begin()},
                      {"word_begin", word_begin()}};
  return j.dump(1);
}

}  // namespace dslu
