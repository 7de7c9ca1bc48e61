#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dslu/vocab.hpp"

namespace dslu {

// Token ranges the output layout [BOS, intent, words..., EOS] is built from.
struct OutputLayout {
  int vocab_size = 0;
  int bos = Vocabulary::kBos;
  int eos = Vocabulary::kEos;
  int intent_begin = 0, intent_end = 0;
  int word_begin = 0, word_end = 0;

  static OutputLayout of(const Vocabulary& vocab);
  // Tokens allowed after a prefix of the given length (>= 1).
  std::vector<int> allowed(std::size_t prefix_length) const;
};

struct Hypothesis {
  std::vector<int> tokens;          // starts with BOS
  std::vector<double> token_logprobs;  // one per token after BOS
  double total = 0.0;
  bool finished = false;

  // Intent token at position 1, or -1 if the sequence stops before it.
  int intent_token() const { return tokens.size() > 1 ? tokens[1] : -1; }
  // Word tokens between the intent and EOS.
  std::vector<int> transcript() const;
};

// Next-token logits [|V|] given the tokens decoded so far.
using DecodeStep = std::function<std::vector<double>(std::span<const int> prefix)>;

struct BeamOptions {
  std::size_t beam_width = 4;
  std::size_t max_len = 24;  // tokens including BOS and EOS
};

// Scores are log-softmax renormalized over the tokens the layout allows at
// each position; no length normalization. Returns finished hypotheses sorted
// by total descending, or the best unfinished ones (finished == false) when
// none ends within max_len.
std::vector<Hypothesis> beam_search(const DecodeStep& step, const OutputLayout& layout,
                                    const BeamOptions& options);

}  // namespace dslu
