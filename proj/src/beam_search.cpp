#include "dslu/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dslu {

OutputLayout OutputLayout::of(const Vocabulary& vocab) {
  OutputLayout l;
  l.vocab_size = vocab.size();
  l.intent_begin = vocab.intent_begin();
  l.intent_end = vocab.intent_end();
  l.word_begin = vocab.word_begin();
  l.word_end = vocab.word_end();
  return l;
}

std::vector<int> OutputLayout::allowed(std::size_t prefix_length) const {
  std::vector<int> out;
  if (prefix_length == 1) {
    for (int t = intent_begin; t < intent_end; ++t) out.push_back(t);
    return out;
  }
  for (int t = word_begin; t < word_end; ++t) out.push_back(t);
  if (prefix_length >= 3) out.push_back(eos);  // at least one word first
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> Hypothesis::transcript() const {
  std::vector<int> out;
  for (std::size_t i = 2; i < tokens.size(); ++i)
    if (!(finished && i + 1 == tokens.size())) out.push_back(tokens[i]);
  return out;
}

namespace {

struct Candidate {
  double score;
  std::size_t parent;
  int token;
  double logprob;
};

}  // namespace

std::vector<Hypothesis> beam_search(const DecodeStep& step, const OutputLayout& layout,
                                    const BeamOptions& options) {
  if (options.beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  if (options.max_len < 2) throw std::invalid_argument("max_len must be >= 2");
  if (layout.intent_end <= layout.intent_begin || layout.word_end <= layout.word_begin)
    throw std::invalid_argument("output layout needs intent and word tokens");

  std::vector<Hypothesis> active(1);
  active[0].tokens = {layout.bos};
  std::vector<Hypothesis> finished;

  while (!active.empty() && active[0].tokens.size() < options.max_len) {
    // Scores only decrease, so no active hypothesis can overtake a finished
    // one that already beats them all.
    if (finished.size() >= options.beam_width) {
      double best_active = -std::numeric_limits<double>::infinity();
      for (const auto& h : active) best_active = std::max(best_active, h.total);
      if (finished[options.beam_width - 1].total >= best_active) break;
    }
    const auto allowed = layout.allowed(active[0].tokens.size());
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < active.size(); ++b) {
      const auto logits = step(active[b].tokens);
      if (static_cast<int>(logits.size()) != layout.vocab_size)
        throw std::invalid_argument("decode step returned " + std::to_string(logits.size()) +
                                    " logits for a vocabulary of " +
                                    std::to_string(layout.vocab_size));
      double mx = -std::numeric_limits<double>::infinity();
      for (int t : allowed) mx = std::max(mx, logits[t]);
      double z = 0.0;
      for (int t : allowed) z += std::exp(logits[t] - mx);
      const double lse = mx + std::log(z);
      for (int t : allowed) {
        const double lp = logits[t] - lse;
        cands.push_back({active[b].total + lp, b, t, lp});
      }
    }
    const std::size_t keep = std::min(options.beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      Hypothesis h = active[c.parent];
      h.tokens.push_back(c.token);
      h.token_logprobs.push_back(c.logprob);
      h.total = c.score;
      if (c.token == layout.eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    std::stable_sort(finished.begin(), finished.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.total > b.total; });
    active = std::move(next);
  }
  if (!finished.empty()) {
    if (finished.size() > options.beam_width) finished.resize(options.beam_width);
    return finished;
  }
  std::stable_sort(active.begin(), active.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.total > b.total; });
  return active;
}

}  // namespace dslu
