#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dslu {

// Frame period of the synthetic features, seconds.
inline constexpr double kFramePeriod = 0.01;

using Words = std::vector<std::string>;

struct Intent {
  std::string action;
  std::string object;
  std::string location;  // "none" when absent
  std::string label() const { return action + "_" + object + "_" + location; }
};

// A concrete phrasing: one word sequence realizing one intent.
struct Template {
  int id = 0;
  int intent = 0;
  Words words;
  bool held_out = false;
  // Intent-bearing words sit in the final third of the phrase.
  bool late_keywords = false;
};

struct GrammarOptions {
  int n_intents = 31;
  int n_templates_per_intent = 6;
  double late_fraction = 0.4;
  int feat_dim = 16;
};

struct IntentGrammar {
  std::uint64_t seed = 0;
  GrammarOptions options;
  std::vector<Intent> intents;
  std::vector<Template> templates;  // templates[i].id == i
  Words lexicon;                    // sorted, unique
  // Surface phrases for every slot value ("increase" -> {"increase", "raise", ...}).
  std::map<std::string, std::vector<Words>> realizations;
  // Text-only words appended to unlabeled sentences, per action.
  std::map<std::string, Words> companions;

  std::vector<int> training_templates(int intent) const;
  std::vector<int> held_out_templates(int intent) const;
  int intent_index(const std::string& label) const;
  bool in_lexicon(const std::string& word) const;
};

// Throws std::invalid_argument when n_intents < 2, n_templates < 4, or more
// intents are requested than the slot inventory can form.
IntentGrammar build_grammar(std::uint64_t seed, const GrammarOptions& options = {});

struct SpeakerProfile {
  int id = 0;
  std::vector<double> gain;    // feat_dim x feat_dim, row-major
  std::vector<double> offset;  // feat_dim
  double rate = 1.0;           // speaking-rate multiplier in (0.5, 2.0)

  static SpeakerProfile identity(int id, int feat_dim);
};

SpeakerProfile make_speaker(int id, int feat_dim, std::uint64_t seed);
double condition_number(const std::vector<double>& square, int n);

// Deterministic prototype feature vector of a word.
std::vector<double> word_prototype(const IntentGrammar& grammar, const std::string& word);

struct Utterance {
  std::string id;
  std::vector<double> frames;  // n_frames x feat_dim
  int n_frames = 0;
  int feat_dim = 0;
  Words transcript;
  int intent = 0;
  int speaker_id = 0;
  int template_id = 0;

  double duration_seconds() const { return n_frames * kFramePeriod; }
  bool operator==(const Utterance&) const = default;
};

struct SynthesisOptions {
  double frames_per_char = 6.0;
  int min_word_frames = 2;
};

Utterance synthesize_utterance(const IntentGrammar& grammar, int template_id,
                               const SpeakerProfile& speaker, double noise_level,
                               std::uint64_t seed, const SynthesisOptions& options = {});

enum class Split { kTrain, kTestSeen, kTestUnseenPhrasing, kTestUnseenSpeaker };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct CorpusSplits {
  std::vector<std::string> train;
  std::vector<std::string> test_seen;
  std::vector<std::string> test_unseen_phrasing;
  std::vector<std::string> test_unseen_speaker;
  std::vector<Words> unlabeled_text;

  const std::vector<std::string>& ids(Split s) const;
  bool operator==(const CorpusSplits&) const = default;
};

struct SplitRequest {
  int n_train = 2400;
  int n_test_each = 300;
  int n_speakers = 48;
  int n_heldout_speakers = 8;
  int n_extra_text = 4000;
  double noise_level = 0.5;
  SynthesisOptions synthesis;
};

struct Corpus {
  IntentGrammar grammar;
  std::vector<SpeakerProfile> speakers;
  std::vector<Utterance> utterances;  // sorted by id
  CorpusSplits splits;

  const Utterance& get(const std::string& id) const;
  std::vector<const Utterance*> split(Split s) const;
};

// Throws std::invalid_argument on an infeasible request.
Corpus make_splits(const IntentGrammar& grammar, const SplitRequest& request, std::uint64_t seed);

class CorpusParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files: grammar.json, corpus.jsonl, unlabeled.txt inside `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

void write_utterances_jsonl(const std::vector<Utterance>& utts, const CorpusSplits& splits,
                            const IntentGrammar& grammar, const std::filesystem::path& path);
// Returns utterances and fills split id lists. Throws CorpusParseError with
// "<file>:<line>" context on malformed records.
std::vector<Utterance> read_utterances_jsonl(const std::filesystem::path& path,
                                             const IntentGrammar& grammar,
                                             CorpusSplits& splits);

std::string grammar_to_json(const IntentGrammar& grammar);
IntentGrammar grammar_from_json(const std::string& text);

}  // namespace dslu
