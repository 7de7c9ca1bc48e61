#include "dslu/corpus.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dslu/codec.hpp"
#include "dslu/rng.hpp"

namespace dslu {
namespace {

using json = nlohmann::json;

struct SlotTriple {
  const char* action;
  const char* object;
  const char* location;
};

// The first 31 entries mirror a smart-home command set; the rest extend the
// inventory for larger grammars.
constexpr SlotTriple kIntentInventory[] = {
    {"activate", "lights", "none"},      {"activate", "lights", "kitchen"},
    {"activate", "lights", "bedroom"},   {"activate", "lights", "washroom"},
    {"activate", "lamp", "none"},        {"activate", "music", "none"},
    {"deactivate", "lights", "none"},    {"deactivate", "lights", "kitchen"},
    {"deactivate", "lights", "bedroom"}, {"deactivate", "lights", "washroom"},
    {"deactivate", "lamp", "none"},      {"deactivate", "music", "none"},
    {"increase", "heat", "none"},        {"increase", "heat", "kitchen"},
    {"increase", "heat", "bedroom"},     {"increase", "heat", "washroom"},
    {"increase", "volume", "none"},      {"decrease", "heat", "none"},
    {"decrease", "heat", "kitchen"},     {"decrease", "heat", "bedroom"},
    {"decrease", "heat", "washroom"},    {"decrease", "volume", "none"},
    {"bring", "shoes", "none"},          {"bring", "socks", "none"},
    {"bring", "juice", "none"},          {"bring", "newspaper", "none"},
    {"change_language", "chinese", "none"}, {"change_language", "korean", "none"},
    {"change_language", "english", "none"}, {"change_language", "german", "none"},
    {"activate", "music", "bedroom"},    {"deactivate", "music", "bedroom"},
    {"increase", "volume", "kitchen"},   {"decrease", "volume", "kitchen"},
    {"activate", "lamp", "bedroom"},     {"deactivate", "lamp", "bedroom"},
    {"bring", "juice", "kitchen"},       {"bring", "newspaper", "bedroom"},
    {"increase", "volume", "bedroom"},   {"decrease", "volume", "bedroom"},
};

Words split_words(const std::string& s) {
  Words out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::map<std::string, std::vector<Words>> default_realizations() {
  const std::map<std::string, std::vector<std::string>> raw = {
      {"activate", {"turn on", "switch on", "activate", "enable"}},
      {"deactivate", {"turn off", "switch off", "deactivate", "disable"}},
      {"increase", {"increase", "raise", "turn up", "boost"}},
      {"decrease", {"decrease", "lower", "turn down", "reduce"}},
      {"bring", {"bring", "fetch", "get"}},
      {"change_language",
       {"change the language to", "set the language to", "switch the language to"}},
      {"lights", {"lights", "lighting"}},
      {"lamp", {"lamp"}},
      {"music", {"music", "songs"}},
      {"heat", {"heat", "heating", "temperature"}},
      {"volume", {"volume", "sound"}},
      {"shoes", {"shoes"}},
      {"socks", {"socks"}},
      {"juice", {"juice"}},
      {"newspaper", {"newspaper", "paper"}},
      {"chinese", {"chinese"}},
      {"korean", {"korean"}},
      {"english", {"english"}},
      {"german", {"german"}},
      {"none", {""}},
      {"kitchen", {"kitchen"}},
      {"bedroom", {"bedroom"}},
      {"washroom", {"washroom", "bathroom"}},
  };
  std::map<std::string, std::vector<Words>> out;
  for (const auto& [k, v] : raw)
    for (const auto& p : v) out[k].push_back(split_words(p));
  return out;
}

std::map<std::string, Words> default_companions() {
  return {{"activate", {"so", "it", "is", "on"}},
          {"deactivate", {"so", "it", "is", "off"}},
          {"increase", {"so", "it", "goes", "up"}},
          {"decrease", {"so", "it", "goes", "down"}},
          {"bring", {"over", "here", "to", "me"}},
          {"change_language", {"for", "me", "now"}}};
}

// Carrier phrases. {A} action, {O} object (with article unless a language),
// {L} "in the <location>" or nothing.
const std::vector<std::string> kEarlyFrames = {
    "{A} {O} {L}", "please {A} {O} {L}", "{A} {O} {L} please", "can you {A} {O} {L}",
    "i want you to {A} {O} {L}"};
const std::vector<std::string> kLateFrames = {
    "{L} could you please do me a favor and {A} {O}",
    "{L} when you have a moment {A} {O}",
    "{L} hello there assistant i would like you to {A} {O}"};

bool is_language(const std::string& object) {
  return object == "chinese" || object == "korean" || object == "english" || object == "german";
}

Words realize(const std::string& frame, const Words& action, const std::string& object_slot,
              const Words& object, const Words& location) {
  Words out;
  for (const auto& tok : split_words(frame)) {
    if (tok == "{A}") {
      out.insert(out.end(), action.begin(), action.end());
    } else if (tok == "{O}") {
      if (!is_language(object_slot)) out.push_back("the");
      out.insert(out.end(), object.begin(), object.end());
    } else if (tok == "{L}") {
      if (!location.empty() && !location.front().empty()) {
        out.push_back("in");
        out.push_back("the");
        out.insert(out.end(), location.begin(), location.end());
      }
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::string utt_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05d", prefix, i);
  return buf;
}

}  // namespace

std::vector<int> IntentGrammar::training_templates(int intent) const {
  std::vector<int> out;
  for (const auto& t : templates)
    if (t.intent == intent && !t.held_out) out.push_back(t.id);
  return out;
}

std::vector<int> IntentGrammar::held_out_templates(int intent) const {
  std::vector<int> out;
  for (const auto& t : templates)
    if (t.intent == intent && t.held_out) out.push_back(t.id);
  return out;
}

int IntentGrammar::intent_index(const std::string& label) const {
  for (std::size_t i = 0; i < intents.size(); ++i)
    if (intents[i].label() == label) return static_cast<int>(i);
  throw std::invalid_argument("unknown intent label '" + label + "'");
}

bool IntentGrammar::in_lexicon(const std::string& word) const {
  return std::binary_search(lexicon.begin(), lexicon.end(), word);
}

IntentGrammar build_grammar(std::uint64_t seed, const GrammarOptions& options) {
  constexpr int kInventory = static_cast<int>(std::size(kIntentInventory));
  if (options.n_intents < 2) throw std::invalid_argument("build_grammar: need at least 2 intents");
  if (options.n_intents > kInventory)
    throw std::invalid_argument("build_grammar: at most " + std::to_string(kInventory) +
                                " intents available");
  if (options.n_templates_per_intent < 4)
    throw std::invalid_argument("build_grammar: need at least 4 templates per intent");
  if (options.late_fraction < 0.0 || options.late_fraction > 1.0)
    throw std::invalid_argument("build_grammar: late_fraction must be in [0, 1]");
  if (options.feat_dim < 1) throw std::invalid_argument("build_grammar: feat_dim must be >= 1");

  IntentGrammar g;
  g.seed = seed;
  g.options = options;
  g.realizations = default_realizations();
  g.companions = default_companions();
  Rng rng(derive_seed(seed, "grammar"));

  const int n_held = std::max(1, options.n_templates_per_intent / 3);
  const int n_train = options.n_templates_per_intent - n_held;
  std::map<std::string, int> action_seen;

  for (int i = 0; i < options.n_intents; ++i) {
    const auto& slot = kIntentInventory[i];
    g.intents.push_back({slot.action, slot.object, slot.location});
    const auto& actions = g.realizations.at(slot.action);
    const auto& objects = g.realizations.at(slot.object);
    const auto& locations = g.realizations.at(slot.location);
    // The held-out action wording rotates across intents sharing an action so
    // every wording is still heard in training with some other intent.
    const std::size_t held_action = action_seen[slot.action]++ % actions.size();

    std::set<Words> used;
    auto make = [&](bool held) {
      for (int attempt = 0; attempt < 10000; ++attempt) {
        std::size_t a = held_action;
        if (!held) {
          a = rng.below(actions.size() - 1);
          if (a >= held_action) ++a;
        }
        const bool late = rng.uniform() < options.late_fraction;
        const std::string& frame = late ? pick(kLateFrames, rng) : pick(kEarlyFrames, rng);
        Words w = realize(frame, actions[a], slot.object, pick(objects, rng), pick(locations, rng));
        if (used.insert(w).second) {
          Template t;
          t.id = static_cast<int>(g.templates.size());
          t.intent = i;
          t.words = std::move(w);
          t.held_out = held;
          t.late_keywords = late;
          g.templates.push_back(std::move(t));
          return;
        }
      }
      throw std::invalid_argument("build_grammar: cannot form enough distinct templates for " +
                                  g.intents.back().label());
    };
    for (int k = 0; k < n_train; ++k) make(false);
    for (int k = 0; k < n_held; ++k) make(true);
  }

  std::set<std::string> lex;
  for (const auto& t : g.templates) lex.insert(t.words.begin(), t.words.end());
  // Every wording of every slot value and the text-only companions belong to
  // the lexicon, as do all carrier words.
  for (const auto& [k, phrases] : g.realizations)
    for (const auto& p : phrases)
      for (const auto& w : p)
        if (!w.empty()) lex.insert(w);
  for (const auto& [k, c] : g.companions) lex.insert(c.begin(), c.end());
  for (const auto* frames : {&kEarlyFrames, &kLateFrames})
    for (const auto& f : *frames)
      for (const auto& w : split_words(f))
        if (w.front() != '{') lex.insert(w);
  lex.insert({"the", "in"});
  g.lexicon.assign(lex.begin(), lex.end());
  return g;
}

SpeakerProfile SpeakerProfile::identity(int id, int feat_dim) {
  SpeakerProfile s;
  s.id = id;
  s.gain.assign(static_cast<std::size_t>(feat_dim * feat_dim), 0.0);
  for (int i = 0; i < feat_dim; ++i) s.gain[static_cast<std::size_t>(i * feat_dim + i)] = 1.0;
  s.offset.assign(static_cast<std::size_t>(feat_dim), 0.0);
  s.rate = 1.0;
  return s;
}

double condition_number(const std::vector<double>& square, int n) {
  Eigen::MatrixXd m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = square[static_cast<std::size_t>(r * n + c)];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  return sv(0) / sv(n - 1);
}

SpeakerProfile make_speaker(int id, int feat_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "speaker:" + std::to_string(id)));
  SpeakerProfile s = SpeakerProfile::identity(id, feat_dim);
  const double spread = 0.35 / std::sqrt(static_cast<double>(feat_dim));
  do {
    s = SpeakerProfile::identity(id, feat_dim);
    for (auto& g : s.gain) g += spread * rng.normal();
  } while (condition_number(s.gain, feat_dim) >= 10.0);
  for (auto& o : s.offset) o = 0.2 * rng.normal();
  s.rate = rng.uniform(0.8, 1.25);
  return s;
}

std::vector<double> word_prototype(const IntentGrammar& grammar, const std::string& word) {
  Rng rng(derive_seed(grammar.seed, "prototype:" + word));
  std::vector<double> p(static_cast<std::size_t>(grammar.options.feat_dim));
  for (auto& v : p) v = rng.normal();
  return p;
}

Utterance synthesize_utterance(const IntentGrammar& grammar, int template_id,
                               const SpeakerProfile& speaker, double noise_level,
                               std::uint64_t seed, const SynthesisOptions& options) {
  if (template_id < 0 || template_id >= static_cast<int>(grammar.templates.size()))
    throw std::invalid_argument("synthesize_utterance: unknown template " +
                                std::to_string(template_id));
  const int fd = grammar.options.feat_dim;
  if (speaker.gain.size() != static_cast<std::size_t>(fd * fd) ||
      speaker.offset.size() != static_cast<std::size_t>(fd) || !(speaker.rate > 0.5) ||
      !(speaker.rate < 2.0))
    throw std::invalid_argument("synthesize_utterance: invalid speaker " +
                                std::to_string(speaker.id));
  if (noise_level < 0.0) throw std::invalid_argument("synthesize_utterance: negative noise");

  const Template& t = grammar.templates[static_cast<std::size_t>(template_id)];
  Rng rng(seed);
  Utterance u;
  u.transcript = t.words;
  u.intent = t.intent;
  u.template_id = t.id;
  u.speaker_id = speaker.id;
  u.feat_dim = fd;
  std::vector<double> shaped(static_cast<std::size_t>(fd));
  for (const auto& w : t.words) {
    const auto proto = word_prototype(grammar, w);
    for (int r = 0; r < fd; ++r) {
      double acc = speaker.offset[static_cast<std::size_t>(r)];
      for (int c = 0; c < fd; ++c)
        acc += speaker.gain[static_cast<std::size_t>(r * fd + c)] * proto[static_cast<std::size_t>(c)];
      shaped[static_cast<std::size_t>(r)] = acc;
    }
    const int run = std::max(
        options.min_word_frames,
        static_cast<int>(std::lround(options.frames_per_char * static_cast<double>(w.size()) *
                                     speaker.rate)));
    for (int f = 0; f < run; ++f)
      for (int c = 0; c < fd; ++c)
        u.frames.push_back(shaped[static_cast<std::size_t>(c)] +
                           (noise_level > 0.0 ? noise_level * rng.normal() : 0.0));
    u.n_frames += run;
  }
  return u;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTestSeen: return "test_seen";
    case Split::kTestUnseenPhrasing: return "test_unseen_phrasing";
    case Split::kTestUnseenSpeaker: return "test_unseen_speaker";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  for (Split s : {Split::kTrain, Split::kTestSeen, Split::kTestUnseenPhrasing,
                  Split::kTestUnseenSpeaker})
    if (name == split_name(s)) return s;
  throw std::invalid_argument("unknown split '" + name + "'");
}

const std::vector<std::string>& CorpusSplits::ids(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kTestSeen: return test_seen;
    case Split::kTestUnseenPhrasing: return test_unseen_phrasing;
    case Split::kTestUnseenSpeaker: return test_unseen_speaker;
  }
  return train;
}

const Utterance& Corpus::get(const std::string& id) const {
  auto it = std::lower_bound(utterances.begin(), utterances.end(), id,
                             [](const Utterance& u, const std::string& k) { return u.id < k; });
  if (it == utterances.end() || it->id != id)
    throw std::out_of_range("no utterance with id '" + id + "'");
  return *it;
}

std::vector<const Utterance*> Corpus::split(Split s) const {
  std::vector<const Utterance*> out;
  for (const auto& id : splits.ids(s)) out.push_back(&get(id));
  return out;
}

Corpus make_splits(const IntentGrammar& grammar, const SplitRequest& req, std::uint64_t seed) {
  if (req.n_train <= 0 || req.n_test_each <= 0 || req.n_speakers <= 0 ||
      req.n_heldout_speakers <= 0 || req.n_extra_text < 0)
    throw std::invalid_argument("make_splits: counts must be positive");
  if (req.n_heldout_speakers >= req.n_speakers)
    throw std::invalid_argument("make_splits: need at least one training speaker (" +
                                std::to_string(req.n_speakers) + " speakers, " +
                                std::to_string(req.n_heldout_speakers) + " held out)");
  for (std::size_t i = 0; i < grammar.intents.size(); ++i)
    if (grammar.training_templates(static_cast<int>(i)).empty() ||
        grammar.held_out_templates(static_cast<int>(i)).empty())
      throw std::invalid_argument("make_splits: intent " + grammar.intents[i].label() +
                                  " lacks training or held-out templates");

  Corpus c;
  c.grammar = grammar;
  const int fd = grammar.options.feat_dim;
  const std::uint64_t speaker_seed = derive_seed(seed, "speakers");
  for (int s = 0; s < req.n_speakers; ++s) c.speakers.push_back(make_speaker(s, fd, speaker_seed));
  const int n_seen = req.n_speakers - req.n_heldout_speakers;

  Rng rng(derive_seed(seed, "corpus"));
  const int n_intents = static_cast<int>(grammar.intents.size());
  auto add = [&](const char* prefix, int i, bool held_template, bool held_speaker,
                 std::vector<std::string>& ids) {
    const int intent = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_intents)));
    const auto tpls = held_template ? grammar.held_out_templates(intent)
                                    : grammar.training_templates(intent);
    const int tpl = pick(tpls, rng);
    const int spk = held_speaker ? n_seen + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                                 req.n_heldout_speakers)))
                                 : static_cast<int>(rng.below(static_cast<std::uint64_t>(n_seen)));
    Utterance u = synthesize_utterance(grammar, tpl, c.speakers[static_cast<std::size_t>(spk)],
                                       req.noise_level, rng.next_u64(), req.synthesis);
    u.id = utt_id(prefix, i);
    ids.push_back(u.id);
    c.utterances.push_back(std::move(u));
  };
  for (int i = 0; i < req.n_train; ++i) add("train", i, false, false, c.splits.train);
  for (int i = 0; i < req.n_test_each; ++i) add("seen", i, false, false, c.splits.test_seen);
  for (int i = 0; i < req.n_test_each; ++i)
    add("uphr", i, true, false, c.splits.test_unseen_phrasing);
  for (int i = 0; i < req.n_test_each; ++i)
    add("uspk", i, false, true, c.splits.test_unseen_speaker);
  std::sort(c.utterances.begin(), c.utterances.end(),
            [](const Utterance& a, const Utterance& b) { return a.id < b.id; });

  // Text pool: every phrasing once, then free recombinations of all wordings.
  Rng text_rng(derive_seed(seed, "text"));
  for (const auto& t : grammar.templates) c.splits.unlabeled_text.push_back(t.words);
  for (int k = 0; k < req.n_extra_text; ++k) {
    const auto& intent = grammar.intents[text_rng.below(grammar.intents.size())];
    const bool late = text_rng.uniform() < grammar.options.late_fraction;
    const std::string& frame = late ? pick(kLateFrames, text_rng) : pick(kEarlyFrames, text_rng);
    Words w = realize(frame, pick(grammar.realizations.at(intent.action), text_rng),
                      intent.object, pick(grammar.realizations.at(intent.object), text_rng),
                      pick(grammar.realizations.at(intent.location), text_rng));
    if (text_rng.uniform() < 0.5) {
      const auto& comp = grammar.companions.at(intent.action);
      w.insert(w.end(), comp.begin(), comp.end());
    }
    c.splits.unlabeled_text.push_back(std::move(w));
  }
  return c;
}

std::string grammar_to_json(const IntentGrammar& g) {
  json j;
  j["seed"] = g.seed;
  j["options"] = {{"n_intents", g.options.n_intents},
                  {"n_templates_per_intent", g.options.n_templates_per_intent},
                  {"late_fraction", g.options.late_fraction},
                  {"feat_dim", g.options.feat_dim}};
  j["intents"] = json::array();
  for (const auto& i : g.intents)
    j["intents"].push_back(
        {{"label", i.label()}, {"action", i.action}, {"object", i.object}, {"location", i.location}});
  j["templates"] = json::array();
  for (const auto& t : g.templates)
    j["templates"].push_back({{"id", t.id},
                              {"intent", g.intents[static_cast<std::size_t>(t.intent)].label()},
                              {"words", t.words},
                              {"held_out", t.held_out},
                              {"late_keywords", t.late_keywords}});
  j["lexicon"] = g.lexicon;
  j["realizations"] = g.realizations;
  j["companions"] = g.companions;
  return j.dump(1);
}

IntentGrammar grammar_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    IntentGrammar g;
    g.seed = j.at("seed").get<std::uint64_t>();
    const auto& o = j.at("options");
    g.options.n_intents = o.at("n_intents").get<int>();
    g.options.n_templates_per_intent = o.at("n_templates_per_intent").get<int>();
    g.options.late_fraction = o.at("late_fraction").get<double>();
    g.options.feat_dim = o.at("feat_dim").get<int>();
    for (const auto& i : j.at("intents"))
      g.intents.push_back({i.at("action").get<std::string>(), i.at("object").get<std::string>(),
                           i.at("location").get<std::string>()});
    for (const auto& t : j.at("templates")) {
      Template tp;
      tp.id = t.at("id").get<int>();
      tp.intent = g.intent_index(t.at("intent").get<std::string>());
      tp.words = t.at("words").get<Words>();
      tp.held_out = t.at("held_out").get<bool>();
      tp.late_keywords = t.at("late_keywords").get<bool>();
      if (tp.id != static_cast<int>(g.templates.size()))
        throw CorpusParseError("grammar: template ids must be dense and ordered");
      g.templates.push_back(std::move(tp));
    }
    g.lexicon = j.at("lexicon").get<Words>();
    g.realizations = j.at("realizations").get<std::map<std::string, std::vector<Words>>>();
    g.companions = j.at("companions").get<std::map<std::string, Words>>();
    return g;
  } catch (const json::exception& e) {
    throw CorpusParseError(std::string("grammar: ") + e.what());
  }
}

void write_utterances_jsonl(const std::vector<Utterance>& utts, const CorpusSplits& splits,
                            const IntentGrammar& grammar, const std::filesystem::path& path) {
  std::map<std::string, Split> which;
  for (Split s : {Split::kTrain, Split::kTestSeen, Split::kTestUnseenPhrasing,
                  Split::kTestUnseenSpeaker})
    for (const auto& id : splits.ids(s)) which[id] = s;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& u : utts) {
    auto it = which.find(u.id);
    json j = {{"id", u.id},
              {"split", it == which.end() ? "none" : split_name(it->second)},
              {"speaker_id", u.speaker_id},
              {"template_id", u.template_id},
              {"intent", grammar.intents.at(static_cast<std::size_t>(u.intent)).label()},
              {"transcript", u.transcript},
              {"n_frames", u.n_frames},
              {"feat_dim", u.feat_dim},
              {"frames_b64", codec::encode_doubles(u.frames)}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Utterance> read_utterances_jsonl(const std::filesystem::path& path,
                                             const IntentGrammar& grammar,
                                             CorpusSplits& splits) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Utterance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    std::string id = "?";
    try {
      const json j = json::parse(line);
      Utterance u;
      u.id = id = j.at("id").get<std::string>();
      u.speaker_id = j.at("speaker_id").get<int>();
      u.template_id = j.at("template_id").get<int>();
      u.intent = grammar.intent_index(j.at("intent").get<std::string>());
      u.transcript = j.at("transcript").get<Words>();
      u.n_frames = j.at("n_frames").get<int>();
      u.feat_dim = j.at("feat_dim").get<int>();
      if (u.n_frames < 1 || u.feat_dim < 1)
        throw CorpusParseError("non-positive frame header");
      u.frames = codec::decode_doubles(j.at("frames_b64").get<std::string>());
      if (u.frames.size() != static_cast<std::size_t>(u.n_frames) * static_cast<std::size_t>(u.feat_dim))
        throw CorpusParseError("frame header says " + std::to_string(u.n_frames) + "x" +
                               std::to_string(u.feat_dim) + " but blob holds " +
                               std::to_string(u.frames.size()) + " values");
      const std::string split = j.at("split").get<std::string>();
      if (split != "none") {
        switch (parse_split(split)) {
          case Split::kTrain: splits.train.push_back(u.id); break;
          case Split::kTestSeen: splits.test_seen.push_back(u.id); break;
          case Split::kTestUnseenPhrasing: splits.test_unseen_phrasing.push_back(u.id); break;
          case Split::kTestUnseenSpeaker: splits.test_unseen_speaker.push_back(u.id); break;
        }
      }
      out.push_back(std::move(u));
    } catch (const std::exception& e) {
      throw CorpusParseError(where + ": record '" + id + "': " + e.what());
    }
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream g(dir / "grammar.json", std::ios::binary);
    if (!g) throw std::runtime_error("cannot write " + (dir / "grammar.json").string());
    g << grammar_to_json(corpus.grammar) << '\n';
    json spk = json::array();
    for (const auto& s : corpus.speakers)
      spk.push_back({{"id", s.id},
                     {"rate", s.rate},
                     {"gain_b64", codec::encode_doubles(s.gain)},
                     {"offset_b64", codec::encode_doubles(s.offset)}});
    std::ofstream sp(dir / "speakers.json", std::ios::binary);
    sp << spk.dump(1) << '\n';
  }
  write_utterances_jsonl(corpus.utterances, corpus.splits, corpus.grammar, dir / "corpus.jsonl");
  std::ofstream t(dir / "unlabeled.txt", std::ios::binary);
  if (!t) throw std::runtime_error("cannot write " + (dir / "unlabeled.txt").string());
  for (const auto& s : corpus.splits.unlabeled_text) {
    for (std::size_t i = 0; i < s.size(); ++i) t << (i ? " " : "") << s[i];
    t << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus c;
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  c.grammar = grammar_from_json(slurp(dir / "grammar.json"));
  if (std::filesystem::exists(dir / "speakers.json")) {
    try {
      for (const auto& s : json::parse(slurp(dir / "speakers.json"))) {
        SpeakerProfile p;
        p.id = s.at("id").get<int>();
        p.rate = s.at("rate").get<double>();
        p.gain = codec::decode_doubles(s.at("gain_b64").get<std::string>());
        p.offset = codec::decode_doubles(s.at("offset_b64").get<std::string>());
        c.speakers.push_back(std::move(p));
      }
    } catch (const json::exception& e) {
      throw CorpusParseError(std::string("speakers.json: ") + e.what());
    }
  }
  c.utterances = read_utterances_jsonl(dir / "corpus.jsonl", c.grammar, c.splits);
  std::sort(c.utterances.begin(), c.utterances.end(),
            [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  std::istringstream text(slurp(dir / "unlabeled.txt"));
  for (std::string line; std::getline(text, line);) {
    Words w = split_words(line);
    if (!w.empty()) c.splits.unlabeled_text.push_back(std::move(w));
  }
  return c;
}

}  // namespace dslu
