#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dslu/eval.hpp"

namespace dslu {
namespace {

using json = nlohmann::json;

std::string label_of(const IntentGrammar& g, int intent) {
  if (intent < 0 || intent >= static_cast<int>(g.intents.size())) return "none";
  return g.intents[static_cast<std::size_t>(intent)].label();
}

json seconds_json(double s) { return std::isinf(s) ? json("full") : json(s); }

double seconds_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "full") throw std::invalid_argument("bad prefix_seconds");
    return std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}

}  // namespace

PredictionRecord to_record(const BothPassRecord& r, const IntentGrammar& grammar,
                           const Vocabulary& vocab, double threshold) {
  const RoutedPrediction routed = routed_from(r, threshold);
  PredictionRecord p = to_record(routed, grammar, vocab);
  p.both_passes = true;
  p.intent_pass1 = label_of(grammar, r.pass1.intent);
  p.intent_pass2 = label_of(grammar, r.pass2.intent);
  p.transcript_pass1 = vocab.decode(r.pass1.transcript);
  p.transcript_pass2 = vocab.decode(r.pass2.transcript);
  p.transcript_true = vocab.decode(r.transcript_true);
  p.wer_pass1 = wer(r.pass1.transcript, r.transcript_true);
  p.t_pass2_full = r.pass2.elapsed;
  return p;
}

PredictionRecord to_record(const RoutedPrediction& r, const IntentGrammar& grammar,
                           const Vocabulary& vocab) {
  PredictionRecord p;
  p.utt_id = r.utt_id;
  p.intent_pred = label_of(grammar, r.intent);
  p.intent_true = label_of(grammar, r.intent_true);
  p.source = source_name(r.source);
  p.confidence = r.confidence;
  p.transcript_pred = vocab.decode(r.transcript);
  p.t_pass1 = r.t_pass1;
  p.t_pass2 = r.t_pass2;
  p.t_total = r.t_total;
  p.prefix_seconds = r.prefix_seconds;
  p.audio_seconds = r.audio_seconds;
  return p;
}

void write_predictions(std::vector<PredictionRecord> records, const std::filesystem::path& path) {
  std::sort(records.begin(), records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) { return a.utt_id < b.utt_id; });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    json j = {{"utt_id", r.utt_id},
              {"intent_pred", r.intent_pred},
              {"intent_true", r.intent_true},
              {"source", r.source},
              {"confidence", r.confidence},
              {"transcript_pred", r.transcript_pred},
              {"t_pass1", r.t_pass1},
              {"t_pass2", r.t_pass2},
              {"t_total", r.t_total},
              {"prefix_seconds", seconds_json(r.prefix_seconds)},
              {"audio_seconds", r.audio_seconds}};
    if (r.both_passes) {
      j["intent_pass1"] = r.intent_pass1;
      j["intent_pass2"] = r.intent_pass2;
      j["transcript_pass1"] = r.transcript_pass1;
      j["transcript_pass2"] = r.transcript_pass2;
      j["transcript_true"] = r.transcript_true;
      j["wer_pass1"] = r.wer_pass1;
      j["t_pass2_full"] = r.t_pass2_full;
    }
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.utt_id = j.at("utt_id");
      r.intent_pred = j.at("intent_pred");
      r.intent_true = j.at("intent_true");
      r.source = j.at("source");
      r.confidence = j.at("confidence");
      r.transcript_pred = j.at("transcript_pred").get<Words>();
      r.t_pass1 = j.at("t_pass1");
      r.t_pass2 = j.at("t_pass2");
      r.t_total = j.at("t_total");
      r.prefix_seconds = seconds_from(j.at("prefix_seconds"));
      r.audio_seconds = j.value("audio_seconds", 0.0);
      if (j.contains("intent_pass1")) {
        r.both_passes = true;
        r.intent_pass1 = j.at("intent_pass1");
        r.intent_pass2 = j.at("intent_pass2");
        r.transcript_pass1 = j.at("transcript_pass1").get<Words>();
        r.transcript_pass2 = j.at("transcript_pass2").get<Words>();
        r.transcript_true = j.at("transcript_true").get<Words>();
        r.wer_pass1 = j.at("wer_pass1");
        r.t_pass2_full = j.at("t_pass2_full");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_heatmaps(const std::vector<HeatmapMatrix>& maps, const std::string& utt_id,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& h : maps) {
    const std::string stem =
        "heatmap_" + utt_id + "_l" + std::to_string(h.layer) + "_h" + std::to_string(h.head);
    std::ofstream csv(dir / (stem + ".csv"), std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / (stem + ".csv")).string());
    char buf[32];
    for (std::size_t r = 0; r < h.rows; ++r) {
      for (std::size_t c = 0; c < h.cols; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", h.at(r, c));
        csv << (c ? "," : "") << buf;
      }
      csv << '\n';
    }
    json side = {{"utt_id", utt_id},
                 {"layer", h.layer},
                 {"head", h.head},
                 {"query_labels", h.query_labels},
                 {"key_labels", h.key_labels},
                 {"boundary", h.boundary},
                 {"acoustic_mass", h.acoustic_mass},
                 {"semantic_mass", h.semantic_mass}};
    std::ofstream js(dir / (stem + ".json"), std::ios::binary);
    js << side.dump(2) << '\n';
    if (!csv || !js) throw std::runtime_error("write failed for heatmap " + stem);
  }
}

}  // namespace dslu
