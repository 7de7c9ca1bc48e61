#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dslu/inference.hpp"

namespace dslu {

// One evaluated utterance as written to predictions.jsonl. Intents are
// grammar labels; pass-specific fields are filled in both-pass evaluation.
struct PredictionRecord {
  std::string utt_id;
  std::string intent_pred;
  std::string intent_true;
  std::string source;  // "first_pass" | "second_pass"
  double confidence = 0.0;
  Words transcript_pred;
  double t_pass1 = 0.0, t_pass2 = 0.0, t_total = 0.0;
  double prefix_seconds = 0.0;  // infinity for full audio
  double audio_seconds = 0.0;

  bool both_passes = false;
  std::string intent_pass1, intent_pass2;
  Words transcript_pass1, transcript_pass2, transcript_true;
  double wer_pass1 = 0.0;  // fraction
  double t_pass2_full = 0.0;  // pass-2 time even when routing skipped it

  bool operator==(const PredictionRecord&) const = default;
};

PredictionRecord to_record(const BothPassRecord& r, const IntentGrammar& grammar,
                           const Vocabulary& vocab, double threshold);
PredictionRecord to_record(const RoutedPrediction& r, const IntentGrammar& grammar,
                           const Vocabulary& vocab);

// Sorted by utt_id on write.
void write_predictions(std::vector<PredictionRecord> records, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

// 100 * correct / total. Throws on empty input, length mismatch, or a missing
// gold label (empty string).
double intent_accuracy(const std::vector<std::string>& predicted,
                       const std::vector<std::string>& gold);
double intent_accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);

// Word error rate (S + I + D) / |ref|. Throws on an empty reference.
template <class Token>
double wer(const std::vector<Token>& hyp, const std::vector<Token>& ref);
// Edit counts from a minimum-edit alignment that prefers substitutions.
struct EditCounts {
  std::size_t substitutions = 0, insertions = 0, deletions = 0;
};
template <class Token>
EditCounts align(const std::vector<Token>& hyp, const std::vector<Token>& ref);

struct BucketRow {
  std::string label;
  std::size_t support = 0;
  double first_accuracy = 0.0;   // percent; 0 when support is 0
  double second_accuracy = 0.0;
};

struct BucketTable {
  std::vector<BucketRow> rows;
  // Optional summary, e.g. fraction of utterances with WER < 5%.
  std::optional<double> low_wer_fraction;

  std::size_t total_support() const;
  std::string to_csv() const;
};

// Rows ">=t" (confidence >= threshold) and "<t". Records need both passes.
BucketTable bucket_by_confidence(const std::vector<PredictionRecord>& records, double threshold);

// Support-weighted accuracy of "high bucket -> first pass, low bucket ->
// second pass"; row 0 is the high bucket, any further rows are low.
double routed_accuracy(const BucketTable& table);

inline const std::vector<double> kDefaultWerEdges = {0, 5, 15, 30, 100};
// Buckets [e_i, e_{i+1}) in percent, the last one closed; WER above the last
// edge falls in the last bucket. Throws unless edges strictly increase.
BucketTable bucket_by_wer(const std::vector<PredictionRecord>& records,
                          const std::vector<double>& edges = kDefaultWerEdges);

struct PrefixPoint {
  double prefix_seconds = 0.0;  // infinity for full audio
  double accuracy = 0.0;
  double mean_wall = 0.0;
  double real_time_factor = 0.0;  // audio seconds processed per wall second
};

struct PrefixCurve {
  std::vector<PrefixPoint> points;
  std::string to_csv() const;
  // Parses the CSV written by to_csv (header required).
  static PrefixCurve from_csv(const std::string& text);
};

// Pass-1 accuracy and timing at each prefix. Throws unless prefixes
// strictly increase.
PrefixCurve prefix_sweep(const TwoPassModel& model, const std::vector<const Utterance*>& utts,
                         const std::vector<double>& prefixes, const DecodeOptions& options,
                         int workers = 1);

struct HeatmapMatrix {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<std::string> query_labels;
  std::vector<std::string> key_labels;
  std::size_t boundary = 0;  // first semantic column == acoustic length
  std::size_t rows = 0, cols = 0;
  std::vector<double> weights;  // rows x cols
  std::vector<double> acoustic_mass, semantic_mass;  // per row

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

// First deliberation-layer attention maps for an utterance and a transcript
// (word token ids).
std::vector<HeatmapMatrix> export_heatmaps(const TwoPassModel& model, const Utterance& utt,
                                           const std::vector<int>& transcript);

// heatmap_<utt>_l<layer>_h<head>.csv plus a .json sidecar with labels,
// boundary and per-row mass split.
void write_heatmaps(const std::vector<HeatmapMatrix>& maps, const std::string& utt_id,
                    const std::filesystem::path& dir);

}  // namespace dslu

#include "dslu/wer_impl.hpp"
