#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dslu/beam_search.hpp"
#include "dslu/model.hpp"

namespace dslu {

enum class ConfidenceMode {
  kIntentPosterior,  // probability of the intent token at position 1
  kSequence,         // exp of the whole hypothesis log-probability
};
ConfidenceMode parse_confidence_mode(const std::string& name);
const char* confidence_mode_name(ConfidenceMode m);

double first_pass_confidence(const Hypothesis& hyp,
                             ConfidenceMode mode = ConfidenceMode::kIntentPosterior);

struct DecodeOptions {
  std::size_t beam_width = 4;
  std::size_t max_len = 24;
  ConfidenceMode confidence = ConfidenceMode::kIntentPosterior;
};

struct PassResult {
  Hypothesis best;
  int intent = -1;             // grammar intent index, -1 if none decoded
  std::vector<int> transcript;  // word token ids
  double confidence = 0.0;
  double elapsed = 0.0;  // seconds, model compute only
};

// Pass 1 on the first `prefix_seconds` of audio (all of it when unset).
// When `full_cache` is given and the whole utterance was encoded, the
// acoustic embedding is stored there for reuse by the second pass.
PassResult infer_first_pass(const TwoPassModel& model, const Utterance& utt,
                            std::optional<double> prefix_seconds, const DecodeOptions& options,
                            AcousticEmbedding* full_cache = nullptr);

// Pass 2 on full audio given a pass-1 transcript. `cached` must be the
// full-audio embedding of this utterance when supplied.
PassResult infer_second_pass(const TwoPassModel& model, const Utterance& utt,
                             const std::vector<int>& pass1_transcript,
                             const DecodeOptions& options,
                             const AcousticEmbedding* cached = nullptr);

enum class PredictionSource { kFirstPass, kSecondPass };
const char* source_name(PredictionSource s);

struct RoutedPrediction {
  std::string utt_id;
  int intent = -1;
  int intent_true = -1;
  PredictionSource source = PredictionSource::kFirstPass;
  double confidence = 0.0;
  std::vector<int> pass1_transcript;
  std::vector<int> transcript;  // from the pass that produced the intent
  double t_pass1 = 0.0;
  double t_pass2 = 0.0;
  double t_total = 0.0;
  double prefix_seconds = 0.0;  // infinity for full audio
  double audio_seconds = 0.0;
};

// Pass 1 on the prefix; below `threshold` confidence, pass 2 on full audio
// with the pass-1 transcript.
RoutedPrediction route(const TwoPassModel& model, const Utterance& utt, double threshold,
                       std::optional<double> prefix_seconds, const DecodeOptions& options);

// Evaluation view: both passes for every utterance. Pass 1 runs on the
// prefix; pass 2 on full audio with that transcript.
struct BothPassRecord {
  std::string utt_id;
  int intent_true = -1;
  std::vector<int> transcript_true;
  PassResult pass1;
  PassResult pass2;
  double prefix_seconds = 0.0;
  double audio_seconds = 0.0;
};

BothPassRecord run_both_passes(const TwoPassModel& model, const Utterance& utt,
                               std::optional<double> prefix_seconds,
                               const DecodeOptions& options);

// Routing decision replayed from a both-pass record.
RoutedPrediction routed_from(const BothPassRecord& r, double threshold);

struct LatencyRow {
  std::string utt_id;
  double t_pass1 = 0.0;
  double t_pass2 = 0.0;
  double t_total = 0.0;
  double baseline = 0.0;  // always-second-pass time for this utterance
  double audio_seconds = 0.0;
};

struct LatencyReport {
  std::vector<LatencyRow> rows;
  double mean = 0.0, median = 0.0, p95 = 0.0;
  double baseline_mean = 0.0;
  double speedup = 0.0;          // baseline_mean / mean
  double real_time_factor = 0.0;  // audio seconds processed per wall second
  double prefix_seconds = 0.0;

  std::string to_json() const;
};

// `baseline` gives each row's always-second-pass time. Throws on empty input.
LatencyReport measure_latency(const std::vector<LatencyRow>& rows, double prefix_seconds);

// Runs `fn(i)` for i in [0, n) on `workers` threads; results in input order.
template <class R, class Fn>
std::vector<R> parallel_map(std::size_t n, int workers, Fn fn);

// Evaluates in input order with a pool of workers over a frozen model.
std::vector<BothPassRecord> run_both_passes_all(const TwoPassModel& model,
                                                const std::vector<const Utterance*>& utts,
                                                std::optional<double> prefix_seconds,
                                                const DecodeOptions& options, int workers);
std::vector<RoutedPrediction> route_all(const TwoPassModel& model,
                                        const std::vector<const Utterance*>& utts,
                                        double threshold, std::optional<double> prefix_seconds,
                                        const DecodeOptions& options, int workers);

}  // namespace dslu

#include "dslu/parallel_map.hpp"
