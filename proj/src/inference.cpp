#include "dslu/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace dslu {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> last_row(const Tensor& logits) {
  const std::size_t v = logits.cols();
  const auto d = logits.data();
  return {d.end() - static_cast<std::ptrdiff_t>(v), d.end()};
}

PassResult finish(const TwoPassModel& model, std::vector<Hypothesis> hyps,
                  const DecodeOptions& options) {
  PassResult r;
  r.best = std::move(hyps.front());
  const int it = r.best.intent_token();
  r.intent = it >= 0 ? model.vocab.intent_of(it) : -1;
  r.transcript = r.best.transcript();
  r.confidence = first_pass_confidence(r.best, options.confidence);
  return r;
}

}  // namespace

ConfidenceMode parse_confidence_mode(const std::string& name) {
  if (name == "intent") return ConfidenceMode::kIntentPosterior;
  if (name == "sequence") return ConfidenceMode::kSequence;
  throw std::invalid_argument("unknown confidence mode '" + name + "' (intent|sequence)");
}

const char* confidence_mode_name(ConfidenceMode m) {
  return m == ConfidenceMode::kIntentPosterior ? "intent" : "sequence";
}

double first_pass_confidence(const Hypothesis& hyp, ConfidenceMode mode) {
  if (hyp.token_logprobs.empty()) return 0.0;
  if (mode == ConfidenceMode::kIntentPosterior) return std::exp(hyp.token_logprobs[0]);
  return std::exp(hyp.total);
}

PassResult infer_first_pass(const TwoPassModel& model, const Utterance& utt,
                            std::optional<double> prefix_seconds, const DecodeOptions& options,
                            AcousticEmbedding* full_cache) {
  const Tensor frames = frames_tensor(utt);
  const auto t0 = Clock::now();
  AcousticEmbedding c_aco = encode_acoustic(model, frames, prefix_seconds);
  const DecodeStep step = [&](std::span<const int> prefix) {
    return last_row(first_pass_logits(model, c_aco, prefix));
  };
  auto hyps = beam_search(step, OutputLayout::of(model.vocab), {options.beam_width, options.max_len});
  const double elapsed = seconds_since(t0);
  PassResult r = finish(model, std::move(hyps), options);
  r.elapsed = elapsed;
  if (full_cache != nullptr && c_aco.frames_used == static_cast<std::size_t>(utt.n_frames))
    *full_cache = std::move(c_aco);
  return r;
}

PassResult infer_second_pass(const TwoPassModel& model, const Utterance& utt,
                             const std::vector<int>& pass1_transcript,
                             const DecodeOptions& options, const AcousticEmbedding* cached) {
  if (cached != nullptr && cached->frames_used != static_cast<std::size_t>(utt.n_frames))
    throw std::invalid_argument("infer_second_pass: cached embedding is not full-audio");
  const auto t0 = Clock::now();
  AcousticEmbedding own;
  if (cached == nullptr) own = encode_acoustic(model, frames_tensor(utt));
  const AcousticEmbedding& c_aco = cached != nullptr ? *cached : own;
  const SemanticEmbedding c_sem =
      encode_semantic(model, semantic_input(model.vocab, pass1_transcript));
  const JointEmbedding c_del = deliberate(model, c_aco, c_sem);
  const DecodeStep step = [&](std::span<const int> prefix) {
    return last_row(second_pass_logits(model, c_del, prefix));
  };
  auto hyps = beam_search(step, OutputLayout::of(model.vocab), {options.beam_width, options.max_len});
  const double elapsed = seconds_since(t0);
  PassResult r = finish(model, std::move(hyps), options);
  r.elapsed = elapsed;
  return r;
}

const char* source_name(PredictionSource s) {
  return s == PredictionSource::kFirstPass ? "first_pass" : "second_pass";
}

RoutedPrediction route(const TwoPassModel& model, const Utterance& utt, double threshold,
                       std::optional<double> prefix_seconds, const DecodeOptions& options) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("threshold must be in [0, 1]");
  RoutedPrediction p;
  p.utt_id = utt.id;
  p.intent_true = utt.intent;
  p.prefix_seconds = prefix_seconds.value_or(std::numeric_limits<double>::infinity());
  p.audio_seconds = utt.duration_seconds();
  AcousticEmbedding cache;
  const PassResult first = infer_first_pass(model, utt, prefix_seconds, options, &cache);
  p.confidence = first.confidence;
  p.pass1_transcript = first.transcript;
  p.t_pass1 = first.elapsed;
  if (first.confidence >= threshold) {
    p.intent = first.intent;
    p.transcript = first.transcript;
    p.source = PredictionSource::kFirstPass;
  } else {
    const PassResult second = infer_second_pass(model, utt, first.transcript, options,
                                                cache.values.defined() ? &cache : nullptr);
    p.intent = second.intent;
    p.transcript = second.transcript;
    p.source = PredictionSource::kSecondPass;
    p.t_pass2 = second.elapsed;
  }
  p.t_total = p.t_pass1 + p.t_pass2;
  return p;
}

BothPassRecord run_both_passes(const TwoPassModel& model, const Utterance& utt,
                               std::optional<double> prefix_seconds,
                               const DecodeOptions& options) {
  BothPassRecord r;
  r.utt_id = utt.id;
  r.intent_true = utt.intent;
  r.transcript_true = model.vocab.encode(utt.transcript);
  r.prefix_seconds = prefix_seconds.value_or(std::numeric_limits<double>::infinity());
  r.audio_seconds = utt.duration_seconds();
  AcousticEmbedding cache;
  r.pass1 = infer_first_pass(model, utt, prefix_seconds, options, &cache);
  r.pass2 = infer_second_pass(model, utt, r.pass1.transcript, options,
                              cache.values.defined() ? &cache : nullptr);
  return r;
}

RoutedPrediction routed_from(const BothPassRecord& r, double threshold) {
  RoutedPrediction p;
  p.utt_id = r.utt_id;
  p.intent_true = r.intent_true;
  p.confidence = r.pass1.confidence;
  p.pass1_transcript = r.pass1.transcript;
  p.t_pass1 = r.pass1.elapsed;
  p.prefix_seconds = r.prefix_seconds;
  p.audio_seconds = r.audio_seconds;
  if (r.pass1.confidence >= threshold) {
    p.source = PredictionSource::kFirstPass;
    p.intent = r.pass1.intent;
    p.transcript = r.pass1.transcript;
  } else {
    p.source = PredictionSource::kSecondPass;
    p.intent = r.pass2.intent;
    p.transcript = r.pass2.transcript;
    p.t_pass2 = r.pass2.elapsed;
  }
  p.t_total = p.t_pass1 + p.t_pass2;
  return p;
}

LatencyReport measure_latency(const std::vector<LatencyRow>& rows, double prefix_seconds) {
  if (rows.empty()) throw std::invalid_argument("measure_latency: no predictions");
  LatencyReport rep;
  rep.rows = rows;
  rep.prefix_seconds = prefix_seconds;
  std::vector<double> totals;
  double audio = 0.0, wall = 0.0, base = 0.0;
  for (const auto& r : rows) {
    totals.push_back(r.t_total);
    wall += r.t_total;
    base += r.baseline;
    audio += std::min(r.audio_seconds, prefix_seconds);
  }
  const double n = static_cast<double>(rows.size());
  rep.mean = wall / n;
  rep.baseline_mean = base / n;
  std::sort(totals.begin(), totals.end());
  const std::size_t m = totals.size();
  rep.median = m % 2 == 1 ? totals[m / 2] : 0.5 * (totals[m / 2 - 1] + totals[m / 2]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(m)));
  rep.p95 = totals[std::max<std::size_t>(rank, 1) - 1];
  rep.speedup = rep.mean > 0.0 ? rep.baseline_mean / rep.mean : 0.0;
  rep.real_time_factor = wall > 0.0 ? audio / wall : 0.0;
  return rep;
}

std::string LatencyReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"utt_id", r.utt_id},
                      {"t_pass1", r.t_pass1},
                      {"t_pass2", r.t_pass2},
                      {"t_total", r.t_total},
                      {"baseline", r.baseline},
                      {"audio_seconds", r.audio_seconds}});
  nlohmann::json j = {{"mean", mean},
                      {"median", median},
                      {"p95", p95},
                      {"baseline_mean", baseline_mean},
                      {"speedup", speedup},
                      {"real_time_factor", real_time_factor},
                      {"prefix_seconds", std::isinf(prefix_seconds) ? nlohmann::json("full")
                                                                    : nlohmann::json(prefix_seconds)},
                      {"rows", rows_j}};
  return j.dump(2);
}

std::vector<BothPassRecord> run_both_passes_all(const TwoPassModel& model,
                                                const std::vector<const Utterance*>& utts,
                                                std::optional<double> prefix_seconds,
                                                const DecodeOptions& options, int workers) {
  return parallel_map<BothPassRecord>(utts.size(), workers, [&](std::size_t i) {
    return run_both_passes(model, *utts[i], prefix_seconds, options);
  });
}

std::vector<RoutedPrediction> route_all(const TwoPassModel& model,
                                        const std::vector<const Utterance*>& utts,
                                        double threshold, std::optional<double> prefix_seconds,
                                        const DecodeOptions& options, int workers) {
  return parallel_map<RoutedPrediction>(utts.size(), workers, [&](std::size_t i) {
    return route(model, *utts[i], threshold, prefix_seconds, options);
  });
}

}  // namespace dslu
