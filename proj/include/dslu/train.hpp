#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dslu/corpus.hpp"
#include "dslu/inference.hpp"
#include "dslu/model.hpp"
#include "dslu/optim.hpp"

namespace dslu {

enum class Stage { kPretrainLm, kStage1, kStage2 };
const char* stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct SpecMaskConfig {
  int n_time_masks = 2;
  int max_time_width = 12;
  int n_feat_masks = 1;
  int max_feat_width = 3;
};

struct TrainConfig {
  Stage stage = Stage::kStage1;
  int epochs = 10;
  int batch_size = 16;
  AdamConfig adam;
  double label_smoothing = 0.1;
  double dropout = 0.1;
  SpecMaskConfig spec;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  // Stage 2 only: also update the acoustic encoder (off by default).
  bool joint_update = false;
  // Stage 2 only: dropout applied to the cached acoustic embedding.
  double acoustic_dropout = 0.0;
  std::size_t hypothesis_beam = 4;
  // Stage 2 only: each step draws the semantic input uniformly from the
  // top-n pass-1 hypotheses (1 = best only).
  std::size_t hypothesis_nbest = 4;
  // Masked-token pretraining.
  double mask_prob = 0.15;
  // Utterances of the train split held back for dev accuracy.
  int dev_size = 200;
  // Called after every epoch (progress output).
  std::function<void(const struct EpochLog&)> on_epoch;

  void validate(const ModelConfig& model) const;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double dev_accuracy = 0.0;  // percent
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::string stage;
  std::vector<EpochLog> epochs;
  std::uint64_t checksum = 0;
  std::vector<std::string> warnings;
  std::size_t train_items = 0;
  std::size_t dev_items = 0;

  std::string to_json() const;
};

// Zeroes up to n_time_masks time bands and n_feat_masks feature bands of a
// [T x feat] frame matrix. Band widths are drawn uniformly in [0, max] and
// clamped to the matrix.
std::vector<double> apply_spec_mask(const std::vector<double>& frames, int n_frames, int feat_dim,
                                    const SpecMaskConfig& config, std::uint64_t seed);
// Closed-form expected fraction of masked cells.
double expected_mask_fraction(int n_frames, int feat_dim, const SpecMaskConfig& config);

// Deterministic train/dev partition of the train split.
struct TrainDevSplit {
  std::vector<const Utterance*> train;
  std::vector<const Utterance*> dev;
};
TrainDevSplit train_dev_split(const Corpus& corpus, int dev_size);

// Sentences mapped to word ids, with 15%-style masking targets.
struct MaskedSentence {
  std::vector<int> input;
  std::vector<int> targets;  // word index (id - word_begin) or -1 when not masked
};
MaskedSentence mask_sentence(const Vocabulary& vocab, const Words& sentence, double mask_prob,
                             Rng& rng);

// Mean masked-token loss over sentences (eval mode, fixed masking seed).
double masked_token_loss(const TwoPassModel& model, const std::vector<Words>& sentences,
                         double mask_prob, std::uint64_t seed);

TrainLog pretrain_semantic_encoder(TwoPassModel& model, const std::vector<Words>& text,
                                   const TrainConfig& config);

// Teacher-forced label-smoothed loss of one utterance for pass 1.
Tensor stage1_loss(const TwoPassModel& model, const Utterance& utt, const TrainConfig& config,
                   const InferenceMode& mode);
TrainLog train_stage1(TwoPassModel& model, const Corpus& corpus, const TrainConfig& config);

// Pass-1 transcripts (beam search, full audio) used as stage-2 semantic input.
std::vector<std::vector<int>> first_pass_transcripts(const TwoPassModel& model,
                                                     const std::vector<const Utterance*>& utts,
                                                     std::size_t beam_width, int workers = 1);
// Up to `n` best distinct transcripts per utterance, best first.
std::vector<std::vector<std::vector<int>>> first_pass_nbest(
    const TwoPassModel& model, const std::vector<const Utterance*>& utts, std::size_t beam_width,
    std::size_t n, int workers = 1);

Tensor stage2_loss(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                   const std::vector<int>& pass1_transcript, const Utterance& utt,
                   const TrainConfig& config, const InferenceMode& mode);
TrainLog train_stage2(TwoPassModel& model, const Corpus& corpus, const TrainConfig& config);

// Position-1 intent argmax accuracy (percent) of a pass on a set.
double quick_intent_accuracy(const TwoPassModel& model, const std::vector<const Utterance*>& utts,
                             int pass, const std::vector<std::vector<int>>* transcripts = nullptr);

}  // namespace dslu
