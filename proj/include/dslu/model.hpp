#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dslu/corpus.hpp"
#include "dslu/nnet.hpp"
#include "dslu/optim.hpp"
#include "dslu/vocab.hpp"

namespace dslu {

struct ModelConfig {
  std::size_t feat_dim = 16;
  std::size_t subsample = 8;
  std::size_t model_dim = 32;     // d
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  std::size_t acoustic_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t semantic_dim = 32;  // o
  std::size_t semantic_heads = 4;
  std::size_t semantic_layers = 2;
  std::size_t deliberation_layers = 2;
  double dropout = 0.1;
  bool zero_init_heads = true;
  std::uint64_t init_seed = 1;

  bool operator==(const ModelConfig&) const = default;
};

// Parameter groups, matching the training stages' update sets.
enum class ParamGroup {
  kAcoustic,      // subsampler + acoustic encoder (shared by both passes)
  kFirstPass,     // pass-1 token embedding, decoder, output head
  kSemantic,      // semantic token embedding, encoder, masked-token bias
  kProjection,    // semantic -> model dim projection
  kDeliberation,  // deliberation encoder
  kSecondPass,    // pass-2 token embedding, decoder, output head
};

struct AcousticEmbedding {
  Tensor values;  // [T' x d]
  std::size_t frames_used = 0;
  double source_seconds = 0.0;
};

struct SemanticEmbedding {
  Tensor raw;        // [T^ x o]
  Tensor projected;  // [T^ x d]
};

struct JointEmbedding {
  Tensor values;  // [(T' + T^) x d]
  std::size_t acoustic_length = 0;
  std::size_t semantic_length = 0;
};

struct TwoPassModel {
  ModelConfig config;
  Vocabulary vocab;

  nn::Subsampler subsampler;
  nn::Encoder acoustic;

  Tensor first_embed;  // [|V| x d]
  nn::Decoder first_decoder;
  nn::Linear first_head;

  Tensor semantic_embed;  // [|V| x o]
  nn::Encoder semantic;
  Tensor mlm_bias;  // [n_words]

  Tensor projection;  // [o x d], no bias

  nn::Encoder deliberation;

  Tensor second_embed;
  nn::Decoder second_decoder;
  nn::Linear second_head;

  // Training provenance.
  bool semantic_pretrained = false;
  bool stage1_trained = false;
  bool stage2_trained = false;

  static TwoPassModel create(const ModelConfig& config, Vocabulary vocab);

  nn::ParamList parameters() const;
  nn::ParamList parameters(ParamGroup group) const;
  // requires_grad on exactly the listed groups; all other gradients dropped.
  void set_trainable(std::initializer_list<ParamGroup> groups);
  void zero_grad();

  // Acoustic encoder used by pass 1 and pass 2 (the same object).
  const nn::Encoder& acoustic_encoder(int pass) const;
};

struct InferenceMode {
  bool train = false;
  Rng* rng = nullptr;
  operator nn::ForwardMode() const { return {train, rng}; }
};

// Frames tensor [T x feat] of an utterance.
Tensor frames_tensor(const Utterance& u);

// Number of frames kept for a prefix of `seconds`, capped at `total`.
std::size_t prefix_frames(double seconds, std::size_t total);

AcousticEmbedding encode_acoustic(const TwoPassModel& model, const Tensor& frames,
                                  std::optional<double> prefix_seconds = std::nullopt,
                                  const InferenceMode& mode = {});

// Logits [L x |V|] for a target prefix starting with BOS; row l scores the
// token at position l + 1.
Tensor first_pass_logits(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                         std::span<const int> target_prefix, const InferenceMode& mode = {});

// Rejects intent and BOS/EOS tokens; accepts word tokens, PAD and MASK.
SemanticEmbedding encode_semantic(const TwoPassModel& model, std::span<const int> tokens,
                                  const InferenceMode& mode = {});

JointEmbedding deliberate(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                          const SemanticEmbedding& c_sem, const InferenceMode& mode = {},
                          std::vector<nn::AttentionMap>* maps = nullptr);

Tensor second_pass_logits(const TwoPassModel& model, const JointEmbedding& c_del,
                          std::span<const int> target_prefix, const InferenceMode& mode = {});

// Masked-token logits over the word range [T^ x n_words], tied to the
// semantic token embedding.
Tensor masked_token_logits(const TwoPassModel& model, const SemanticEmbedding& c_sem);

// Semantic tokens for a first-pass transcript; a lone PAD when empty.
std::vector<int> semantic_input(const Vocabulary& vocab, std::span<const int> transcript);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  TwoPassModel model;
  std::optional<OptimizerState> optimizer;
  std::vector<std::string> optimizer_params;  // names the moments belong to
};

void save_checkpoint(const TwoPassModel& model, const OptimizerState* optimizer,
                     std::span<const std::string> optimizer_params,
                     const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over all parameter bytes, for logs and determinism checks.
std::uint64_t parameter_checksum(const TwoPassModel& model);

}  // namespace dslu
