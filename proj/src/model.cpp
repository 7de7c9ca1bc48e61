#include "dslu/model.hpp"

#include <cmath>
#include <cstring>

namespace dslu {
namespace {

Tensor random_embedding(std::size_t rows, std::size_t dim, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(rows * dim);
  for (double& x : v) x = s * rng.normal();
  return Tensor::from({rows, dim}, std::move(v));
}

nn::Linear output_head(std::size_t d, std::size_t vocab, bool zero, Rng& rng) {
  nn::Linear l = nn::Linear::create(d, vocab, true, rng);
  if (zero) std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
  return l;
}

// Token embedding scaled by sqrt(dim) plus sinusoidal positions.
Tensor embed_tokens(const Tensor& table, std::span<const int> ids) {
  Tensor e = ops::embedding(table, ids);
  return nn::add_positions(ops::scale(e, std::sqrt(static_cast<double>(table.cols()))));
}

void check_prefix(const Vocabulary& vocab, std::span<const int> prefix) {
  if (prefix.empty() || prefix[0] != Vocabulary::kBos)
    throw std::invalid_argument("target prefix must start with BOS");
  for (int id : prefix)
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab.size()));
}

}  // namespace

TwoPassModel TwoPassModel::create(const ModelConfig& c, Vocabulary vocab) {
  TwoPassModel m;
  m.config = c;
  m.vocab = std::move(vocab);
  Rng rng(derive_seed(c.init_seed, "init"));
  const std::size_t v = static_cast<std::size_t>(m.vocab.size());
  const nn::AttentionConfig att{c.model_dim, c.heads, c.dropout};
  const nn::AttentionConfig sem{c.semantic_dim, c.semantic_heads, c.dropout};
  att.validate();
  sem.validate();

  m.subsampler = nn::Subsampler::create(c.feat_dim, c.subsample, c.model_dim, rng);
  m.acoustic = nn::Encoder::create(att, c.acoustic_layers, c.ff_dim, rng);
  m.first_embed = random_embedding(v, c.model_dim, rng);
  m.first_decoder = nn::Decoder::create(att, c.decoder_layers, c.ff_dim, rng);
  m.first_head = output_head(c.model_dim, v, c.zero_init_heads, rng);
  m.semantic_embed = random_embedding(v, c.semantic_dim, rng);
  m.semantic = nn::Encoder::create(sem, c.semantic_layers, c.ff_dim, rng);
  m.mlm_bias = Tensor::zeros({static_cast<std::size_t>(m.vocab.n_words())});
  m.projection = nn::Linear::create(c.semantic_dim, c.model_dim, false, rng).weight;
  m.deliberation = nn::Encoder::create(att, c.deliberation_layers, c.ff_dim, rng);
  m.second_embed = random_embedding(v, c.model_dim, rng);
  m.second_decoder = nn::Decoder::create(att, c.decoder_layers, c.ff_dim, rng);
  m.second_head = output_head(c.model_dim, v, c.zero_init_heads, rng);
  return m;
}

nn::ParamList TwoPassModel::parameters(ParamGroup group) const {
  nn::ParamList out;
  switch (group) {
    case ParamGroup::kAcoustic:
      subsampler.collect("acoustic.subsample", out);
      acoustic.collect("acoustic.encoder", out);
      break;
    case ParamGroup::kFirstPass:
      out.push_back({"pass1.embed", first_embed});
      first_decoder.collect("pass1.decoder", out);
      first_head.collect("pass1.head", out);
      break;
    case ParamGroup::kSemantic:
      out.push_back({"semantic.embed", semantic_embed});
      semantic.collect("semantic.encoder", out);
      out.push_back({"semantic.mlm_bias", mlm_bias});
      break;
    case ParamGroup::kProjection:
      out.push_back({"projection", projection});
      break;
    case ParamGroup::kDeliberation:
      deliberation.collect("deliberation.encoder", out);
      break;
    case ParamGroup::kSecondPass:
      out.push_back({"pass2.embed", second_embed});
      second_decoder.collect("pass2.decoder", out);
      second_head.collect("pass2.head", out);
      break;
  }
  return out;
}

nn::ParamList TwoPassModel::parameters() const {
  nn::ParamList out;
  for (ParamGroup g : {ParamGroup::kAcoustic, ParamGroup::kFirstPass, ParamGroup::kSemantic,
                       ParamGroup::kProjection, ParamGroup::kDeliberation,
                       ParamGroup::kSecondPass}) {
    auto part = parameters(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void TwoPassModel::set_trainable(std::initializer_list<ParamGroup> groups) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(false);
  for (ParamGroup g : groups)
    for (auto& p : parameters(g)) p.tensor.set_requires_grad(true);
}

void TwoPassModel::zero_grad() {
  for (auto& p : parameters())
    if (p.tensor.requires_grad()) p.tensor.zero_grad();
}

const nn::Encoder& TwoPassModel::acoustic_encoder(int pass) const {
  if (pass != 1 && pass != 2) throw std::invalid_argument("pass must be 1 or 2");
  return acoustic;
}

Tensor frames_tensor(const Utterance& u) {
  return Tensor::from({static_cast<std::size_t>(u.n_frames), static_cast<std::size_t>(u.feat_dim)},
                      u.frames);
}

std::size_t prefix_frames(double seconds, std::size_t total) {
  if (!(seconds > 0.0)) throw std::invalid_argument("prefix_seconds must be positive");
  if (std::isinf(seconds)) return total;
  const double n = std::floor(seconds / kFramePeriod + 1e-9);
  if (n >= static_cast<double>(total)) return total;
  return static_cast<std::size_t>(n);
}

AcousticEmbedding encode_acoustic(const TwoPassModel& model, const Tensor& frames,
                                  std::optional<double> prefix_seconds, const InferenceMode& mode) {
  if (!frames.defined() || frames.rank() != 2)
    throw std::invalid_argument("encode_acoustic: frames must be a [T x feat] matrix");
  const std::size_t total = frames.rows();
  const std::size_t used = prefix_seconds ? prefix_frames(*prefix_seconds, total) : total;
  if (used == 0) throw std::invalid_argument("encode_acoustic: prefix keeps no frames");
  Tensor input = used == total ? frames : ops::slice(frames, 0, 0, used);
  Tensor x = nn::add_positions(model.subsampler(input));
  AcousticEmbedding out;
  out.values = nn::encoder_forward(model.acoustic_encoder(1), x, {}, mode);
  out.frames_used = used;
  out.source_seconds = static_cast<double>(used) * kFramePeriod;
  return out;
}

Tensor first_pass_logits(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                         std::span<const int> target_prefix, const InferenceMode& mode) {
  check_prefix(model.vocab, target_prefix);
  Tensor x = embed_tokens(model.first_embed, target_prefix);
  Tensor h = nn::decoder_forward(model.first_decoder, x, c_aco.values,
                                 nn::causal_mask(target_prefix.size()), mode);
  return model.first_head(h);
}

SemanticEmbedding encode_semantic(const TwoPassModel& model, std::span<const int> tokens,
                                  const InferenceMode& mode) {
  if (tokens.empty()) throw std::invalid_argument("encode_semantic: empty transcript");
  for (int id : tokens)
    if (!(model.vocab.is_word(id) || id == Vocabulary::kPad || id == Vocabulary::kMask))
      throw std::invalid_argument("encode_semantic: token " + std::to_string(id) + " ('" +
                                  (id >= 0 && id < model.vocab.size() ? model.vocab.token(id)
                                                                      : std::string("?")) +
                                  "') is not a transcript word");
  SemanticEmbedding out;
  out.raw = nn::encoder_forward(model.semantic, embed_tokens(model.semantic_embed, tokens), {},
                                mode);
  out.projected = ops::matmul(out.raw, model.projection);
  return out;
}

JointEmbedding deliberate(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                          const SemanticEmbedding& c_sem, const InferenceMode& mode,
                          std::vector<nn::AttentionMap>* maps) {
  if (c_aco.values.cols() != c_sem.projected.cols())
    throw DimensionError("deliberate: acoustic " + shape_str(c_aco.values.shape()) +
                         " and semantic " + shape_str(c_sem.projected.shape()) +
                         " widths differ");
  JointEmbedding out;
  out.acoustic_length = c_aco.values.rows();
  out.semantic_length = c_sem.projected.rows();
  Tensor joint = ops::concat({c_aco.values, c_sem.projected}, 0);
  out.values = nn::encoder_forward(model.deliberation, joint, {}, mode, maps);
  return out;
}

Tensor second_pass_logits(const TwoPassModel& model, const JointEmbedding& c_del,
                          std::span<const int> target_prefix, const InferenceMode& mode) {
  check_prefix(model.vocab, target_prefix);
  Tensor x = embed_tokens(model.second_embed, target_prefix);
  Tensor h = nn::decoder_forward(model.second_decoder, x, c_del.values,
                                 nn::causal_mask(target_prefix.size()), mode);
  return model.second_head(h);
}

Tensor masked_token_logits(const TwoPassModel& model, const SemanticEmbedding& c_sem) {
  const auto wb = static_cast<std::size_t>(model.vocab.word_begin());
  const auto we = static_cast<std::size_t>(model.vocab.word_end());
  Tensor words = ops::slice(model.semantic_embed, 0, wb, we);
  return ops::add_bias(ops::matmul(c_sem.raw, ops::transpose(words)), model.mlm_bias);
}

std::vector<int> semantic_input(const Vocabulary& vocab, std::span<const int> transcript) {
  std::vector<int> out;
  for (int id : transcript)
    if (vocab.is_word(id)) out.push_back(id);
  if (out.empty()) out.push_back(Vocabulary::kPad);
  return out;
}

std::uint64_t parameter_checksum(const TwoPassModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    const auto* bytes = reinterpret_cast<const unsigned char*>(d.data());
    for (std::size_t i = 0; i < d.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace dslu
