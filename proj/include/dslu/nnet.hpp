#pragma once

#include <string>
#include <vector>

#include "dslu/ops.hpp"
#include "dslu/rng.hpp"
#include "dslu/tensor.hpp"

// Transformer building blocks: pre-layer-norm encoder and decoder layers,
// multi-head attention, sinusoidal positions and frame subsampling.
namespace dslu::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

struct AttentionConfig {
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  double dropout = 0.1;

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;  // throws DimensionError / std::invalid_argument
};

struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> weights;  // queries x keys

  double at(std::size_t q, std::size_t k) const { return weights[q * keys + k]; }
};

// Per-call settings. Training mode applies dropout and skips map retention.
struct ForwardMode {
  bool train = false;
  Rng* rng = nullptr;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out, may be undefined

  static Linear create(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, 1e-5); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MultiHeadAttention {
  AttentionConfig config;
  Linear query, key, value, output;

  static MultiHeadAttention create(const AttentionConfig& config, Rng& rng);
  // Returns the attended output; per-head maps are appended when `maps` is
  // non-null, tagged with `layer`.
  Tensor operator()(const Tensor& q_input, const Tensor& kv_input, const ops::AttentionMask& mask,
                    std::size_t layer, std::vector<AttentionMap>* maps) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FeedForward {
  Linear in, out;

  static FeedForward create(std::size_t dim, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return out(ops::gelu(in(x))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct EncoderLayer {
  LayerNorm norm_attn, norm_ff;
  MultiHeadAttention self_attn;
  FeedForward ff;
};

struct DecoderLayer {
  LayerNorm norm_self, norm_cross, norm_ff;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;
};

struct Encoder {
  AttentionConfig config;
  std::vector<EncoderLayer> layers;
  LayerNorm final_norm;

  static Encoder create(const AttentionConfig& config, std::size_t n_layers, std::size_t ff_dim,
                        Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Decoder {
  AttentionConfig config;
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;

  static Decoder create(const AttentionConfig& config, std::size_t n_layers, std::size_t ff_dim,
                        Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Strided frame stacking followed by a linear projection:
// [T x feat] -> [ceil(T / factor) x dim]; the last group is zero padded.
struct Subsampler {
  std::size_t factor = 1;
  std::size_t feat_dim = 0;
  Linear proj;

  static Subsampler create(std::size_t feat_dim, std::size_t factor, std::size_t dim, Rng& rng);
  Tensor operator()(const Tensor& frames) const;
  static std::size_t output_length(std::size_t frames, std::size_t factor);
  void collect(const std::string& prefix, ParamList& out) const;
};

ops::AttentionMask causal_mask(std::size_t length);

// Sinusoidal position table [length x dim].
Tensor positions(std::size_t length, std::size_t dim);
Tensor add_positions(const Tensor& x);

// Shape-preserving stack of encoder layers; zero layers is the identity.
Tensor encoder_forward(const Encoder& enc, const Tensor& x, const ops::AttentionMask& mask,
                       const ForwardMode& mode, std::vector<AttentionMap>* maps = nullptr);

// Returns one hidden state per target position. `self_maps` / `cross_maps`
// receive attention maps in eval mode when non-null.
Tensor decoder_forward(const Decoder& dec, const Tensor& targets, const Tensor& context,
                       const ops::AttentionMask& self_mask, const ForwardMode& mode,
                       std::vector<AttentionMap>* self_maps = nullptr,
                       std::vector<AttentionMap>* cross_maps = nullptr);

}  // namespace dslu::nn
