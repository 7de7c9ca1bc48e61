#include "dslu/nnet.hpp"

#include <cmath>

namespace dslu::nn {
namespace {

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardMode& mode) {
  if (!mode.train || rate == 0.0) return x;
  if (mode.rng == nullptr) throw std::invalid_argument("training forward pass needs an Rng");
  return ops::dropout(x, rate, true, *mode.rng);
}

void check_width(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() != 2 || x.cols() != dim)
    throw DimensionError(std::string(what) + ": expected [* x " + std::to_string(dim) +
                         "], got " + shape_str(x.shape()));
}

}  // namespace

void AttentionConfig::validate() const {
  if (heads == 0 || model_dim % heads != 0)
    throw DimensionError(std::to_string(heads) + " heads do not divide model dim " +
                         std::to_string(model_dim));
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("attention dropout must be in [0, 1)");
}

Linear Linear::create(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Linear l;
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = std_dev * rng.normal();
  l.weight = Tensor::from({in, out}, std::move(w));
  if (with_bias) l.bias = Tensor::zeros({out});
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_bias(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::create(std::size_t dim) {
  return {Tensor::full({dim}, 1.0), Tensor::zeros({dim})};
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

MultiHeadAttention MultiHeadAttention::create(const AttentionConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.model_dim;
  MultiHeadAttention m;
  m.config = config;
  m.query = Linear::create(d, d, true, rng);
  m.key = Linear::create(d, d, true, rng);
  m.value = Linear::create(d, d, true, rng);
  m.output = Linear::create(d, d, true, rng);
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& q_input, const Tensor& kv_input,
                                      const ops::AttentionMask& mask, std::size_t layer,
                                      std::vector<AttentionMap>* maps) const {
  check_width(q_input, config.model_dim, "attention query input");
  check_width(kv_input, config.model_dim, "attention key/value input");
  ops::AttentionWeights w;
  Tensor att = ops::attention(query(q_input), key(kv_input), value(kv_input), config.heads, mask,
                              maps != nullptr ? &w : nullptr);
  if (maps != nullptr) {
    const std::size_t block = w.queries * w.keys;
    for (std::size_t h = 0; h < w.heads; ++h) {
      AttentionMap m{layer, h, w.queries, w.keys, {}};
      m.weights.assign(w.probs.begin() + static_cast<long>(h * block),
                       w.probs.begin() + static_cast<long>((h + 1) * block));
      maps->push_back(std::move(m));
    }
  }
  return output(att);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

FeedForward FeedForward::create(std::size_t dim, std::size_t hidden, Rng& rng) {
  return {Linear::create(dim, hidden, true, rng), Linear::create(hidden, dim, true, rng)};
}

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  in.collect(prefix + ".in", out);
  this->out.collect(prefix + ".out", out);
}

Encoder Encoder::create(const AttentionConfig& config, std::size_t n_layers, std::size_t ff_dim,
                        Rng& rng) {
  config.validate();
  Encoder e;
  e.config = config;
  for (std::size_t i = 0; i < n_layers; ++i) {
    EncoderLayer l{LayerNorm::create(config.model_dim), LayerNorm::create(config.model_dim),
                   MultiHeadAttention::create(config, rng),
                   FeedForward::create(config.model_dim, ff_dim, rng)};
    e.layers.push_back(std::move(l));
  }
  e.final_norm = LayerNorm::create(config.model_dim);
  return e;
}

void Encoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers[i].norm_attn.collect(p + ".norm_attn", out);
    layers[i].norm_ff.collect(p + ".norm_ff", out);
    layers[i].self_attn.collect(p + ".self_attn", out);
    layers[i].ff.collect(p + ".ff", out);
  }
  if (!layers.empty()) final_norm.collect(prefix + ".final_norm", out);
}

Decoder Decoder::create(const AttentionConfig& config, std::size_t n_layers, std::size_t ff_dim,
                        Rng& rng) {
  config.validate();
  Decoder d;
  d.config = config;
  for (std::size_t i = 0; i < n_layers; ++i) {
    DecoderLayer l{LayerNorm::create(config.model_dim),
                   LayerNorm::create(config.model_dim),
                   LayerNorm::create(config.model_dim),
                   MultiHeadAttention::create(config, rng),
                   MultiHeadAttention::create(config, rng),
                   FeedForward::create(config.model_dim, ff_dim, rng)};
    d.layers.push_back(std::move(l));
  }
  d.final_norm = LayerNorm::create(config.model_dim);
  return d;
}

void Decoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers[i].norm_self.collect(p + ".norm_self", out);
    layers[i].norm_cross.collect(p + ".norm_cross", out);
    layers[i].norm_ff.collect(p + ".norm_ff", out);
    layers[i].self_attn.collect(p + ".self_attn", out);
    layers[i].cross_attn.collect(p + ".cross_attn", out);
    layers[i].ff.collect(p + ".ff", out);
  }
  if (!layers.empty()) final_norm.collect(prefix + ".final_norm", out);
}

Subsampler Subsampler::create(std::size_t feat_dim, std::size_t factor, std::size_t dim,
                              Rng& rng) {
  if (factor < 1) throw std::invalid_argument("subsample factor must be >= 1");
  return {factor, feat_dim, Linear::create(feat_dim * factor, dim, true, rng)};
}

std::size_t Subsampler::output_length(std::size_t frames, std::size_t factor) {
  return (frames + factor - 1) / factor;
}

Tensor Subsampler::operator()(const Tensor& frames) const {
  check_width(frames, feat_dim, "subsample");
  const std::size_t t = frames.rows();
  if (t < factor)
    throw DimensionError("subsample: " + std::to_string(t) + " frames is fewer than factor " +
                         std::to_string(factor));
  const std::size_t out_len = output_length(t, factor);
  const std::size_t width = factor * feat_dim;
  std::vector<double> stacked(out_len * width, 0.0);
  auto src = frames.data();
  for (std::size_t f = 0; f < t; ++f)
    std::copy_n(src.begin() + static_cast<long>(f * feat_dim), feat_dim,
                stacked.begin() + static_cast<long>((f / factor) * width + (f % factor) * feat_dim));
  Tensor x = Tensor::from({out_len, width}, std::move(stacked));
  if (frames.requires_grad()) {
    // Differentiable path for callers that track the input itself.
    std::vector<Tensor> rows;
    for (std::size_t g = 0; g < out_len; ++g) {
      const std::size_t b = g * factor, e = std::min(t, b + factor);
      Tensor part = ops::reshape(ops::slice(frames, 0, b, e), {1, (e - b) * feat_dim});
      if (e - b < factor)
        part = ops::concat({part, Tensor::zeros({1, (factor - (e - b)) * feat_dim})}, 1);
      rows.push_back(part);
    }
    x = ops::concat(rows, 0);
  }
  return proj(x);
}

void Subsampler::collect(const std::string& prefix, ParamList& out) const {
  proj.collect(prefix + ".proj", out);
}

ops::AttentionMask causal_mask(std::size_t length) {
  ops::AttentionMask m{length, length, std::vector<std::uint8_t>(length * length, 0)};
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * length + j] = 1;
  return m;
}

Tensor positions(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      pe[p * dim + i] = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq)
                                     : std::cos(static_cast<double>(p) * freq);
    }
  return Tensor::from({length, dim}, std::move(pe));
}

Tensor add_positions(const Tensor& x) { return ops::add(x, positions(x.rows(), x.cols())); }

Tensor encoder_forward(const Encoder& enc, const Tensor& x, const ops::AttentionMask& mask,
                       const ForwardMode& mode, std::vector<AttentionMap>* maps) {
  check_width(x, enc.config.model_dim, "encoder input");
  if (enc.layers.empty()) return x;
  auto* keep = mode.train ? nullptr : maps;
  Tensor h = x;
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    const auto& l = enc.layers[i];
    Tensor n = l.norm_attn(h);
    h = ops::add(h, maybe_dropout(l.self_attn(n, n, mask, i, keep), enc.config.dropout, mode));
    h = ops::add(h, maybe_dropout(l.ff(l.norm_ff(h)), enc.config.dropout, mode));
  }
  return enc.final_norm(h);
}

Tensor decoder_forward(const Decoder& dec, const Tensor& targets, const Tensor& context,
                       const ops::AttentionMask& self_mask, const ForwardMode& mode,
                       std::vector<AttentionMap>* self_maps,
                       std::vector<AttentionMap>* cross_maps) {
  check_width(targets, dec.config.model_dim, "decoder targets");
  check_width(context, dec.config.model_dim, "decoder context");
  if (dec.layers.empty()) return targets;
  auto* keep_self = mode.train ? nullptr : self_maps;
  auto* keep_cross = mode.train ? nullptr : cross_maps;
  Tensor h = targets;
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    const auto& l = dec.layers[i];
    Tensor n = l.norm_self(h);
    h = ops::add(h, maybe_dropout(l.self_attn(n, n, self_mask, i, keep_self), dec.config.dropout,
                                  mode));
    h = ops::add(h, maybe_dropout(l.cross_attn(l.norm_cross(h), context, {}, i, keep_cross),
                                  dec.config.dropout, mode));
    h = ops::add(h, maybe_dropout(l.ff(l.norm_ff(h)), dec.config.dropout, mode));
  }
  return dec.final_norm(h);
}

}  // namespace dslu::nn
