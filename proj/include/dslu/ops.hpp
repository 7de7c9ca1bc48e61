#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dslu/rng.hpp"
#include "dslu/tensor.hpp"

// Differentiable operations. All ops validate shapes and throw DimensionError
// naming the offending shapes. Broadcasting is limited to add_bias over the
// last axis.
namespace dslu::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor sum(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2 only

// Rows of `table` [V x d] selected by ids -> [n x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor gelu(const Tensor& x);
// Inverted dropout. Identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis, then applies gain and bias ([last]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean over positions with targets[i] != ignore_id of
// KL(q_i || softmax(logits_i)), q_i = (1 - eps) on the target and
// eps / (V - 1) elsewhere. Returns a [1] tensor.
Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    double smoothing, int ignore_id = -1);

// Key-visibility mask for attention: allow[q * keys + k] != 0 means query q
// may attend to key k. An empty mask allows everything.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allow;

  bool empty() const { return allow.empty(); }
  bool allowed(std::size_t q, std::size_t k) const {
    return allow.empty() || allow[q * keys + k] != 0;
  }
};

// Per-head attention weights captured during a forward pass.
struct AttentionWeights {
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> probs;  // [heads x queries x keys]
};

// Multi-head scaled dot-product attention over already projected inputs:
// q [Lq x d], k and v [Lk x d], d divisible by heads. Returns [Lq x d] with
// heads concatenated. Masked keys get exactly zero weight. When `weights` is
// non-null the attention probabilities are copied into it.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const AttentionMask& mask, AttentionWeights* weights = nullptr);

}  // namespace dslu::ops
