#include "dslu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "dslu/kernels.hpp"

namespace dslu::ops {
namespace {

using kernels::Trans;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void record(std::vector<Tensor> inputs, const Tensor& out, Tape::BackwardFn fn) {
  std::vector<std::shared_ptr<TensorStorage>> in;
  in.reserve(inputs.size());
  for (const auto& t : inputs) in.push_back(t.shared());
  Tape::current()->record(std::move(in), out.shared(), std::move(fn));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros({m, n}, track);
  kernels::gemm(m, n, k, a.data(), Trans::kNo, b.data(), Trans::kNo, out.data(), false);
  if (track) {
    record({a, b}, out, [a, b, out, m, n, k]() mutable {
      if (a.requires_grad())
        kernels::gemm(m, k, n, out.grad(), Trans::kNo, b.data(), Trans::kYes, a.grad(), true);
      if (b.requires_grad())
        kernels::gemm(k, n, m, a.data(), Trans::kYes, out.grad(), Trans::kNo, b.grad(), true);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (track) {
    record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != x.cols())
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  const bool track = tracking({&x, &bias});
  Tensor out = Tensor::zeros(x.shape(), track);
  const std::size_t c = x.cols();
  auto o = out.data();
  auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + bv[i % c];
  if (track) {
    record({x, bias}, out, [x, bias, out, c]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (track) {
    record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double s) {
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * s;
  if (track) {
    record({x}, out, [x, out, s]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking({&x});
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::from({1}, {total}, track);
  if (track) {
    record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (double& gx : x.grad()) gx += g;
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  std::size_t total = 0;
  bool track = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size() || axis >= s.size())
      throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i])
        throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " +
                             shape_str(s) + " along axis " + std::to_string(axis));
    total += s[axis];
    track = track || (Tape::current() != nullptr && p.requires_grad());
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  Tensor out = Tensor::zeros(out_shape, track);
  const AxisView ov = axis_view(out_shape, axis);
  std::size_t offset = 0;
  auto o = out.data();
  for (const auto& p : parts) {
    const std::size_t n = p.dim(axis);
    auto src = p.data();
    for (std::size_t a = 0; a < ov.outer; ++a)
      std::copy_n(src.begin() + a * n * ov.inner, n * ov.inner,
                  o.begin() + (a * ov.n + offset) * ov.inner);
    offset += n;
  }
  if (track) {
    record(parts, out, [parts, out, ov, axis]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t n = p.dim(axis);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t a = 0; a < ov.outer; ++a)
            for (std::size_t i = 0; i < n * ov.inner; ++i)
              gp[a * n * ov.inner + i] += g[(a * ov.n + offset) * ov.inner + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisView v = axis_view(x.shape(), axis);
  if (begin >= end || end > v.n)
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  const bool track = tracking({&x});
  Shape s = x.shape();
  s[axis] = end - begin;
  Tensor out = Tensor::zeros(s, track);
  const std::size_t w = (end - begin) * v.inner;
  auto o = out.data();
  auto src = x.data();
  for (std::size_t a = 0; a < v.outer; ++a)
    std::copy_n(src.begin() + (a * v.n + begin) * v.inner, w, o.begin() + a * w);
  if (track) {
    record({x}, out, [x, out, v, begin, w]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t a = 0; a < v.outer; ++a)
        for (std::size_t i = 0; i < w; ++i) gx[(a * v.n + begin) * v.inner + i] += g[a * w + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  const bool track = tracking({&x});
  Tensor out = Tensor::from(std::move(shape), x.values(), track);
  if (track) {
    record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros({c, r}, track);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = x(i, j);
  if (track) {
    record({x}, out, [x, out, r, c]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw DimensionError("embedding: id " + std::to_string(id) + " outside table of " +
                           std::to_string(vocab) + " rows");
  const bool track = tracking({&table});
  Tensor out = Tensor::zeros({ids.size(), d}, track);
  auto src = table.data();
  auto o = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(src.begin() + static_cast<std::size_t>(ids[i]) * d, d, o.begin() + i * d);
  if (track) {
    std::vector<int> idv(ids.begin(), ids.end());
    record({table}, out, [table, out, idv, d]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t c = 0; c < d; ++c)
          gt[static_cast<std::size_t>(idv[i]) * d + c] += g[i * d + c];
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 * 0.5));
  if (track) {
    record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv = x.data();
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 * 0.5));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
        gx[i] += g[i] * (cdf + xv[i] * pdf);
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  std::vector<double> mask(x.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  if (v.inner == 1) {
    kernels::softmax_rows(v.outer, v.n, x.data(), out.data());
  } else {
    std::vector<double> buf(v.n), res(v.n);
    for (std::size_t a = 0; a < v.outer; ++a)
      for (std::size_t b = 0; b < v.inner; ++b) {
        for (std::size_t i = 0; i < v.n; ++i) buf[i] = x.data()[(a * v.n + i) * v.inner + b];
        kernels::softmax_rows(1, v.n, buf, res);
        for (std::size_t i = 0; i < v.n; ++i) out.data()[(a * v.n + i) * v.inner + b] = res[i];
      }
  }
  if (track) {
    record({x}, out, [x, out, v]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t a = 0; a < v.outer; ++a)
        for (std::size_t b = 0; b < v.inner; ++b) {
          double dot = 0.0;
          for (std::size_t i = 0; i < v.n; ++i) {
            const std::size_t idx = (a * v.n + i) * v.inner + b;
            dot += g[idx] * y[idx];
          }
          for (std::size_t i = 0; i < v.n; ++i) {
            const std::size_t idx = (a * v.n + i) * v.inner + b;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t c = x.cols();
  if (gain.numel() != c || bias.numel() != c)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  const std::size_t r = x.numel() / c;
  const bool track = tracking({&x, &gain, &bias});
  Tensor out = Tensor::zeros(x.shape(), track);
  std::vector<double> xhat(x.numel()), inv_std(r);
  kernels::normalize_rows(r, c, eps, x.data(), xhat, inv_std);
  auto o = out.data();
  auto g = gain.data(), b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = xhat[i * c + j] * g[j] + b[j];
  if (track) {
    record({x, gain, bias}, out,
           [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
            c]() mutable {
             auto gy = out.grad();
             auto gv = gain.data();
             if (gain.requires_grad() || bias.requires_grad()) {
               for (std::size_t i = 0; i < r; ++i)
                 for (std::size_t j = 0; j < c; ++j) {
                   if (gain.requires_grad()) gain.grad()[j] += gy[i * c + j] * xhat[i * c + j];
                   if (bias.requires_grad()) bias.grad()[j] += gy[i * c + j];
                 }
             }
             if (!x.requires_grad()) return;
             auto gx = x.grad();
             const double inv_c = 1.0 / static_cast<double>(c);
             for (std::size_t i = 0; i < r; ++i) {
               double mean_d = 0.0, mean_dx = 0.0;
               for (std::size_t j = 0; j < c; ++j) {
                 const double dxh = gy[i * c + j] * gv[j];
                 mean_d += dxh;
                 mean_dx += dxh * xhat[i * c + j];
               }
               mean_d *= inv_c;
               mean_dx *= inv_c;
               for (std::size_t j = 0; j < c; ++j) {
                 const double dxh = gy[i * c + j] * gv[j];
                 gx[i * c + j] += inv_std[i] * (dxh - mean_d - xhat[i * c + j] * mean_dx);
               }
             }
           });
  }
  return out;
}

Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    double smoothing, int ignore_id) {
  require_rank(logits, 2, "cross_entropy");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("cross_entropy: smoothing must be in [0, 1)");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  if (vocab < 2) throw DimensionError("cross_entropy: vocabulary must have at least 2 entries");
  for (int t : targets)
    if (t != ignore_id && (t < 0 || static_cast<std::size_t>(t) >= vocab))
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(vocab));

  const double on = 1.0 - smoothing;
  const double off = smoothing / static_cast<double>(vocab - 1);
  // Constant sum q log q of the smoothed target, 0 log 0 = 0.
  double entropy_term = on > 0.0 ? on * std::log(on) : 0.0;
  if (off > 0.0) entropy_term += static_cast<double>(vocab - 1) * off * std::log(off);

  std::vector<double> probs(n * vocab);
  kernels::softmax_rows(n, vocab, logits.data(), probs);
  std::size_t valid = 0;
  double total = 0.0;
  auto lv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_id) continue;
    ++valid;
    const double* row = lv.data() + i * vocab;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    double cross = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double q = (static_cast<int>(j) == targets[i]) ? on : off;
      if (q > 0.0) cross -= q * (row[j] - lse);
    }
    total += entropy_term + cross;
  }
  const bool track = tracking({&logits}) && valid > 0;
  const double denom = valid > 0 ? static_cast<double>(valid) : 1.0;
  Tensor out = Tensor::from({1}, {total / denom}, track);
  if (track) {
    std::vector<int> tv(targets.begin(), targets.end());
    record({logits}, out,
           [logits, out, probs = std::move(probs), tv, vocab, on, off, denom,
            ignore_id]() mutable {
             const double g = out.grad()[0] / denom;
             auto gl = logits.grad();
             for (std::size_t i = 0; i < tv.size(); ++i) {
               if (tv[i] == ignore_id) continue;
               for (std::size_t j = 0; j < vocab; ++j) {
                 const double q = (static_cast<int>(j) == tv[i]) ? on : off;
                 gl[i * vocab + j] += g * (probs[i * vocab + j] - q);
               }
             }
           });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const AttentionMask& mask, AttentionWeights* weights) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  require_same(k, v, "attention");
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d)
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " widths differ");
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(d));
  if (!mask.empty() && (mask.queries != lq || mask.keys != lk))
    throw DimensionError("attention: mask " + std::to_string(mask.queries) + "x" +
                         std::to_string(mask.keys) + " does not match scores " +
                         std::to_string(lq) + "x" + std::to_string(lk));

  const bool track = tracking({&q, &k, &v});
  Tensor out = Tensor::zeros({lq, d}, track);
  std::vector<double> probs(heads * lq * lk);
  kernels::attention_forward(lq, lk, d, heads, q.data(), k.data(), v.data(), mask.allow, probs,
                             out.data());
  if (weights != nullptr) *weights = AttentionWeights{heads, lq, lk, probs};

  if (track) {
    record({q, k, v}, out, [q, k, v, out, probs = std::move(probs), heads, lq, lk, d]() mutable {
      const std::size_t dh = d / heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      auto go = out.grad();
      auto qd = q.data(), kd = k.data(), vd = v.data();
      std::vector<double> dp(lk);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < lq; ++i) {
          const double* p = probs.data() + (h * lq + i) * lk;
          const double* goi = go.data() + i * d + h * dh;
          double dot = 0.0;
          for (std::size_t j = 0; j < lk; ++j) {
            double s = 0.0;
            if (p[j] != 0.0) {
              const double* vj = vd.data() + j * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) s += goi[c] * vj[c];
            }
            dp[j] = s;
            dot += p[j] * s;
          }
          if (v.requires_grad()) {
            auto gv = v.grad();
            for (std::size_t j = 0; j < lk; ++j) {
              if (p[j] == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) gv[j * d + h * dh + c] += p[j] * goi[c];
            }
          }
          for (std::size_t j = 0; j < lk; ++j) {
            if (p[j] == 0.0) continue;
            const double ds = p[j] * (dp[j] - dot) * scale;
            if (q.requires_grad()) {
              auto gq = q.grad();
              for (std::size_t c = 0; c < dh; ++c) gq[i * d + h * dh + c] += ds * kd[j * d + h * dh + c];
            }
            if (k.requires_grad()) {
              auto gk = k.grad();
              for (std::size_t c = 0; c < dh; ++c) gk[j * d + h * dh + c] += ds * qd[i * d + h * dh + c];
            }
          }
        }
    });
  }
  return out;
}

}  // namespace dslu::ops
