#include "dslu/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dslu::kernels {
namespace {

// Work below this many multiply-adds stays on the calling thread.
constexpr std::size_t kParallelThreshold = 1 << 15;

// One output row of op(A) * op(B). Shared by both variants so the summation
// order is identical.
inline void gemm_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const double* a,
                     Trans ta, const double* b, Trans tb, double* c, bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  if (tb == Trans::kNo) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = (ta == Trans::kNo) ? a[i * k + p] : a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      if (ta == Trans::kNo) {
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
      }
      crow[j] += acc;
    }
  }
}

inline void softmax_row(std::size_t cols, const double* in, double* out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double e = (in[j] == -INFINITY) ? 0.0 : std::exp(in[j] - mx);
    out[j] = e;
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

inline void normalize_row(std::size_t cols, double eps, const double* in, double* out,
                          double* inv_std) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += in[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double dv = in[j] - mean;
    var += dv * dv;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < cols; ++j) out[j] = (in[j] - mean) * is;
}


// Attention for one (head, query) pair.
inline void attention_row(std::size_t h, std::size_t i, std::size_t lq, std::size_t lk,
                          std::size_t d, std::size_t heads, const double* q, const double* k,
                          const double* v, const unsigned char* allow, double* probs,
                          double* out) {
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double* p = probs + (h * lq + i) * lk;
  const double* qi = q + i * d + h * dh;
  double mx = -INFINITY;
  for (std::size_t j = 0; j < lk; ++j) {
    if (allow != nullptr && allow[i * lk + j] == 0) {
      p[j] = -INFINITY;
      continue;
    }
    const double* kj = k + j * d + h * dh;
    double s = 0.0;
    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
    p[j] = s * scale;
    mx = std::max(mx, p[j]);
  }
  if (mx == -INFINITY) throw std::invalid_argument("attention: query row has no visible key");
  double sum = 0.0;
  for (std::size_t j = 0; j < lk; ++j) {
    p[j] = (p[j] == -INFINITY) ? 0.0 : std::exp(p[j] - mx);
    sum += p[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < lk; ++j) p[j] *= inv;
  double* oi = out + i * d + h * dh;
  std::fill(oi, oi + dh, 0.0);
  for (std::size_t j = 0; j < lk; ++j) {
    if (p[j] == 0.0) continue;
    const double* vj = v + j * d + h * dh;
    for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
  }
}

}  // namespace

namespace serial {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, Trans ta,
          std::span<const double> b, Trans tb, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_row(i, m, n, k, a.data(), ta, b.data(), tb, c.data(), accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, in.data() + r * cols, out.data() + r * cols);
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> inv_std) {
  for (std::size_t r = 0; r < rows; ++r)
    normalize_row(cols, eps, in.data() + r * cols, out.data() + r * cols, inv_std.data() + r);
}

void attention_forward(std::size_t lq, std::size_t lk, std::size_t d, std::size_t heads,
                       std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const unsigned char> allow,
                       std::span<double> probs, std::span<double> out) {
  const unsigned char* al = allow.empty() ? nullptr : allow.data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < lq; ++i)
      attention_row(h, i, lq, lk, d, heads, q.data(), k.data(), v.data(), al, probs.data(),
                    out.data());
}

}  // namespace serial

namespace omp {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, Trans ta,
          std::span<const double> b, Trans tb, std::span<double> c, bool accumulate) {
  const bool par = m > 1 && m * n * k >= kParallelThreshold;
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i)
    gemm_row(static_cast<std::size_t>(i), m, n, k, a.data(), ta, b.data(), tb, c.data(),
             accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out) {
  const bool par = rows > 1 && rows * cols >= kParallelThreshold;
  const long nr = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (par)
  for (long r = 0; r < nr; ++r)
    softmax_row(cols, in.data() + r * cols, out.data() + r * cols);
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> inv_std) {
  const bool par = rows > 1 && rows * cols >= kParallelThreshold;
  const long nr = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (par)
  for (long r = 0; r < nr; ++r)
    normalize_row(cols, eps, in.data() + r * cols, out.data() + r * cols, inv_std.data() + r);
}

void attention_forward(std::size_t lq, std::size_t lk, std::size_t d, std::size_t heads,
                       std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const unsigned char> allow,
                       std::span<double> probs, std::span<double> out) {
  const unsigned char* al = allow.empty() ? nullptr : allow.data();
  const long work = static_cast<long>(heads * lq);
  const bool par = work > 1 && heads * lq * lk * d >= kParallelThreshold;
  bool failed = false;
#pragma omp parallel for schedule(static) if (par) reduction(|| : failed)
  for (long w = 0; w < work; ++w) {
    try {
      attention_row(static_cast<std::size_t>(w) / lq, static_cast<std::size_t>(w) % lq, lq, lk,
                    d, heads, q.data(), k.data(), v.data(), al, probs.data(), out.data());
    } catch (const std::invalid_argument&) {
      failed = true;
    }
  }
  if (failed) throw std::invalid_argument("attention: query row has no visible key");
}

}  // namespace omp
}  // namespace dslu::kernels
