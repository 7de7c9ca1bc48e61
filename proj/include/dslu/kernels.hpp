#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the autodiff ops.
//
// Every kernel has a serial reference in `serial::` and an OpenMP version in
// `omp::`. The OpenMP versions partition work over output rows only, so each
// output element is accumulated in the same order as the reference and the two
// produce bit-identical results. The unqualified entry points dispatch to the
// OpenMP versions.
namespace dslu::kernels {

enum class Trans { kNo, kYes };

namespace serial {

// C[m x n] (+)= op(A) * op(B), op(A) is m x k, op(B) is k x n.
void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, Trans ta,
          std::span<const double> b, Trans tb, std::span<double> c, bool accumulate);

// Row-wise softmax over `cols`, in place-safe (out may alias in).
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out);

// Per-row layer normalization without the affine part. Writes normalized
// values and per-row inverse standard deviation.
void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> inv_std);

// Multi-head scaled dot-product attention forward. q [lq x d], k and v
// [lk x d]; `allow` is empty or lq*lk flags. Writes probs [heads x lq x lk]
// and out [lq x d]. Throws if a query row has no visible key.
void attention_forward(std::size_t lq, std::size_t lk, std::size_t d, std::size_t heads,
                       std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const unsigned char> allow,
                       std::span<double> probs, std::span<double> out);

}  // namespace serial

namespace omp {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, Trans ta,
          std::span<const double> b, Trans tb, std::span<double> c, bool accumulate);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out);
void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> inv_std);

// Multi-head scaled dot-product attention forward. q [lq x d], k and v
// [lk x d]; `allow` is empty or lq*lk flags. Writes probs [heads x lq x lk]
// and out [lq x d]. Throws if a query row has no visible key.
void attention_forward(std::size_t lq, std::size_t lk, std::size_t d, std::size_t heads,
                       std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const unsigned char> allow,
                       std::span<double> probs, std::span<double> out);

}  // namespace omp

inline void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, Trans ta,
                 std::span<const double> b, Trans tb, std::span<double> c, bool accumulate) {
  omp::gemm(m, n, k, a, ta, b, tb, c, accumulate);
}
inline void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                         std::span<double> out) {
  omp::softmax_rows(rows, cols, in, out);
}
inline void normalize_rows(std::size_t rows, std::size_t cols, double eps,
                           std::span<const double> in, std::span<double> out,
                           std::span<double> inv_std) {
  omp::normalize_rows(rows, cols, eps, in, out, inv_std);
}

inline void attention_forward(std::size_t lq, std::size_t lk, std::size_t d, std::size_t heads,
                              std::span<const double> q, std::span<const double> k,
                              std::span<const double> v, std::span<const unsigned char> allow,
                              std::span<double> probs, std::span<double> out) {
  omp::attention_forward(lq, lk, d, heads, q, k, v, allow, probs, out);
}

}  // namespace dslu::kernels
