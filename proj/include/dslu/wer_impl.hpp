#pragma once

#include <stdexcept>
#include <vector>

namespace dslu {

template <class Token>
EditCounts align(const std::vector<Token>& hyp, const std::vector<Token>& ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    std::size_t cost, s, i, d;
  };
  std::vector<Cell> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t r, std::size_t h) -> Cell& { return dp[r * (m + 1) + h]; };
  for (std::size_t r = 0; r <= n; ++r) at(r, 0) = {r, 0, 0, r};
  for (std::size_t h = 0; h <= m; ++h) at(0, h) = {h, 0, h, 0};
  for (std::size_t r = 1; r <= n; ++r)
    for (std::size_t h = 1; h <= m; ++h) {
      const bool same = ref[r - 1] == hyp[h - 1];
      Cell diag = at(r - 1, h - 1);
      diag.cost += same ? 0 : 1;
      diag.s += same ? 0 : 1;
      Cell ins = at(r, h - 1);
      ins.cost += 1;
      ins.i += 1;
      Cell del = at(r - 1, h);
      del.cost += 1;
      del.d += 1;
      // Ties go to the diagonal (match or substitution), then insertion.
      Cell best = diag;
      if (ins.cost < best.cost) best = ins;
      if (del.cost < best.cost) best = del;
      at(r, h) = best;
    }
  const Cell& c = at(n, m);
  return {c.s, c.i, c.d};
}

template <class Token>
double wer(const std::vector<Token>& hyp, const std::vector<Token>& ref) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  const EditCounts e = align(hyp, ref);
  return static_cast<double>(e.substitutions + e.insertions + e.deletions) /
         static_cast<double>(ref.size());
}

}  // namespace dslu
