#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dslu/corpus.hpp"
#include "dslu/model.hpp"
#include "dslu/rng.hpp"
#include "dslu/tensor.hpp"

namespace testing {

// A corpus small enough for unit tests: 4 intents, 8-dim features.
dslu::Corpus tiny_corpus(std::uint64_t seed = 3, double noise = 0.3);

// d=8, one layer everywhere; o differs from d so the projection is real.
dslu::ModelConfig tiny_model_config(std::uint64_t seed = 5, bool zero_heads = true);
dslu::TwoPassModel tiny_model(const dslu::Corpus& corpus, std::uint64_t seed = 5,
                              bool zero_heads = true);

dslu::Tensor random_tensor(dslu::Shape shape, dslu::Rng& rng, double lo = -2.0, double hi = 2.0,
                           bool requires_grad = false);

// Naive triple loop.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n);

// Central difference of f with respect to x[i].
double central_difference(const std::function<double()>& f, double& x, double h = 1e-5);

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

bool same_parameters(const dslu::nn::ParamList& a, const dslu::nn::ParamList& b);
// Deep copy of the values of a parameter list.
std::vector<std::vector<double>> snapshot(const dslu::nn::ParamList& params);
bool unchanged(const dslu::nn::ParamList& params, const std::vector<std::vector<double>>& snap);

}  // namespace testing
