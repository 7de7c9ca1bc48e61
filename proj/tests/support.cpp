#include "support.hpp"

#include <algorithm>
#include <unistd.h>

namespace testing {

using namespace dslu;

Corpus tiny_corpus(std::uint64_t seed, double noise) {
  GrammarOptions go;
  go.n_intents = 4;
  go.n_templates_per_intent = 4;
  go.feat_dim = 8;
  const auto g = build_grammar(seed, go);
  SplitRequest req;
  req.n_train = 48;
  req.n_test_each = 12;
  req.n_speakers = 6;
  req.n_heldout_speakers = 2;
  req.n_extra_text = 24;
  req.noise_level = noise;
  req.synthesis.frames_per_char = 2.0;
  return make_splits(g, req, seed + 1);
}

ModelConfig tiny_model_config(std::uint64_t seed, bool zero_heads) {
  ModelConfig c;
  c.feat_dim = 8;
  c.subsample = 4;
  c.model_dim = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.acoustic_layers = 1;
  c.decoder_layers = 1;
  c.semantic_dim = 6;
  c.semantic_heads = 2;
  c.semantic_layers = 1;
  c.deliberation_layers = 1;
  c.zero_init_heads = zero_heads;
  c.init_seed = seed;
  return c;
}

TwoPassModel tiny_model(const Corpus& corpus, std::uint64_t seed, bool zero_heads) {
  return TwoPassModel::create(tiny_model_config(seed, zero_heads),
                              Vocabulary::from_grammar(corpus.grammar));
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("dslu_test_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool same_parameters(const nn::ParamList& a, const nn::ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    if (a[i].tensor.values() != b[i].tensor.values()) return false;
  }
  return true;
}

std::vector<std::vector<double>> snapshot(const nn::ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

bool unchanged(const nn::ParamList& params, const std::vector<std::vector<double>>& snap) {
  if (params.size() != snap.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].tensor.values() != snap[i]) return false;
  return true;
}

}  // namespace testing
