#include <doctest.h>

#include <cmath>

#include "dslu/nnet.hpp"
#include "support.hpp"

using namespace dslu;
using namespace dslu::nn;
using testing::random_tensor;

namespace {

AttentionConfig config(std::size_t d, std::size_t h) { return {d, h, 0.0}; }

void check_rows_normalized(const std::vector<AttentionMap>& maps) {
  for (const auto& m : maps)
    for (std::size_t q = 0; q < m.queries; ++q) {
      double s = 0.0;
      for (std::size_t k = 0; k < m.keys; ++k) {
        CHECK(m.at(q, k) >= 0.0);
        s += m.at(q, k);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

Tensor row(const Tensor& x, std::size_t r) { return ops::slice(x, 0, r, r + 1); }

}  // namespace

TEST_CASE("single key attention is a unit row") {
  Rng rng(1);
  const auto mha = MultiHeadAttention::create(config(8, 2), rng);
  std::vector<AttentionMap> maps;
  mha(random_tensor({3, 8}, rng), random_tensor({1, 8}, rng), {}, 0, &maps);
  REQUIRE(maps.size() == 2);
  for (const auto& m : maps)
    for (double w : m.weights) CHECK(w == 1.0);
}

TEST_CASE("forced attention returns the value projection of the visible key") {
  Rng rng(2);
  const auto mha = MultiHeadAttention::create(config(8, 4), rng);
  const Tensor x = random_tensor({4, 8}, rng);
  ops::AttentionMask only2{4, 4, std::vector<std::uint8_t>(16, 0)};
  for (std::size_t q = 0; q < 4; ++q) only2.allow[q * 4 + 2] = 1;
  std::vector<AttentionMap> maps;
  const Tensor out = mha(x, x, only2, 0, &maps);
  const Tensor want = mha.output(mha.value(row(x, 2)));
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out(q, c) - want(0, c)) < 1e-12);
  for (const auto& m : maps)
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t k = 0; k < 4; ++k) CHECK(m.at(q, k) == (k == 2 ? 1.0 : 0.0));
}

TEST_CASE("hand-set single-head attention matches the formula") {
  Rng rng(3);
  auto mha = MultiHeadAttention::create(config(2, 1), rng);
  auto set = [](Linear& l, std::vector<double> w, std::vector<double> b) {
    l.weight = Tensor::from({2, 2}, std::move(w));
    l.bias = Tensor::from({2}, std::move(b));
  };
  set(mha.query, {1, 0.5, -0.5, 2}, {0.1, 0});
  set(mha.key, {0.3, 1, 1, -1}, {0, 0.2});
  set(mha.value, {2, 0, 1, 1}, {0, -0.1});
  set(mha.output, {1, 0, 0, 1}, {0, 0});
  const double x[2][2] = {{0.5, -1.0}, {1.5, 0.25}};
  const Tensor xt = Tensor::from({2, 2}, {x[0][0], x[0][1], x[1][0], x[1][1]});
  const Tensor got = mha(xt, xt, {}, 0, nullptr);

  auto proj = [&](const Linear& l, int r, int c) {
    const auto& w = l.weight.values();
    const auto& b = l.bias.values();
    return x[r][0] * w[static_cast<std::size_t>(c)] + x[r][1] * w[static_cast<std::size_t>(2 + c)] +
           b[static_cast<std::size_t>(c)];
  };
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j)
      s[j] = (proj(mha.query, i, 0) * proj(mha.key, j, 0) +
              proj(mha.query, i, 1) * proj(mha.key, j, 1)) /
             std::sqrt(2.0);
    const double m = std::max(s[0], s[1]);
    const double e0 = std::exp(s[0] - m), e1 = std::exp(s[1] - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    for (int c = 0; c < 2; ++c) {
      const double want = p0 * proj(mha.value, 0, c) + p1 * proj(mha.value, 1, c);
      CHECK(std::abs(got(static_cast<std::size_t>(i), static_cast<std::size_t>(c)) - want) < 1e-10);
    }
  }
}

TEST_CASE("attention shape errors") {
  Rng rng(4);
  const auto mha = MultiHeadAttention::create(config(8, 2), rng);
  CHECK_THROWS_AS(mha(random_tensor({2, 6}, rng), random_tensor({2, 8}, rng), {}, 0, nullptr),
                  DimensionError);
  CHECK_THROWS_AS(mha(random_tensor({2, 8}, rng), random_tensor({2, 4}, rng), {}, 0, nullptr),
                  DimensionError);
  CHECK_THROWS_AS(config(8, 3).validate(), DimensionError);
  CHECK_THROWS((AttentionConfig{8, 2, 1.0}.validate()));
}

TEST_CASE("masked keys receive exactly zero weight") {
  Rng rng(5);
  const auto mha = MultiHeadAttention::create(config(8, 2), rng);
  const Tensor x = random_tensor({5, 8}, rng, -4, 4);
  std::vector<AttentionMap> maps;
  mha(x, x, causal_mask(5), 0, &maps);
  check_rows_normalized(maps);
  for (const auto& m : maps)
    for (std::size_t q = 0; q < 5; ++q)
      for (std::size_t k = q + 1; k < 5; ++k) CHECK(m.at(q, k) == 0.0);
}

TEST_CASE("causal mask patterns") {
  const auto one = causal_mask(1);
  CHECK(one.allow == std::vector<std::uint8_t>{1});
  const auto three = causal_mask(3);
  CHECK(three.allow == std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0, 1, 1, 1});
}

TEST_CASE("encoder laws") {
  Rng rng(6);
  const Tensor x = random_tensor({6, 8}, rng);
  const auto none = Encoder::create(config(8, 2), 0, 16, rng);
  CHECK(encoder_forward(none, x, {}, {}).values() == x.values());
  for (std::size_t layers : {1u, 2u, 3u}) {
    const auto enc = Encoder::create(config(8, 2), layers, 16, rng);
    std::vector<AttentionMap> maps;
    const Tensor a = encoder_forward(enc, x, {}, {}, &maps);
    CHECK(a.shape() == x.shape());
    CHECK(maps.size() == layers * 2);
    check_rows_normalized(maps);
    CHECK(encoder_forward(enc, x, {}, {}).values() == a.values());
  }
  const auto enc = Encoder::create(config(8, 2), 1, 16, rng);
  CHECK_THROWS_AS(encoder_forward(enc, random_tensor({3, 5}, rng), {}, {}), DimensionError);
}

TEST_CASE("training mode applies dropout and retains no maps") {
  Rng rng(7);
  const auto enc = Encoder::create({8, 2, 0.3}, 2, 16, rng);
  const Tensor x = random_tensor({6, 8}, rng);
  Rng drop(1);
  std::vector<AttentionMap> maps;
  const Tensor t = encoder_forward(enc, x, {}, {true, &drop}, &maps);
  CHECK(maps.empty());
  CHECK(t.values() != encoder_forward(enc, x, {}, {}).values());
  CHECK_THROWS(encoder_forward(enc, x, {}, {true, nullptr}));
}

TEST_CASE("decoder cross attention and causality") {
  Rng rng(8);
  const auto dec = Decoder::create(config(8, 2), 2, 16, rng);
  {
    std::vector<AttentionMap> self_maps, cross_maps;
    decoder_forward(dec, random_tensor({1, 8}, rng), random_tensor({1, 8}, rng), causal_mask(1), {},
                    &self_maps, &cross_maps);
    for (const auto& m : cross_maps) CHECK(m.weights == std::vector<double>{1.0});
  }
  const Tensor ctx = random_tensor({5, 8}, rng);
  const Tensor tgt = random_tensor({4, 8}, rng);
  const Tensor base = decoder_forward(dec, tgt, ctx, causal_mask(4), {});
  CHECK(base.shape() == Shape{4, 8});
  for (std::size_t pos = 0; pos < 4; ++pos) {
    Tensor perturbed = tgt.clone();
    for (std::size_t c = 0; c < 8; ++c) perturbed(pos, c) += 0.75;
    const Tensor out = decoder_forward(dec, perturbed, ctx, causal_mask(4), {});
    for (std::size_t r = 0; r < pos; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(out(r, c) == base(r, c));
    bool changed = false;
    for (std::size_t c = 0; c < 8; ++c) changed |= out(pos, c) != base(pos, c);
    CHECK(changed);
  }
  CHECK_THROWS_AS(decoder_forward(dec, tgt, random_tensor({5, 6}, rng), causal_mask(4), {}),
                  DimensionError);
}

TEST_CASE("decoder gradients reach targets and context") {
  Rng rng(9);
  const auto dec = Decoder::create(config(8, 2), 1, 16, rng);
  Tensor tgt = random_tensor({3, 8}, rng, -2, 2, true);
  Tensor ctx = random_tensor({4, 8}, rng, -2, 2, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = decoder_forward(dec, tgt, ctx, causal_mask(3), {});
  tape.backward(ops::sum(ops::mul(y, random_tensor({3, 8}, rng))));
  auto nonzero = [](const Tensor& t) {
    for (double g : t.grad())
      if (g != 0.0) return true;
    return false;
  };
  CHECK(nonzero(tgt));
  CHECK(nonzero(ctx));
}

TEST_CASE("subsampler shape laws") {
  Rng rng(10);
  {
    const auto s = Subsampler::create(5, 1, 8, rng);
    const Tensor x = random_tensor({7, 5}, rng);
    const Tensor y = s(x);
    CHECK(y.shape() == Shape{7, 8});
    const Tensor want = s.proj(x);
    CHECK(y.values() == want.values());
  }
  CHECK(Subsampler::create(3, 4, 8, rng)(random_tensor({100, 3}, rng)).rows() == 25);
  for (std::size_t factor = 1; factor <= 4; ++factor) {
    const auto s = Subsampler::create(3, factor, 4, rng);
    for (std::size_t t = 1; t <= 50; ++t) {
      const std::size_t want = (t + factor - 1) / factor;
      CHECK(Subsampler::output_length(t, factor) == want);
      if (t >= factor)
        CHECK(s(random_tensor({t, 3}, rng)).rows() == want);
      else
        CHECK_THROWS_AS(s(random_tensor({t, 3}, rng)), DimensionError);
    }
  }
  CHECK_THROWS(Subsampler::create(3, 0, 4, rng));
}

TEST_CASE("subsampler pads the last group with zeros") {
  Rng rng(11);
  const auto s = Subsampler::create(2, 3, 4, rng);
  const Tensor x = random_tensor({4, 2}, rng);
  const Tensor y = s(x);
  std::vector<double> tail(6, 0.0);
  tail[0] = x(3, 0);
  tail[1] = x(3, 1);
  const Tensor want = s.proj(Tensor::from({1, 6}, tail));
  for (std::size_t c = 0; c < 4; ++c) CHECK(y(1, c) == want(0, c));
}

TEST_CASE("sinusoidal positions") {
  const Tensor p = positions(3, 4);
  CHECK(p(0, 0) == 0.0);
  CHECK(p(0, 1) == 1.0);
  CHECK(p(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(p(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)));
  CHECK(p(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}
