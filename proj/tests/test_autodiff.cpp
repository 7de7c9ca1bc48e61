#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dslu/kernels.hpp"
#include "dslu/ops.hpp"
#include "dslu/optim.hpp"
#include "support.hpp"

using namespace dslu;
using testing::central_difference;
using testing::random_tensor;
using testing::relative_error;

namespace {

// Checks d(f)/d(x) for every element of every input against central
// differences. `f` builds a scalar from the inputs.
double max_gradient_error(std::vector<Tensor> inputs,
                          const std::function<Tensor(const std::vector<Tensor>&)>& f) {
  for (auto& t : inputs) t.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(f(inputs));
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double numeric =
          central_difference([&] { return f(inputs).item(); }, t.data()[i], 1e-5);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
  }
  return worst;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor weighted(const Tensor& y) {
  std::vector<double> w(y.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return ops::sum(ops::mul(y, Tensor::from(y.shape(), w)));
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(ops::matmul(eye, m).values() == std::vector<double>{1, 2, 3, 4});
  const Tensor p = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(ops::matmul(p, b).values() == std::vector<double>{5, 6, 0, 0});

  Rng rng(11);
  const Tensor a = random_tensor({3, 4}, rng), c = random_tensor({4, 2}, rng);
  const auto want = testing::matmul_oracle(a.values(), c.values(), 3, 4, 2);
  const Tensor got = ops::matmul(a, c);
  CHECK(got.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.values()[i] - want[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
  try {
    ops::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const Tensor u = ops::softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = ops::softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(big.values()[0] == 1.0);
  CHECK(big.values()[1] >= 0.0);
  CHECK(big.values()[1] < 1e-300);
  CHECK(std::isfinite(big.values()[1]));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 7}, rng, -30, 30);
    const Tensor y = ops::softmax(x, 1);
    std::vector<double> shifted = x.values();
    for (auto& v : shifted) v += 123.25;
    const Tensor ys = ops::softmax(Tensor::from({4, 7}, shifted), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      std::size_t arg = 0, arg_s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y(r, c) >= 0.0);
        s += y(r, c);
        if (y(r, c) > y(r, arg)) arg = c;
        if (ys(r, c) > ys(r, arg_s)) arg_s = c;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
      CHECK(arg == arg_s);
    }
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(3);
  CHECK(max_gradient_error({random_tensor({3, 5}, rng)},
                           [](const auto& in) { return weighted(ops::softmax(in[0], 1)); }) <
        1e-6);
  CHECK(max_gradient_error({random_tensor({4, 3}, rng)},
                           [](const auto& in) { return weighted(ops::softmax(in[0], 0)); }) <
        1e-6);
}

TEST_CASE("layer_norm examples") {
  const Tensor gain = Tensor::full({4}, 1.0), zero = Tensor::zeros({4});
  const Tensor flat = ops::layer_norm(Tensor::full({2, 4}, 3.5), gain, zero);
  for (double v : flat.values()) CHECK(v == 0.0);

  Rng rng(4);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor plain = ops::layer_norm(x, gain, zero);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 4; ++c) mean += plain(r, c) / 4.0;
    for (std::size_t c = 0; c < 4; ++c) var += (plain(r, c) - mean) * (plain(r, c) - mean) / 4.0;
    CHECK(std::abs(mean) < 1e-9);
    // eps = 1e-5 keeps the variance just under one.
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
  const Tensor shifted = ops::layer_norm(x, gain, Tensor::full({4}, 0.75));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < 4; ++c) mean += shifted(r, c) / 4.0;
    CHECK(std::abs(mean - 0.75) < 1e-12);
  }
  CHECK_THROWS_AS(Tensor::zeros({3, 0}), DimensionError);
  CHECK_THROWS_AS(ops::layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(5);
  CHECK(max_gradient_error({random_tensor({3, 6}, rng), random_tensor({6}, rng),
                            random_tensor({6}, rng)},
                           [](const auto& in) {
                             return weighted(ops::layer_norm(in[0], in[1], in[2]));
                           }) < 1e-5);
}

TEST_CASE("cross entropy examples") {
  const int target[] = {2};
  const Tensor confident = Tensor::from({1, 4}, {0, 0, 60, 0});
  CHECK(ops::cross_entropy_label_smoothed(confident, target, 0.0).item() < 1e-20);
  const Tensor uniform = Tensor::zeros({1, 4});
  CHECK(std::abs(ops::cross_entropy_label_smoothed(uniform, target, 0.0).item() - std::log(4.0)) <
        1e-12);

  // Direct summation: sum_j q_j (log q_j - log p_j).
  const std::vector<double> z = {0.3, -1.2, 2.0, 0.5};
  double lse = 0.0;
  for (double v : z) lse += std::exp(v);
  lse = std::log(lse);
  double want = 0.0;
  for (int j = 0; j < 4; ++j) {
    const double q = j == 2 ? 0.9 : 0.1 / 3.0;
    want += q * (std::log(q) - (z[static_cast<std::size_t>(j)] - lse));
  }
  const double got = ops::cross_entropy_label_smoothed(Tensor::from({1, 4}, z), target, 0.1).item();
  CHECK(std::abs(got - want) < 1e-12);

  const int bad[] = {4};
  CHECK_THROWS_AS(ops::cross_entropy_label_smoothed(uniform, bad, 0.1), std::out_of_range);
  CHECK_THROWS(ops::cross_entropy_label_smoothed(uniform, target, 1.0));
}

TEST_CASE("cross entropy with no smoothing is plain negative log likelihood") {
  Rng rng(6);
  const Tensor logits = random_tensor({5, 6}, rng, -3, 3);
  const std::vector<int> targets = {0, 5, -1, 2, 3};
  double want = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < 5; ++r) {
    if (targets[r] < 0) continue;
    double lse = 0.0;
    for (std::size_t c = 0; c < 6; ++c) lse += std::exp(logits(r, c));
    want += std::log(lse) - logits(r, static_cast<std::size_t>(targets[r]));
    ++n;
  }
  want /= n;
  CHECK(std::abs(ops::cross_entropy_label_smoothed(logits, targets, 0.0, -1).item() - want) <
        1e-12);
  CHECK(max_gradient_error({logits.clone()}, [&](const auto& in) {
          return ops::cross_entropy_label_smoothed(in[0], targets, 0.1, -1);
        }) < 1e-6);
}

TEST_CASE("backward examples and errors") {
  Rng rng(7);
  Tensor x = random_tensor({2, 3}, rng, -2, 2, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS_AS(tape.backward(ops::sum(x)), TapeError);
  }
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(ops::mul(x, x)));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.values()[i]);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    CHECK_THROWS_AS(tape.backward(ops::scale(x, 2.0)), TapeError);
    // After reset the tape accepts a new graph.
    tape.reset();
    x.zero_grad();
    tape.backward(ops::sum(x));
    CHECK(x.grad()[0] == 1.0);
  }
}

TEST_CASE("ops record only with a tracked input") {
  Tape tape;
  TapeScope scope(tape);
  ops::matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
  CHECK(tape.size() == 0);
  ops::matmul(Tensor::zeros({2, 2}, true), Tensor::zeros({2, 2}));
  CHECK(tape.size() == 1);
}

TEST_CASE("primitive op gradients match finite differences") {
  Rng rng(8);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  CHECK(max_gradient_error({r({3, 4}), r({4, 2})},
                           [](const auto& in) { return weighted(ops::matmul(in[0], in[1])); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 3}), r({2, 3})},
                           [](const auto& in) { return weighted(ops::add(in[0], in[1])); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 3}), r({3})},
                           [](const auto& in) { return weighted(ops::add_bias(in[0], in[1])); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 3}), r({2, 3})},
                           [](const auto& in) { return weighted(ops::mul(in[0], in[1])); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 3})},
                           [](const auto& in) { return weighted(ops::scale(in[0], -1.5)); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 3}), r({1, 3})}, [](const auto& in) {
          return weighted(ops::concat({in[0], in[1]}, 0));
        }) < 1e-4);
  CHECK(max_gradient_error({r({2, 3}), r({2, 2})}, [](const auto& in) {
          return weighted(ops::concat({in[0], in[1]}, 1));
        }) < 1e-4);
  CHECK(max_gradient_error({r({4, 3})},
                           [](const auto& in) { return weighted(ops::slice(in[0], 0, 1, 3)); }) <
        1e-4);
  CHECK(max_gradient_error({r({4, 3})},
                           [](const auto& in) { return weighted(ops::slice(in[0], 1, 1, 2)); }) <
        1e-4);
  CHECK(max_gradient_error({r({2, 6})}, [](const auto& in) {
          return weighted(ops::reshape(in[0], {3, 4}));
        }) < 1e-4);
  CHECK(max_gradient_error({r({2, 5})},
                           [](const auto& in) { return weighted(ops::transpose(in[0])); }) < 1e-4);
  const std::vector<int> ids = {2, 0, 2, 1};
  CHECK(max_gradient_error({r({3, 4})},
                           [&](const auto& in) { return weighted(ops::embedding(in[0], ids)); }) <
        1e-4);
  CHECK(max_gradient_error({r({3, 4})},
                           [](const auto& in) { return weighted(ops::gelu(in[0])); }) < 1e-4);
  CHECK(max_gradient_error({r({3, 4}), r({2, 4}), r({2, 4})}, [](const auto& in) {
          return weighted(ops::attention(in[0], in[1], in[2], 2, {}));
        }) < 1e-4);
  const auto causal = ops::AttentionMask{3, 3, {1, 0, 0, 1, 1, 0, 1, 1, 1}};
  CHECK(max_gradient_error({r({3, 4}), r({3, 4}), r({3, 4})}, [&](const auto& in) {
          return weighted(ops::attention(in[0], in[1], in[2], 1, causal));
        }) < 1e-4);
}

TEST_CASE("dropout applies only in train mode") {
  Rng rng(9);
  const Tensor x = random_tensor({20, 20}, rng);
  Rng d1(1);
  CHECK(ops::dropout(x, 0.5, false, d1).values() == x.values());
  const Tensor y = ops::dropout(x, 0.25, true, d1);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y.values()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(std::abs(y.values()[i] - x.values()[i] / 0.75) < 1e-15);
    }
  }
  CHECK(zeros > 50);
  CHECK(zeros < 150);
  Rng d2(1), d3(1);
  CHECK(ops::dropout(x, 0.3, true, d2).values() == ops::dropout(x, 0.3, true, d3).values());
  // Gradient passes through kept cells with the same scale.
  Tensor xt = x.clone();
  xt.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Rng d4(2);
  const Tensor z = ops::dropout(xt, 0.4, true, d4);
  tape.backward(ops::sum(z));
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(xt.grad()[i] == (z.values()[i] == 0.0 ? 0.0 : 1.0 / 0.6));
}

TEST_CASE("concat then complementary slice is identity") {
  Rng rng(10);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4, 3}, rng);
  const Tensor c = ops::concat({a, b}, 0);
  CHECK(ops::slice(c, 0, 0, 2).values() == a.values());
  CHECK(ops::slice(c, 0, 2, 6).values() == b.values());
  const Tensor d = random_tensor({2, 5}, rng);
  const Tensor e = ops::concat({a, d}, 1);
  CHECK(ops::slice(e, 1, 0, 3).values() == a.values());
  CHECK(ops::slice(e, 1, 3, 8).values() == d.values());
  CHECK_THROWS_AS(ops::concat({a, d}, 0), DimensionError);
  CHECK_THROWS_AS(ops::add(a, d), DimensionError);
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(12);
    Tensor w = random_tensor({4, 4}, rng, -1, 1, true);
    const Tensor x = random_tensor({3, 4}, rng);
    Tape tape;
    TapeScope scope(tape);
    Rng drop(3);
    const Tensor y = ops::dropout(ops::gelu(ops::matmul(x, w)), 0.2, true, drop);
    const Tensor loss = weighted(ops::softmax(y, 1));
    tape.backward(loss);
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer examples") {
  AdamConfig cfg;
  cfg.peak_lr = 0.01;
  cfg.warmup_steps = 4;
  {
    std::vector<Tensor> params = {Tensor::from({2}, {1.5, -2.0}, true)};
    auto st = make_optimizer_state(params, cfg);
    optimizer_step(params, st);
    CHECK(params[0].values() == std::vector<double>{1.5, -2.0});
    CHECK(st.step == 1);
  }
  {
    // One step from known moments, evaluated by hand.
    std::vector<Tensor> params = {Tensor::from({1}, {0.5}, true)};
    auto st = make_optimizer_state(params, cfg);
    st.step = 2;
    st.first_moment[0][0] = 0.2;
    st.second_moment[0][0] = 0.05;
    params[0].grad()[0] = -0.4;
    optimizer_step(params, st);
    const double m = 0.9 * 0.2 + 0.1 * -0.4;
    const double v = 0.98 * 0.05 + 0.02 * 0.16;
    const double lr = 0.01 * 3.0 / 4.0;
    const double mhat = m / (1.0 - std::pow(0.9, 3.0));
    const double vhat = v / (1.0 - std::pow(0.98, 3.0));
    const double want = 0.5 - lr * mhat / (std::sqrt(vhat) + 1e-9);
    CHECK(std::abs(params[0].values()[0] - want) < 1e-12);
    CHECK(st.step == 3);
  }
  {
    std::vector<Tensor> params = {Tensor::from({2}, {1, 2}, false)};
    auto st = make_optimizer_state(params, cfg);
    CHECK_THROWS(optimizer_step(params, st));
  }
}

TEST_CASE("learning rate warms up then decays") {
  AdamConfig cfg;
  cfg.peak_lr = 1.0;
  cfg.warmup_steps = 10;
  CHECK(learning_rate(cfg, 1) == doctest::Approx(0.1));
  CHECK(learning_rate(cfg, 10) == doctest::Approx(1.0));
  CHECK(learning_rate(cfg, 40) == doctest::Approx(0.5));
}

TEST_CASE("optimizer runs are bit identical") {
  auto run = [] {
    Rng rng(13);
    std::vector<Tensor> params = {random_tensor({3, 3}, rng, -1, 1, true),
                                  random_tensor({3}, rng, -1, 1, true)};
    auto st = make_optimizer_state(params, AdamConfig{});
    const Tensor x = random_tensor({5, 3}, rng);
    for (int step = 0; step < 10; ++step) {
      for (auto& p : params) p.zero_grad();
      Tape tape;
      TapeScope scope(tape);
      tape.backward(weighted(ops::gelu(ops::add_bias(ops::matmul(x, params[0]), params[1]))));
      clip_grad_norm(params, 0.5);
      optimizer_step(params, st);
    }
    std::vector<double> out = params[0].values();
    out.insert(out.end(), params[1].values().begin(), params[1].values().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("gradient clipping caps the global norm") {
  std::vector<Tensor> params = {Tensor::zeros({2}, true), Tensor::zeros({1}, true)};
  params[0].grad()[0] = 3.0;
  params[0].grad()[1] = 0.0;
  params[1].grad()[0] = 4.0;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(params[0].grad()[0] == doctest::Approx(0.6));
  CHECK(params[1].grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  Rng rng(14);
  const std::size_t m = 17, n = 13, k = 9;
  const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
  std::vector<double> c1(m * n), c2(m * n);
  kernels::serial::gemm(m, n, k, a.values(), kernels::Trans::kNo, b.values(), kernels::Trans::kNo,
                        c1, false);
  kernels::omp::gemm(m, n, k, a.values(), kernels::Trans::kNo, b.values(), kernels::Trans::kNo, c2,
                     false);
  CHECK(c1 == c2);
  const auto want = testing::matmul_oracle(a.values(), b.values(), m, k, n);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(c1[i] - want[i]) < 1e-12);

  std::vector<double> s1(m * k), s2(m * k), n1(m * k), n2(m * k), i1(m), i2(m);
  kernels::serial::softmax_rows(m, k, a.values(), s1);
  kernels::omp::softmax_rows(m, k, a.values(), s2);
  CHECK(s1 == s2);
  kernels::serial::normalize_rows(m, k, 1e-5, a.values(), n1, i1);
  kernels::omp::normalize_rows(m, k, 1e-5, a.values(), n2, i2);
  CHECK(n1 == n2);
  CHECK(i1 == i2);

  const Tensor q = random_tensor({5, 8}, rng), kv = random_tensor({7, 8}, rng);
  std::vector<double> p1(2 * 5 * 7), p2(2 * 5 * 7), o1(5 * 8), o2(5 * 8);
  kernels::serial::attention_forward(5, 7, 8, 2, q.values(), kv.values(), kv.values(), {}, p1, o1);
  kernels::omp::attention_forward(5, 7, 8, 2, q.values(), kv.values(), kv.values(), {}, p2, o2);
  CHECK(p1 == p2);
  CHECK(o1 == o2);
}
