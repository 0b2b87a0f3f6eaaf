#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smmix/ops.hpp"
#include "test_helpers.hpp"

using namespace smmix;
using smmix_test::gradient_check;
using smmix_test::random_distribution_rows;

namespace {
Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, bool rg = true) {
  Tensor<double> t(std::move(shape), rg);
  for (auto& v : t.value()) v = rng.uniform(-1.0, 1.0);
  return t;
}
}  // namespace

TEST_CASE("matmul identity and zero") {
  Tape<double> tape;
  Rng rng(7);
  auto m = random_tensor({3, 3}, rng, false);
  auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = ops::matmul(tape, eye, m);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(out.value()[i] == doctest::Approx(m.value()[i]));

  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto z = Tensor<double>::from({2, 2}, {0, 0, 0, 0});
  auto out2 = ops::matmul(tape, a, z);
  for (double v : out2.value()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Tape<double> tape;
  auto a = Tensor<double>({2, 3});
  auto b = Tensor<double>({4, 5});
  try {
    ops::matmul(tape, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs finite differences, 5x7 * 7x3") {
  Rng rng(11);
  auto a = random_tensor({5, 7}, rng);
  auto b = random_tensor({7, 3}, rng);
  double err = gradient_check(
      [&](Tape<double>& t) { return ops::sum_all(t, ops::matmul(t, a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("matmul transpose variants gradient") {
  Rng rng(13);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      auto a = ta ? random_tensor({4, 3}, rng) : random_tensor({3, 4}, rng);
      auto b = tb ? random_tensor({2, 4}, rng) : random_tensor({4, 2}, rng);
      double err = gradient_check(
          [&](Tape<double>& t) { return ops::sum_all(t, ops::matmul(t, a, b, ta, tb)); }, {a, b});
      CHECK(err < 1e-6);
    }
}

TEST_CASE("softmax symmetry, stability and closed form") {
  Tape<double> tape;
  auto s = ops::softmax_rows(tape, Tensor<double>::from({3}, {0, 0, 0}));
  for (double v : s.value()) CHECK(v == doctest::Approx(1.0 / 3));

  auto big = ops::softmax_rows(tape, Tensor<double>::from({2}, {1000, 1000}));
  CHECK(big.value()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(big.value()[1]));

  // closed form for [1,2,3]
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  auto t = ops::softmax_rows(tape, Tensor<double>::from({3}, {1, 2, 3}));
  CHECK(std::abs(t.value()[0] - std::exp(1.0) / z) < 1e-12);
  CHECK(std::abs(t.value()[1] - std::exp(2.0) / z) < 1e-12);
  CHECK(std::abs(t.value()[2] - std::exp(3.0) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to 1 and lie in (0,1]") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Tape<double> tape;
    auto x = random_tensor({4, 6}, rng, false);
    auto y = ops::softmax_rows(tape, x);
    for (int r = 0; r < 4; ++r) {
      double sum = 0;
      for (int c = 0; c < 6; ++c) {
        CHECK(y.at(r, c) > 0.0);
        CHECK(y.at(r, c) <= 1.0);
        sum += y.at(r, c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("layer_norm trivial cases") {
  Tape<double> tape;
  auto gamma = Tensor<double>::from({3}, {1, 1, 1});
  auto beta = Tensor<double>::from({3}, {0, 0, 0});
  auto y = ops::layer_norm_rows(tape, Tensor<double>::from({3}, {5, 5, 5}), gamma, beta, 1e-6);
  for (double v : y.value()) CHECK(v == doctest::Approx(0.0));

  auto g0 = Tensor<double>::from({3}, {0, 0, 0});
  auto b = Tensor<double>::from({3}, {1, 2, 3});
  auto y2 = ops::layer_norm_rows(tape, Tensor<double>::from({3}, {0.3, -2, 9}), g0, b, 1e-6);
  CHECK(y2.value()[0] == doctest::Approx(1.0));
  CHECK(y2.value()[1] == doctest::Approx(2.0));
  CHECK(y2.value()[2] == doctest::Approx(3.0));
}

TEST_CASE("gelu values and asymptotes") {
  Tape<double> tape;
  auto y = ops::gelu(tape, Tensor<double>::from({3}, {0.0, 8.0, -8.0}));
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(std::abs(y.value()[2]) < 1e-9);

  double x = 1.0;
  double expected = 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
  auto y1 = ops::gelu(tape, Tensor<double>::scalar(1.0));
  CHECK(std::abs(y1.value()[0] - expected) < 1e-12);
}

TEST_CASE("cross entropy forced values") {
  Tape<double> tape;
  // uniform logits, one-hot target -> ln C
  for (int C : {2, 4, 7}) {
    auto logits = Tensor<double>({1, C});
    auto target = Tensor<double>({1, C});
    target.at(0, 0) = 1.0;
    auto l = ops::cross_entropy_soft(tape, logits, target);
    CHECK(l.value()[0] == doctest::Approx(std::log(double(C))).epsilon(1e-9));
  }
  // logits [2,0], one-hot class 0 -> ln(1+e^-2)
  auto l = ops::cross_entropy_soft(tape, Tensor<double>::from({1, 2}, {2, 0}),
                                   Tensor<double>::from({1, 2}, {1, 0}));
  CHECK(l.value()[0] == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-9));
}

TEST_CASE("cross entropy equals entropy at matching target") {
  Rng rng(17);
  Tape<double> tape;
  auto logits = random_tensor({3, 5}, rng, false);
  auto probs = ops::softmax_rows(tape, logits);
  auto target = Tensor<double>::from(probs.shape(), probs.value());
  double entropy = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) entropy -= target.at(r, c) * std::log(target.at(r, c));
  entropy /= 3;
  auto l = ops::cross_entropy_soft(tape, logits, target);
  CHECK(l.value()[0] == doctest::Approx(entropy).epsilon(1e-9));
}

TEST_CASE("cross entropy rejects non-distribution target") {
  Tape<double> tape;
  auto logits = Tensor<double>({1, 3});
  CHECK_THROWS_AS(
      ops::cross_entropy_soft(tape, logits, Tensor<double>::from({1, 3}, {0.5, 0.2, 0.2})),
      ValidationError);
  CHECK_THROWS_AS(
      ops::cross_entropy_soft(tape, logits, Tensor<double>::from({1, 3}, {1.5, -0.5, 0.0})),
      ValidationError);
}

TEST_CASE("cross entropy nonnegative") {
  Rng rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    Tape<double> tape;
    auto logits = random_tensor({2, 4}, rng, false);
    auto target = random_distribution_rows(2, 4, rng);
    CHECK(ops::cross_entropy_soft(tape, logits, target).value()[0] >= 0.0);
  }
}

TEST_CASE("kl divergence identity, closed form, nonnegativity") {
  Tape<double> tape;
  Rng rng(29);
  auto p = random_distribution_rows(3, 4, rng);
  CHECK(ops::kl_divergence(tape, p, p).value()[0] == doctest::Approx(0.0));

  auto one_hot = Tensor<double>::from({1, 2}, {1, 0});
  auto half = Tensor<double>::from({1, 2}, {0.5, 0.5});
  CHECK(ops::kl_divergence(tape, one_hot, half).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  for (int rep = 0; rep < 1000; ++rep) {
    auto a = random_distribution_rows(1, 5, rng);
    auto b = random_distribution_rows(1, 5, rng);
    CHECK(ops::kl_divergence(tape, a, b).value()[0] >= 0.0);
  }
}

TEST_CASE("kl divergence rejects non-distribution rows") {
  Tape<double> tape;
  auto good = Tensor<double>::from({1, 2}, {0.5, 0.5});
  auto bad = Tensor<double>::from({1, 2}, {0.9, 0.3});
  CHECK_THROWS_AS(ops::kl_divergence(tape, good, bad), ValidationError);
  CHECK_THROWS_AS(ops::kl_divergence(tape, bad, good), ValidationError);
}

TEST_CASE("backward basics: ones, accumulation, determinism") {
  // loss = sum(x) -> grad all ones
  {
    Tape<double> tape;
    auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    tape.backward(ops::sum_all(tape, x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  // tensor used twice -> grad doubled
  {
    Tape<double> tape;
    auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
    auto loss = ops::sum_all(tape, ops::add(tape, x, x));
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 2.0);
  }
  // bit-identical gradients across two runs of the same graph
  {
    Rng rng(31);
    auto a = random_tensor({6, 6}, rng);
    auto b = random_tensor({6, 6}, rng);
    std::vector<double> first;
    for (int run = 0; run < 2; ++run) {
      Tape<double> tape;
      auto loss = ops::sum_all(tape, ops::gelu(tape, ops::matmul(tape, a, b)));
      a.zero_grad();
      b.zero_grad();
      tape.backward(loss);
      if (run == 0)
        first = a.grad();
      else
        for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == first[i]);
    }
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> tape;
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  auto y = ops::scale(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ValidationError);
}

TEST_CASE("nan diagnostic names the offending node") {
  Tape<double> tape;
  tape.nan_check = true;
  auto x = Tensor<double>::from({2}, {1e308, 1e308}, true);
  auto y = ops::mul(tape, x, x);  // overflows to inf
  auto loss = ops::sum_all(tape, y);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("mul"), NumericError);
}

// The suite-wide property: every differentiable op under 1e-4 relative error
// on >= 5 random shapes each.
TEST_CASE("finite-difference sweep over all ops") {
  Rng rng(101);
  for (int rep = 0; rep < 5; ++rep) {
    int m = 2 + static_cast<int>(rng.next_below(4));
    int k = 2 + static_cast<int>(rng.next_below(4));
    int n = 2 + static_cast<int>(rng.next_below(4));

    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) { return ops::sum_all(t, ops::matmul(t, a, b)); }, {a, b}) <
          1e-4);

    auto x = random_tensor({m, n}, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) {
                return ops::sum_all(t, ops::mul(t, ops::softmax_rows(t, x), x));
              },
              {x}) < 1e-4);

    auto gamma = random_tensor({n}, rng);
    auto beta = random_tensor({n}, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) {
                return ops::sum_all(
                    t, ops::mul(t, ops::layer_norm_rows(t, x, gamma, beta, 1e-6), x));
              },
              {x, gamma, beta}) < 1e-4);

    CHECK(gradient_check([&](Tape<double>& t) { return ops::sum_all(t, ops::gelu(t, x)); }, {x}) <
          1e-4);

    auto logits = random_tensor({m, n}, rng);
    auto target = random_distribution_rows(m, n, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) { return ops::cross_entropy_soft(t, logits, target); },
              {logits}) < 1e-4);

    auto plogits = random_tensor({m, n}, rng);
    auto qlogits = random_tensor({m, n}, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) {
                return ops::kl_divergence(t, ops::softmax_rows(t, plogits),
                                          ops::softmax_rows(t, qlogits));
              },
              {plogits, qlogits}) < 1e-4);

    auto v = random_tensor({n}, rng);
    CHECK(gradient_check(
              [&](Tape<double>& t) {
                return ops::sum_all(t, ops::gelu(t, ops::add_rowvec(t, x, v)));
              },
              {x, v}) < 1e-4);

    auto groups = std::vector<std::vector<int>>{{0}, {0, m - 1}};
    CHECK(gradient_check(
              [&](Tape<double>& t) {
                return ops::sum_all(t, ops::gelu(t, ops::group_mean_rows(t, x, groups)));
              },
              {x}) < 1e-4);
  }
}
