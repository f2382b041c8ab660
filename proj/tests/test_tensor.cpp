#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fgdcc/errors.hpp"
#include "fgdcc/tensor.hpp"
#include "support/oracles.hpp"

using namespace fgdcc;

namespace {

// Checks d(loss)/d(param) from the tape against central differences.
double grad_check(ParamTensor& p, const std::function<Var(Tape&)>& build) {
  p.zero_grad();
  Tape tape;
  tape.backward(build(tape));
  const Matrix analytic = p.grad;
  const Matrix numeric = oracle::numeric_gradient(p.value, [&] {
    Tape t;
    return t.scalar(build(t));
  });
  return oracle::max_relative_error(analytic, numeric);
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matrix construction and shape errors") {
    const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6.0);
    CHECK(m.shape_str() == "2x3");
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), DimensionError);
    CHECK(Matrix::identity(3)(1, 1) == 1.0);
    CHECK(Matrix::identity(3)(0, 1) == 0.0);
  }

  TEST_CASE("linear matches triple-loop reference on random shapes") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng() % 6, in = 1 + rng() % 7, out = 1 + rng() % 5;
      const Matrix x = oracle::random_matrix(n, in, rng);
      const Matrix w = oracle::random_matrix(out, in, rng);
      const Matrix b = oracle::random_matrix(1, out, rng);
      Tape t;
      const Matrix y = t.value(t.linear(t.constant(x), t.constant(w), t.constant(b)));
      const Matrix ref = oracle::linear(x, w, b);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("linear rejects mismatched shapes") {
    Tape t;
    const Var x = t.constant(Matrix(2, 3));
    CHECK_THROWS_AS(t.linear(x, t.constant(Matrix(4, 2)), t.constant(Matrix(1, 4))), DimensionError);
    CHECK_THROWS_AS(t.linear(x, t.constant(Matrix(4, 3)), t.constant(Matrix(1, 3))), DimensionError);
    CHECK_THROWS_AS(t.add(x, t.constant(Matrix(3, 2))), DimensionError);
  }

  TEST_CASE("gelu uses the exact erf form") {
    Tape t;
    const Matrix x = Matrix::from_rows({{-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5}});
    const Matrix y = t.value(t.gelu(t.constant(x)));
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(y.data()[i] == doctest::Approx(oracle::gelu(x.data()[i])).epsilon(1e-10));
    }
    CHECK(y(0, 5) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(y(0, 3) == 0.0);
  }

  TEST_CASE("cross-entropy matches long-double reference and is stable for large logits") {
    std::mt19937_64 rng(5);
    const Matrix logits = oracle::random_matrix(6, 4, rng, 3.0);
    const std::vector<std::size_t> y = {0, 1, 2, 3, 1, 0};
    Tape t;
    CHECK(t.scalar(t.softmax_cross_entropy(t.constant(logits), y)) ==
          doctest::Approx(oracle::cross_entropy(logits, y)).epsilon(1e-12));

    const Matrix big = Matrix::from_rows({{1000.0, 0.0}});
    Tape t2;
    const double ce = t2.scalar(t2.softmax_cross_entropy(t2.constant(big), std::vector<std::size_t>{1}));
    CHECK(std::isfinite(ce));
    CHECK(ce == doctest::Approx(1000.0));
  }

  TEST_CASE("uniform logits give ln K") {
    for (std::size_t k = 2; k <= 5; ++k) {
      Tape t;
      const Matrix logits(3, k, 0.0);
      const double ce = t.scalar(t.softmax_cross_entropy(t.constant(logits), std::vector<std::size_t>{0, k - 1, 1}));
      CHECK(std::abs(ce - std::log(static_cast<double>(k))) < 1e-12);
    }
  }

  TEST_CASE("cross-entropy guards") {
    Tape t;
    const Var l = t.constant(Matrix(2, 3));
    CHECK_THROWS_AS(t.softmax_cross_entropy(l, std::vector<std::size_t>{0}), DimensionError);
    CHECK_THROWS_AS(t.softmax_cross_entropy(l, std::vector<std::size_t>{0, 3}), IndexError);
  }

  TEST_CASE("smooth l1 and mse values") {
    Tape t;
    const Var p = t.constant(Matrix::from_rows({{0.0, 2.0, -0.5, 4.0}}));
    const Var q = t.constant(Matrix::from_rows({{0.5, 0.0, -0.5, 1.0}}));
    // |d| = 0.5, 2, 0, 3 with beta 1: 0.125, 1.5, 0, 2.5
    CHECK(t.scalar(t.smooth_l1(p, q, 1.0)) == doctest::Approx((0.125 + 1.5 + 0.0 + 2.5) / 4.0).epsilon(1e-15));
    CHECK(t.scalar(t.mean_squared_error(p, q)) == doctest::Approx((0.25 + 4.0 + 0.0 + 9.0) / 4.0).epsilon(1e-15));
  }

  TEST_CASE("backward guards") {
    Tape t;
    const Var v = t.constant(Matrix(2, 2));
    CHECK_THROWS_AS(t.backward(v), StateError);
    CHECK_THROWS_AS(t.backward(Var{99}), StateError);
    Tape other;
    CHECK_THROWS_AS(other.backward(Var{0}), StateError);
  }

  TEST_CASE("parameter gradients accumulate across backward calls") {
    ParamTensor w("w", Matrix::from_rows({{2.0}}));
    Tape t;
    const Var loss = t.sum(t.scale(t.param(w), 3.0));
    t.backward(loss);
    t.backward(loss);
    CHECK(w.grad(0, 0) == 6.0);
  }

  TEST_CASE("gradient check: every differentiable op") {
    std::mt19937_64 rng(21);
    ParamTensor x("x", oracle::random_matrix(4, 3, rng));
    ParamTensor w("w", oracle::random_matrix(5, 3, rng));
    ParamTensor b("b", oracle::random_matrix(1, 5, rng));
    const Matrix target = oracle::random_matrix(4, 5, rng);
    const std::vector<std::size_t> labels = {0, 4, 2, 1};
    const std::vector<std::size_t> rows = {3, 0, 3};
    const Matrix centre = oracle::random_matrix(4, 3, rng);

    auto lin = [&](Tape& t) { return t.linear(t.param(x), t.param(w), t.param(b)); };

    SUBCASE("linear + sum") {
      for (ParamTensor* p : {&x, &w, &b}) CHECK(grad_check(*p, [&](Tape& t) { return t.sum(lin(t)); }) < 1e-4);
    }
    SUBCASE("gelu") {
      CHECK(grad_check(x, [&](Tape& t) { return t.sum(t.gelu(t.param(x))); }) < 1e-4);
    }
    SUBCASE("add and scale") {
      CHECK(grad_check(x, [&](Tape& t) {
              const Var v = t.param(x);
              return t.sum(t.gelu(t.add(t.scale(v, -0.7), t.gelu(v))));
            }) < 1e-4);
    }
    SUBCASE("gather_rows with repeats") {
      CHECK(grad_check(x, [&](Tape& t) { return t.sum(t.gelu(t.gather_rows(t.param(x), rows))); }) < 1e-4);
    }
    SUBCASE("softmax cross-entropy") {
      for (ParamTensor* p : {&x, &w, &b}) {
        CHECK(grad_check(*p, [&](Tape& t) { return t.softmax_cross_entropy(lin(t), labels); }) < 1e-4);
      }
    }
    SUBCASE("smooth l1 both arguments") {
      ParamTensor tgt("t", target);
      // keep residuals away from the |d| = beta kink
      for (double& v : tgt.value.data()) v += 0.01;
      CHECK(grad_check(w, [&](Tape& t) { return t.smooth_l1(lin(t), t.param(tgt), 1.0); }) < 1e-4);
      CHECK(grad_check(tgt, [&](Tape& t) { return t.smooth_l1(lin(t), t.param(tgt), 1.0); }) < 1e-4);
    }
    SUBCASE("mse") {
      CHECK(grad_check(w, [&](Tape& t) { return t.mean_squared_error(lin(t), t.constant(target)); }) < 1e-4);
    }
    SUBCASE("l2 penalty") {
      CHECK(grad_check(x, [&](Tape& t) { return t.l2_penalty(t.gelu(t.param(x)), centre); }) < 1e-4);
    }
  }

  TEST_CASE("property: gradient of sum(x) is ones for any shape") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 25; ++trial) {
      ParamTensor x("x", oracle::random_matrix(1 + rng() % 5, 1 + rng() % 5, rng));
      Tape t;
      t.backward(t.sum(t.param(x)));
      for (double g : x.grad.data()) CHECK(g == 1.0);
    }
  }

  TEST_CASE("all_finite and squared_distance") {
    CHECK(all_finite(std::vector<double>{1.0, -2.0}));
    CHECK_FALSE(all_finite(std::vector<double>{1.0, std::nan("")}));
    CHECK_FALSE(all_finite(std::vector<double>{std::numeric_limits<double>::infinity()}));
    CHECK(squared_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == 25.0);
  }
}
