#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "langtyp/error.hpp"
#include "langtyp/optim.hpp"

using namespace langtyp;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Reduces a matrix to a scalar with fixed random weights, so every output
// entry gets a distinct upstream gradient.
Var weighted_sum(Graph& g, Var x) {
  std::mt19937_64 rng(1234);
  return ops::sum(ops::mul(x, g.constant(random_matrix(x.value().rows(), x.value().cols(), rng))));
}

}  // namespace

TEST_CASE("elementwise and matrix ops pass finite differences") {
  std::mt19937_64 rng(3);
  ParameterSet ps;
  Parameter& a = ps.add("a", random_matrix(3, 4, rng));
  Parameter& b = ps.add("b", random_matrix(4, 5, rng));
  Parameter& c = ps.add("c", random_matrix(3, 5, rng));
  Parameter& r = ps.add("r", random_matrix(1, 5, rng));
  Parameter& s = ps.add("s", random_matrix(3, 1, rng));

  SUBCASE("matmul, add, broadcast") {
    CHECK(gradcheck::max_relative_error(ps, [&](Graph& g) {
      return weighted_sum(g, ops::add(ops::add(ops::matmul(g.param(a), g.param(b)), g.param(c)), g.param(r)));
    }) < gradcheck::kTolerance);
  }
  SUBCASE("nonlinearities and products") {
    CHECK(gradcheck::max_relative_error(ps, [&](Graph& g) {
      Var x = ops::matmul(g.param(a), g.param(b));
      Var y = ops::mul(ops::sigmoid(x), ops::tanh(ops::sub(g.param(c), ops::scale(x, 0.5))));
      return weighted_sum(g, ops::mul_col(y, g.param(s)));
    }) < gradcheck::kTolerance);
  }
  SUBCASE("concat, slice, row_dot, softmax") {
    CHECK(gradcheck::max_relative_error(ps, [&](Graph& g) {
      Var x = ops::concat_cols({g.param(a), g.param(c)});
      Var y = ops::slice_cols(x, 2, 5);
      Var d = ops::row_dot(y, g.param(c));
      return weighted_sum(g, ops::add(ops::softmax_rows(y), ops::mul_col(g.param(c), d)));
    }) < gradcheck::kTolerance);
  }
  SUBCASE("lookup and cross-entropy with padding weights") {
    std::vector<int> ids = {2, 0, 2};
    std::vector<int> targets = {4, 1, 0};
    std::vector<double> weights = {1.0, 0.0, 1.0};
    CHECK(gradcheck::max_relative_error(ps, [&](Graph& g) {
      Var rows = ops::lookup(g.param(a), ids);
      Var logits = ops::matmul(rows, g.param(b));
      return ops::softmax_cross_entropy(logits, targets, weights);
    }) < gradcheck::kTolerance);
  }
}

TEST_CASE("cross-entropy of uniform logits over two classes is ln 2") {
  Graph g;
  Var logits = g.constant(Tensor::matrix(1, 2, 0.3));
  CHECK(ops::softmax_cross_entropy(logits, 1).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("padding rows contribute nothing") {
  Graph g;
  Tensor t = Tensor::matrix(2, 3);
  t.at(1, 0) = 50.0;
  Var logits = g.constant(t);
  std::vector<int> targets = {0, 2};
  std::vector<double> w = {1.0, 0.0};
  CHECK(ops::softmax_cross_entropy(logits, targets, w).value().item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("shape errors name the operation") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3));
  Var b = g.constant(Tensor::matrix(2, 3));
  try {
    ops::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(g.backward(a), ValidationError);
}

TEST_CASE("gradients accumulate across backward calls") {
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor::scalar(3.0));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Var x = g.param(p);
    g.backward(ops::mul(x, x));
  }
  CHECK(p.grad.item() == doctest::Approx(12.0));
  ps.zero_grad();
  CHECK(p.grad.item() == 0.0);
}

TEST_CASE("frozen parameters receive no gradient") {
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor::scalar(2.0));
  Parameter& q = ps.add("q", Tensor::scalar(5.0));
  Graph g;
  g.backward(ops::mul(g.frozen(p), g.param(q)));
  CHECK(p.grad.item() == 0.0);
  CHECK(q.grad.item() == doctest::Approx(2.0));
}

TEST_CASE("dropout is inverted and seeded") {
  Graph g;
  Var x = g.constant(Tensor::matrix(50, 40, 1.0));
  std::mt19937_64 r1(7), r2(7);
  Var d1 = ops::dropout(x, 0.5, r1);
  Var d2 = ops::dropout(x, 0.5, r2);
  CHECK(d1.value() == d2.value());
  double sum = 0;
  for (double v : d1.value().values()) {
    CHECK((v == 0.0 || v == 2.0));
    sum += v;
  }
  CHECK(sum / 2000.0 == doctest::Approx(1.0).epsilon(0.1));
  CHECK(ops::dropout(x, 0.0, r1).id == x.id);
}

TEST_CASE("Adam first step moves each weight by lr") {
  ParameterSet ps;
  Parameter& p = ps.add("w", Tensor::row({1.0, -2.0}));
  p.grad = Tensor::row({0.5, -3.0});
  Adam adam;
  adam.step(ps);
  // Bias-corrected moments give m/sqrt(v) = sign(g) on the first step.
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-9));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.001).epsilon(1e-9));
  CHECK(adam.steps() == 1);
}

TEST_CASE("Adam rejects non-finite gradients without touching weights") {
  ParameterSet ps;
  Parameter& a = ps.add("a", Tensor::scalar(1.0));
  Parameter& b = ps.add("b", Tensor::scalar(1.0));
  a.grad = Tensor::scalar(1.0);
  b.grad = Tensor::scalar(std::nan(""));
  Adam adam;
  try {
    adam.step(ps);
    FAIL("expected a runtime failure");
  } catch (const RuntimeFailure& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(a.value.item() == 1.0);
  CHECK(adam.steps() == 0);
}

TEST_CASE("gradient clipping bounds the global norm") {
  ParameterSet ps;
  Parameter& a = ps.add("a", Tensor::row({0.0, 0.0}));
  a.grad = Tensor::row({3.0, 4.0});
  CHECK(ps.clip_grad_norm(1.0) == doctest::Approx(5.0));
  CHECK(ps.grad_norm() == doctest::Approx(1.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(ps.clip_grad_norm(10.0) == doctest::Approx(1.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
}

TEST_CASE("xavier init stays inside its bound") {
  std::mt19937_64 rng(1);
  Tensor t = xavier_uniform(10, 30, rng);
  const double bound = std::sqrt(6.0 / 40.0);
  for (double v : t.values()) CHECK(std::abs(v) <= bound);
}
