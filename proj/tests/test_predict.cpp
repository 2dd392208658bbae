#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "langtyp/error.hpp"
#include "langtyp/predict.hpp"

using namespace langtyp;

namespace {

std::vector<std::string> codes(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("q" + std::to_string(1000 + i));
  return out;
}

// Gradient of mean logistic loss + l2 |w|^2 / 2 at the fitted parameters.
std::vector<double> objective_gradient(const LogRegModel& m, const std::vector<std::vector<double>>& X,
                                       const std::vector<int>& y) {
  std::vector<double> g(m.weights.size() + 1, 0.0);
  for (std::size_t i = 0; i < X.size(); ++i) {
    double z = m.bias;
    for (std::size_t j = 0; j < X[i].size(); ++j) z += m.weights[j] * X[i][j];
    const double r = 1.0 / (1.0 + std::exp(-z)) - y[i];
    for (std::size_t j = 0; j < X[i].size(); ++j) g[j] += r * X[i][j] / X.size();
    g.back() += r / X.size();
  }
  for (std::size_t j = 0; j < m.weights.size(); ++j) g[j] += m.l2 * m.weights[j];
  return g;
}

struct Toy {
  FeatureMatrix matrix;
  VectorTable vectors;
  KnnTable knn;
};

// Feature 0 follows the sign of the first vector coordinate; feature 1 is
// noise; feature 2 has a single label.
Toy toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto langs = codes(n);
  Toy t{FeatureMatrix(langs, {make_feature_spec("S_A"), make_feature_spec("P_B"), make_feature_spec("I_C")}), {}, {}};
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v = {nd(rng), nd(rng), nd(rng)};
    v[0] += v[0] > 0 ? 0.5 : -0.5;  // keep a margin around the boundary
    t.vectors[Method::MTVec][langs[i]] = v;
    t.matrix.set(i, 0, v[0] > 0 ? 1 : 0);
    t.matrix.set(i, 1, coin(rng) ? 1 : 0);
    t.matrix.set(i, 2, i == 0 ? std::optional<int>(1) : std::nullopt);
    t.knn[langs[i]] = {coin(rng) ? 0.8 : 0.2, 0.5, 1.0};
  }
  return t;
}

}  // namespace

TEST_CASE("folds are balanced, complete and seeded") {
  auto langs = codes(23);
  FoldAssignment a = make_folds(langs, 10, 4);
  auto sizes = a.sizes();
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  CHECK(total == 23);
  for (const auto& l : langs) CHECK(a.contains(l));
  FoldAssignment b = make_folds(langs, 10, 4);
  CHECK(a.fold == b.fold);
  CHECK(a.hash() == b.hash());
  FoldAssignment c = make_folds(langs, 10, 5);
  CHECK(c.fold != a.fold);
  CHECK(c.hash() != a.hash());
  CHECK_THROWS_AS(make_folds(langs, 1, 1), ValidationError);
  CHECK_THROWS_AS(make_folds(codes(3), 10, 1), ValidationError);
  CHECK_THROWS_AS(a.fold_of("nope"), ValidationError);
}

TEST_CASE("logistic regression reaches a stationary point") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (double l2 : {0.01, 1.0, 10.0}) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
      std::vector<double> x = {nd(rng), nd(rng), nd(rng)};
      X.push_back(x);
      y.push_back(x[0] - 0.5 * x[2] + 0.7 * nd(rng) > 0 ? 1 : 0);
    }
    LogRegModel m = train_logreg(X, y, l2, "f");
    for (double g : objective_gradient(m, X, y)) CHECK(std::abs(g) < 1e-7);
    CHECK(m.weights[0] > 0);
    CHECK(m.weights[2] < 0);
  }
}

TEST_CASE("logistic regression handles degenerate inputs") {
  std::vector<std::vector<double>> X = {{1.0}, {2.0}, {3.0}};
  LogRegModel ones = train_logreg(X, {1, 1, 1}, 1.0);
  CHECK(ones.bias == kSingleClassBias);
  CHECK(ones.weights == std::vector<double>{0.0});
  LogRegModel zeros = train_logreg(X, {0, 0, 0}, 1.0);
  CHECK(zeros.probability(X[0]) < 1e-8);
  // Separable data stays finite thanks to the penalty.
  LogRegModel sep = train_logreg({{-1.0}, {1.0}}, {0, 1}, 1e-3);
  CHECK(std::isfinite(sep.weights[0]));
  CHECK(sep.probability(std::vector<double>{1.0}) > 0.9);
  CHECK_THROWS_AS(train_logreg({}, {}, 1.0), ValidationError);
  CHECK_THROWS_AS(train_logreg(X, {1, 0}, 1.0), ValidationError);
}

TEST_CASE("standardizer uses training statistics") {
  std::vector<std::vector<double>> X = {{1, 5}, {3, 5}, {5, 5}};
  Standardizer s;
  s.fit(X);
  auto Z = s.transform(X);
  double mean = 0, var = 0;
  for (auto& z : Z) mean += z[0] / 3;
  for (auto& z : Z) var += (z[0] - mean) * (z[0] - mean) / 3;
  CHECK(mean == doctest::Approx(0.0));
  CHECK(var == doctest::Approx(1.0));
  CHECK(Z[0][1] == 0.0);
  CHECK(s.transform(std::vector<double>{3, 7})[1] == 2.0);
}

TEST_CASE("decision rule") {
  CHECK(decide(0.7, 0) == 1);
  CHECK(decide(0.3, 1) == 0);
  CHECK(decide(0.5, 0) == 0);
  CHECK(decide(0.5, 1) == 1);
}

TEST_CASE("method names include None") {
  CHECK(eval_method_name(std::nullopt) == "None");
  CHECK_FALSE(parse_eval_method("None").has_value());
  CHECK(parse_eval_method("MTBoth") == Method::MTBoth);
}

TEST_CASE("input assembly") {
  VectorTable vt;
  vt[Method::MTVec]["a"] = {1, 2};
  KnnTable knn{{"a", {0.5}}};
  CHECK(assemble_inputs("a", Method::MTVec, true, vt, knn) == std::vector<double>{1, 2, 0.5});
  CHECK(assemble_inputs("a", std::nullopt, true, vt, knn) == std::vector<double>{0.5});
  CHECK_THROWS_AS(assemble_inputs("b", Method::MTVec, false, vt, knn), ValidationError);
  CHECK_THROWS_AS(assemble_inputs("a", Method::MTCell, false, vt, knn), ValidationError);
  CHECK_THROWS_AS(make_vector_table({{"a", Method::MTVec, {1}, 0}, {"a", Method::MTVec, {2}, 0}}), ValidationError);
}

TEST_CASE("evaluation baselines follow their definitions") {
  Toy t = toy(40, 3);
  FoldAssignment folds = make_folds(t.matrix.languages(), 10, 7);
  EvalReport rep =
      evaluate(t.matrix, t.vectors, t.knn, folds, {std::nullopt, Method::MTVec}, {false, true}, {.l2 = 0.01});
  REQUIRE(rep.conditions.size() == 4);
  CHECK(rep.excluded_features == std::vector<std::string>{"I_C"});
  for (const auto& c : rep.conditions) CHECK(c.fold_hash == folds.hash());

  const auto& none = rep.at(std::nullopt, false);
  for (std::size_t f : {0u, 1u}) {
    const FeatureResult* fr = none.feature(t.matrix.features()[f].name);
    REQUIRE(fr);
    CHECK(fr->accuracy() == doctest::Approx(100.0 * majority_rate(f, t.matrix)));
  }

  // None +Aux: k-NN value of the feature thresholded at 0.5.
  const auto& knn_only = rep.at(std::nullopt, true);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 40; ++i)
    correct += (t.knn[t.matrix.languages()[i]][0] > 0.5 ? 1 : 0) == *t.matrix.get(i, 0);
  CHECK(knn_only.feature("S_A")->correct == correct);

  // The vector encodes feature 0 directly.
  CHECK(rep.at(Method::MTVec, false).accuracy(Category::Syntax) >= 90.0);
  CHECK_FALSE(rep.at(Method::MTVec, false).has(Category::Inventory));
  CHECK(rep.at(Method::MTVec, false).predictions.size() == 80);
  CHECK_THROWS_AS(rep.at(Method::MTCell, false), ValidationError);
}

TEST_CASE("evaluation is deterministic") {
  Toy t = toy(30, 5);
  FoldAssignment folds = make_folds(t.matrix.languages(), 5, 1);
  auto a = evaluate(t.matrix, t.vectors, t.knn, folds, {Method::MTVec}, {true});
  auto b = evaluate(t.matrix, t.vectors, t.knn, folds, {Method::MTVec}, {true});
  REQUIRE(a.conditions[0].predictions.size() == b.conditions[0].predictions.size());
  for (std::size_t i = 0; i < a.conditions[0].predictions.size(); ++i)
    CHECK(a.conditions[0].predictions[i].predicted == b.conditions[0].predictions[i].predicted);
}

TEST_CASE("paired bootstrap") {
  std::vector<int> gold(200), good(200), bad(200);
  for (int i = 0; i < 200; ++i) {
    gold[i] = i % 2;
    good[i] = i % 2;
    bad[i] = i % 5 == 0 ? 1 - gold[i] : gold[i];
  }
  auto better = paired_bootstrap(bad, good, gold, 2000, 3);
  CHECK(better.observed_gain == doctest::Approx(20.0));
  CHECK(better.p_value == 0.0);
  auto worse = paired_bootstrap(good, bad, gold, 2000, 3);
  CHECK(worse.p_value == 1.0);
  auto same = paired_bootstrap(good, good, gold, 2000, 3);
  CHECK(same.observed_gain == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(paired_bootstrap(bad, good, gold, 2000, 3).p_value == better.p_value);
  CHECK_THROWS_AS(paired_bootstrap(bad, good, gold, 999, 3), ValidationError);
  CHECK_THROWS_AS(paired_bootstrap(bad, good, std::vector<int>(3), 2000, 3), ValidationError);
}

TEST_CASE("paired bootstrap p-value tracks a small gain") {
  // B fixes 6 of A's errors and breaks 2 others: observed gain 4 of 400.
  std::vector<int> gold(400, 1), a(400, 1), b(400, 1);
  for (int i = 0; i < 6; ++i) a[i] = 0;
  for (int i = 10; i < 12; ++i) b[i] = 0;
  auto r = paired_bootstrap(a, b, gold, 10000, 9);
  CHECK(r.observed_gain == doctest::Approx(1.0));
  // Sum of 400 draws from {+1 w.p. 6/400, -1 w.p. 2/400}; normal approximation
  // puts P(sum <= 0) near 0.13.
  CHECK(r.p_value > 0.05);
  CHECK(r.p_value < 0.3);
}

TEST_CASE("alignment and gains") {
  Toy t = toy(30, 6);
  FoldAssignment folds = make_folds(t.matrix.languages(), 5, 1);
  auto rep = evaluate(t.matrix, t.vectors, t.knn, folds, {std::nullopt, Method::MTVec}, {true});
  const auto& a = rep.at(std::nullopt, true);
  const auto& b = rep.at(Method::MTVec, true);
  auto al = align_predictions(a, b, t.matrix, Category::Syntax);
  CHECK(al.a.size() == 30);
  std::size_t ca = 0;
  for (std::size_t i = 0; i < al.a.size(); ++i) ca += al.a[i] == al.gold[i];
  CHECK(ca == a.feature("S_A")->correct);

  ConditionResult other = b;
  other.fold_hash ^= 1;
  CHECK_THROWS_AS(align_predictions(a, other, t.matrix, Category::Syntax), ValidationError);
  other = b;
  other.predictions.pop_back();
  CHECK_THROWS_AS(align_predictions(a, other, t.matrix, Category::Phonology), ValidationError);

  ConditionResult x, y;
  for (const char* name : {"S_B", "S_A", "S_C"}) {
    x.features.push_back({0, name, Category::Syntax, 5, 10});
    y.features.push_back({0, name, Category::Syntax, std::string(name) == "S_C" ? 6u : 9u, 10});
  }
  auto gains = top_gains(x, y, Category::Syntax, 2);
  REQUIRE(gains.size() == 2);
  CHECK(gains[0].feature == "S_A");
  CHECK(gains[1].feature == "S_B");
  CHECK(gains[0].gain == doctest::Approx(40.0));
}

TEST_CASE("node selection reads the cell block") {
  LogRegModel m;
  m.method = Method::MTBoth;
  m.representation_dim = 6;  // 2 embedding + 4 cell
  m.weights = {9, 9, 0.1, -3, 0.2, 1, 100};
  CHECK(select_node(m, 4) == 1);
  m.method = Method::MTCell;
  m.representation_dim = 4;
  m.weights = {0.5, -2, 1, 0, 50};
  CHECK(select_node(m, 4) == 1);
  m.method = Method::MTVec;
  CHECK_THROWS_AS(select_node(m, 4), ValidationError);
}
