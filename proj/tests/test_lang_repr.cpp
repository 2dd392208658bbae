#include <doctest.h>

#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "langtyp/error.hpp"
#include "langtyp/lang_repr.hpp"

using namespace langtyp;

namespace {

SubwordVocab vocab_with(std::size_t size) {
  SubwordVocab v;
  v.add(language_token("aaa"));
  v.add(language_token("bbb"));
  for (std::size_t i = v.size(); i < size; ++i) v.add("w" + std::to_string(i));
  return v;
}

EncodedCorpus corpus_for(const SubwordVocab& v, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(6, static_cast<int>(v.size()) - 1);
  std::uniform_int_distribution<int> len(1, 5);
  EncodedCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedPair p;
    p.lang = i % 3 == 0 ? "bbb" : "aaa";
    p.lang_id = v.lang_id(p.lang);
    for (int k = len(rng); k > 0; --k) p.source.push_back(tok(rng));
    p.target = {tok(rng)};
    c.push_back(p);
  }
  return c;
}

// Brute-force average linkage: distance between clusters is the mean over
// all member pairs, recomputed from scratch every step.
std::vector<std::pair<std::set<std::size_t>, double>> naive_average_linkage(const std::vector<LangVector>& v) {
  std::vector<std::set<std::size_t>> clusters;
  for (std::size_t i = 0; i < v.size(); ++i) clusters.push_back({i});
  std::vector<std::pair<std::set<std::size_t>, double>> out;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double s = 0;
        for (auto a : clusters[i])
          for (auto b : clusters[j]) s += cosine_distance(v[a].values, v[b].values);
        s /= static_cast<double>(clusters[i].size() * clusters[j].size());
        if (s < best) best = s, bi = i, bj = j;
      }
    clusters[bi].insert(clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<long>(bj));
    out.push_back({clusters[bi], best});
  }
  return out;
}

std::set<std::size_t> leaves_under(const Dendrogram& d, std::size_t node) {
  const std::size_t n = d.leaf_count();
  if (node < n) return {node};
  auto l = leaves_under(d, d.merges[node - n].left);
  auto r = leaves_under(d, d.merges[node - n].right);
  l.insert(r.begin(), r.end());
  return l;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (Method m : {Method::LMVec, Method::MTVec, Method::MTCell, Method::MTBoth, Method::MTCellFinal,
                   Method::MTHiddenMean})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("Nope"), ValidationError);
}

TEST_CASE("MTVec is the language token's embedding row") {
  SubwordVocab v = vocab_with(10);
  Seq2SeqModel nmt({v.size(), 3, 4, false}, 5);
  LangVector vec = extract_mtvec(nmt, v, "bbb");
  const int id = v.lang_id("bbb");
  REQUIRE(vec.dim() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(vec.values[k] == nmt.embedding().value.at(id, k));
  CHECK_THROWS_AS(extract_mtvec(nmt, v, "zzz"), ValidationError);

  RnnLmModel lm({v.size(), 3, 4, false}, 6);
  LangVector lv = extract_lmvec(lm, v, "aaa");
  CHECK(lv.method == Method::LMVec);
  CHECK(lv.values[1] == lm.embedding().value.at(v.lang_id("aaa"), 1));
}

TEST_CASE("MTCell is the mean encoder cell over all steps") {
  SubwordVocab v = vocab_with(14);
  Seq2SeqModel nmt({v.size(), 4, 5, false}, 9);
  EncodedCorpus corpus = corpus_for(v, 12, 3);
  std::vector<double> sum(5, 0.0);
  std::size_t steps = 0;
  for (const auto& p : corpus) {
    if (p.lang != "aaa") continue;
    for (const auto& s : nmt.encode(p.lang_id, p.source)) {
      for (std::size_t k = 0; k < 5; ++k) sum[k] += s.c[k];
      ++steps;
    }
  }
  LangVector cell = extract_mtcell(nmt, corpus, "aaa");
  CHECK(cell.n_sentences == 8);
  for (std::size_t k = 0; k < 5; ++k) CHECK(cell.values[k] == doctest::Approx(sum[k] / steps).epsilon(1e-12));

  LangVector both = combine_mtboth(extract_mtvec(nmt, v, "aaa"), cell);
  CHECK(both.dim() == 9);
  CHECK(both.values[4] == cell.values[0]);
  CHECK_THROWS_AS(combine_mtboth(extract_mtvec(nmt, v, "bbb"), cell), ValidationError);
  CHECK_THROWS_AS(extract_mtcell(nmt, corpus, "zzz"), ValidationError);
}

TEST_CASE("sentence cap is a deterministic subsample in corpus order") {
  SubwordVocab v = vocab_with(10);
  EncodedCorpus corpus = corpus_for(v, 30, 1);
  CellOptions opt;
  opt.max_sentences = 5;
  auto a = select_sentences(corpus, "aaa", opt);
  auto b = select_sentences(corpus, "aaa", opt);
  REQUIRE(a.size() == 5);
  CHECK(a == b);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1] < a[i]);
  opt.max_sentences = 100;
  CHECK(select_sentences(corpus, "aaa", opt).size() == 20);
  opt.max_sentences = 0;
  CHECK_THROWS_AS(select_sentences(corpus, "aaa", opt), ValidationError);
}

TEST_CASE("vector store round-trips exactly") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<LangVector> vs;
  for (std::string lang : {"aaa", "bbb", "ccc"}) {
    LangVector v{lang, Method::MTCell, {}, 17};
    for (int k = 0; k < 6; ++k) v.values.push_back(nd(rng) * 1e-3);
    v.values.push_back(0.1);
    vs.push_back(v);
  }
  std::stringstream ss;
  write_vectors(ss, vs);
  CHECK(read_vectors(ss) == vs);

  std::istringstream bad("lang\tmethod\tdim\tn_sentences\naaa\tMTVec\t2\t0\t1 2 3\n");
  CHECK_THROWS_AS(read_vectors(bad), ParseError);
  std::istringstream nan("lang\tmethod\tdim\tn_sentences\naaa\tMTVec\t1\t0\tnan\n");
  CHECK_THROWS_AS(read_vectors(nan), ValidationError);
}

TEST_CASE("cosine distance") {
  CHECK(cosine_distance({1, 0}, {0, 2}) == doctest::Approx(1.0));
  CHECK(cosine_distance({1, 1}, {2, 2}) == doctest::Approx(0.0));
  CHECK(cosine_distance({1, 0}, {-3, 0}) == doctest::Approx(2.0));
  CHECK(cosine_distance({0, 0}, {0, 0}) == 0.0);
  CHECK_THROWS_AS(cosine_distance({1}, {1, 2}), ValidationError);
}

TEST_CASE("clustering matches brute-force average linkage") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<LangVector> vs;
    for (int i = 0; i < 9; ++i) {
      LangVector v{"l" + std::to_string(i), Method::MTVec, {}, 0};
      for (int k = 0; k < 4; ++k) v.values.push_back(nd(rng));
      vs.push_back(v);
    }
    Dendrogram d = cluster_vectors(vs);
    auto ref = naive_average_linkage(vs);
    REQUIRE(d.merges.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(d.merges[i].distance == doctest::Approx(ref[i].second).epsilon(1e-12));
      CHECK(leaves_under(d, vs.size() + i) == ref[i].first);
      CHECK(d.merges[i].size == ref[i].first.size());
    }
  }
}

TEST_CASE("newick output") {
  std::vector<LangVector> vs = {{"a", Method::MTVec, {1, 0}, 0}, {"b", Method::MTVec, {1, 0.01}, 0},
                                {"c", Method::MTVec, {0, 1}, 0}};
  Dendrogram d = cluster_vectors(vs);
  const std::string nw = d.newick();
  CHECK(nw.rfind("((a,b):", 0) == 0);
  CHECK(nw.back() == ';');
  CHECK_THROWS_AS(cluster_vectors({vs[0]}), ValidationError);
}
