#include "langtyp/lang_repr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

namespace {
constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::LMVec, "LMVec"},   {Method::MTVec, "MTVec"},           {Method::MTCell, "MTCell"},
    {Method::MTBoth, "MTBoth"}, {Method::MTCellFinal, "MTCellFinal"}, {Method::MTHiddenMean, "MTHiddenMean"},
};
}  // namespace

std::string_view method_name(Method m) {
  for (const auto& [method, name] : kMethodNames)
    if (method == m) return name;
  return "?";
}

Method parse_method(std::string_view name) {
  for (const auto& [method, n] : kMethodNames)
    if (n == name) return method;
  throw ValidationError("unknown representation method: " + std::string(name));
}

namespace {

LangVector embedding_row(const Parameter& table, int id, std::string_view lang, Method method) {
  LangVector v;
  v.lang = std::string(lang);
  v.method = method;
  auto row = table.value.row_span(static_cast<std::size_t>(id));
  v.values.assign(row.begin(), row.end());
  return v;
}

// Encodes every sentence; sentences are split into contiguous chunks across
// threads and results land at their input index.
std::vector<std::vector<StepState>> encode_all(const Seq2SeqModel& nmt, const std::vector<const EncodedPair*>& sents) {
  std::vector<std::vector<StepState>> out(sents.size());
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), sents.size() / 16));
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = nmt.encode(sents[i]->lang_id, sents[i]->source);
  };
  if (workers == 1) {
    run(0, sents.size());
    return out;
  }
  std::vector<std::thread> threads;
  const std::size_t chunk = (sents.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk, end = std::min(sents.size(), begin + chunk);
    if (begin < end) threads.emplace_back(run, begin, end);
  }
  for (auto& t : threads) t.join();
  return out;
}

std::vector<const EncodedPair*> require_sentences(const EncodedCorpus& corpus, std::string_view lang,
                                                  const CellOptions& options) {
  auto sel = select_sentences(corpus, lang, options);
  if (sel.empty()) throw ValidationError("no sentences for language " + std::string(lang));
  return sel;
}

// Reduction in fixed sentence-then-step order.
std::vector<double> mean_over_steps(const std::vector<std::vector<StepState>>& states, bool use_cell,
                                    const CellOptions& options) {
  std::size_t dim = states.front().front().c.size();
  std::vector<double> total(dim, 0.0);
  std::size_t count = 0;
  for (const auto& sentence : states) {
    std::size_t first = options.include_boundary_steps ? 0 : 1;
    std::size_t last = options.include_boundary_steps ? sentence.size() : sentence.size() - 1;
    if (first >= last) continue;
    std::vector<double> local(dim, 0.0);
    for (std::size_t t = first; t < last; ++t) {
      const auto& v = use_cell ? sentence[t].c : sentence[t].h;
      for (std::size_t d = 0; d < dim; ++d) local[d] += v[d];
    }
    if (options.sentence_weighted) {
      for (std::size_t d = 0; d < dim; ++d) total[d] += local[d] / static_cast<double>(last - first);
      ++count;
    } else {
      for (std::size_t d = 0; d < dim; ++d) total[d] += local[d];
      count += last - first;
    }
  }
  if (count == 0) throw ValidationError("no encoder steps to average");
  for (double& x : total) x /= static_cast<double>(count);
  return total;
}

}  // namespace

LangVector extract_lmvec(const RnnLmModel& lm, const SubwordVocab& vocab, std::string_view lang) {
  return embedding_row(lm.embedding(), vocab.lang_id(lang), lang, Method::LMVec);
}

LangVector extract_mtvec(const Seq2SeqModel& nmt, const SubwordVocab& vocab, std::string_view lang) {
  return embedding_row(nmt.embedding(), vocab.lang_id(lang), lang, Method::MTVec);
}

std::vector<const EncodedPair*> select_sentences(const EncodedCorpus& corpus, std::string_view lang,
                                                 const CellOptions& options) {
  std::vector<const EncodedPair*> all;
  for (const auto& p : corpus)
    if (p.lang == lang) all.push_back(&p);
  if (!options.max_sentences || *options.max_sentences >= all.size()) return all;
  if (*options.max_sentences == 0) throw ValidationError("max_sentences must be positive");
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(derive_seed(options.seed, fnv1a(lang)));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(*options.max_sentences);
  std::sort(idx.begin(), idx.end());
  std::vector<const EncodedPair*> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

LangVector extract_mtcell(const Seq2SeqModel& nmt, const EncodedCorpus& corpus, std::string_view lang,
                          const CellOptions& options) {
  auto sel = require_sentences(corpus, lang, options);
  LangVector v;
  v.lang = std::string(lang);
  v.method = Method::MTCell;
  v.values = mean_over_steps(encode_all(nmt, sel), true, options);
  v.n_sentences = sel.size();
  return v;
}

LangVector extract_variant(const Seq2SeqModel& nmt, const EncodedCorpus& corpus, std::string_view lang,
                           VariantKind kind, const CellOptions& options) {
  auto sel = require_sentences(corpus, lang, options);
  auto states = encode_all(nmt, sel);
  LangVector v;
  v.lang = std::string(lang);
  v.n_sentences = sel.size();
  if (kind == VariantKind::MeanHidden) {
    v.method = Method::MTHiddenMean;
    v.values = mean_over_steps(states, false, options);
  } else {
    v.method = Method::MTCellFinal;
    v.values.assign(nmt.dims().hidden, 0.0);
    for (const auto& sentence : states)
      for (std::size_t d = 0; d < v.values.size(); ++d) v.values[d] += sentence.back().c[d];
    for (double& x : v.values) x /= static_cast<double>(states.size());
  }
  return v;
}

LangVector combine_mtboth(const LangVector& mtvec, const LangVector& mtcell) {
  if (mtvec.lang != mtcell.lang)
    throw ValidationError("combine_mtboth: language mismatch " + mtvec.lang + " vs " + mtcell.lang);
  if (mtvec.method != Method::MTVec || mtcell.method != Method::MTCell)
    throw ValidationError("combine_mtboth: expects an MTVec and an MTCell vector");
  LangVector v;
  v.lang = mtvec.lang;
  v.method = Method::MTBoth;
  v.values = mtvec.values;
  v.values.insert(v.values.end(), mtcell.values.begin(), mtcell.values.end());
  v.n_sentences = mtcell.n_sentences;
  return v;
}

void write_vectors(std::ostream& out, const std::vector<LangVector>& vectors) {
  out << "lang\tmethod\tdim\tn_sentences\n";
  for (const auto& v : vectors) {
    out << v.lang << '\t' << method_name(v.method) << '\t' << v.dim() << '\t' << v.n_sentences << '\t';
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      if (i) out << ' ';
      out << format_double(v.values[i]);
    }
    out << '\n';
  }
}

std::vector<LangVector> read_vectors(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line != "lang\tmethod\tdim\tn_sentences")
    throw ParseError(source_name, 1, "missing vector store header");
  ++lineno;
  std::vector<LangVector> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 5) throw ParseError(source_name, lineno, "expected 5 tab-separated fields");
    try {
      LangVector v;
      v.lang = cols[0];
      v.method = parse_method(cols[1]);
      const auto dim = static_cast<std::size_t>(parse_int(cols[2]));
      v.n_sentences = static_cast<std::size_t>(parse_int(cols[3]));
      if (!cols[4].empty())
        for (const auto& s : split(cols[4], ' ')) v.values.push_back(parse_double(s));
      if (v.values.size() != dim) throw ValidationError("dim field disagrees with value count");
      for (double x : v.values)
        if (!std::isfinite(x)) throw ValidationError("non-finite value");
      out.push_back(std::move(v));
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(source_name, lineno, e.what());
    }
  }
  return out;
}

void save_vectors(const std::filesystem::path& path, const std::vector<LangVector>& vectors) {
  std::ostringstream out;
  write_vectors(out, vectors);
  write_file(path, out.str());
}

std::vector<LangVector> load_vectors(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_vectors(in, path.string());
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("cosine_distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 0.0 : 1.0;
  return std::clamp(1.0 - dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 2.0);
}

Dendrogram cluster_vectors(const std::vector<LangVector>& vectors) {
  const std::size_t n = vectors.size();
  if (n < 2) throw ValidationError("cluster_vectors: need at least 2 vectors");
  for (const auto& v : vectors)
    if (v.dim() != vectors[0].dim()) throw ValidationError("cluster_vectors: dimension mismatch for " + v.lang);

  Dendrogram tree;
  for (const auto& v : vectors) tree.leaves.push_back(v.lang);

  // Active clusters: node id, size, and distances to every other active one.
  std::vector<std::size_t> node(n), size(n, 1);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    node[i] = i;
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = cosine_distance(vectors[i].values, vectors[j].values);
  }
  std::vector<bool> active(n, true);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j)
        if (active[j] && dist[i][j] < best) {
          best = dist[i][j];
          bi = i;
          bj = j;
        }
    }
    tree.merges.push_back({node[bi], node[bj], best, size[bi] + size[bj]});
    // Lance-Williams update for average linkage; the merged cluster lives in slot bi.
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double d = (static_cast<double>(size[bi]) * dist[bi][k] + static_cast<double>(size[bj]) * dist[bj][k]) /
                       static_cast<double>(size[bi] + size[bj]);
      dist[bi][k] = dist[k][bi] = d;
    }
    size[bi] += size[bj];
    node[bi] = n + step;
    active[bj] = false;
  }
  return tree;
}

std::string Dendrogram::newick() const {
  const std::size_t n = leaves.size();
  std::function<std::string(std::size_t)> render = [&](std::size_t id) -> std::string {
    if (id < n) return leaves[id];
    const Merge& m = merges[id - n];
    return "(" + render(m.left) + "," + render(m.right) + "):" + format_double(m.distance);
  };
  if (merges.empty()) return n == 1 ? leaves[0] + ";" : ";";
  return render(n + merges.size() - 1) + ";";
}

}  // namespace langtyp
