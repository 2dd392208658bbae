// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails. Tolerances are fixed constants below.

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "langtyp/bpe.hpp"
#include "langtyp/error.hpp"
#include "langtyp/lang_repr.hpp"
#include "langtyp/models.hpp"
#include "langtyp/pipeline.hpp"
#include "langtyp/predict.hpp"
#include "langtyp/report.hpp"
#include "langtyp/synth.hpp"
#include "langtyp/util.hpp"
#include "oracles.hpp"

using namespace langtyp;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
// Evaluating the seq2seq loss twice leaves about 1e-14 of rounding noise, so
// central differences at h = 1e-5 carry about 1e-9 of absolute error. Below
// this magnitude the relative error measures that noise, not the gradient.
constexpr double kGradFloor = 1e-5;
constexpr double kOverfitPerplexity = 1.1;
constexpr double kFirstEpochSlack = 0.05;
constexpr double kSynthTarget = 85.0;
constexpr double kKnnCeiling = 65.0;
constexpr double kOrderingSlack = 2.0;
constexpr double kBootstrapNearOne = 0.99;
constexpr double kBootstrapDominance = 0.001;
constexpr double kTrajectoryTolerance = 1e-10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("langtyp_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 1. Finite differences on the LSTM step and the translation loss.
Outcome gradients() {
  constexpr std::size_t H = 8, E = 8, V = 20;
  std::mt19937_64 rng(101);
  ParameterSet ps;
  LstmCell cell = LstmCell::create(ps, "cell", E, H, rng);
  Parameter& x = ps.add("x", xavier_uniform(3, E, rng));
  Parameter& h0 = ps.add("h0", xavier_uniform(3, H, rng));
  Parameter& c0 = ps.add("c0", xavier_uniform(3, H, rng));
  const double lstm_err = gradcheck::max_relative_error(
      ps,
      [&](Graph& g) {
        LstmState s = lstm_step(g, cell, g.param(x), {g.param(h0), g.param(c0)}, true);
        return ops::sum(ops::add(ops::mul(s.h, s.h), ops::scale(s.c, 0.5)));
      },
      kGradStep, kGradFloor);

  EncodedPair a{"aaa", 4, {6, 7, 8, 9}, {10, 11, 12}};
  EncodedPair b{"bbb", 5, {13, 14, 15, 16}, {17, 18, 19, 6, 7}};
  const EncodedPair* batch[] = {&a, &b};
  double seq_err = 0.0;
  for (bool attention : {false, true}) {
    Seq2SeqModel model({V, E, H, attention}, 202);
    std::mt19937_64 drop(1);
    seq_err = std::max(seq_err, gradcheck::max_relative_error(
                                    model.params(), [&](Graph& g) { return model.batch_loss(g, batch, 0.0, drop); },
                                    kGradStep, kGradFloor));
  }
  const double worst = std::max(lstm_err, seq_err);
  return {worst <= kGradTolerance,
          "LSTM step " + fmt_sci(lstm_err) + ", seq2seq loss " + fmt_sci(seq_err) + " (limit 1e-4, denominator floor 1e-5)"};
}

// 2. Learned merges agree with the recount oracle.
Outcome bpe_oracle() {
  std::mt19937_64 rng(202);
  const std::vector<std::string> alphabet = {"a", "b", "c", "d", "é", "ß", "ж"};
  int agree = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, long> counts;
    const std::size_t types = std::uniform_int_distribution<std::size_t>(5, 100)(rng);
    const std::size_t letters = std::uniform_int_distribution<std::size_t>(2, alphabet.size())(rng);
    while (counts.size() < types) {
      std::string w;
      for (int n = std::uniform_int_distribution<int>(1, 7)(rng); n > 0; --n)
        w += alphabet[std::uniform_int_distribution<std::size_t>(0, letters - 1)(rng)];
      counts[w] += std::uniform_int_distribution<long>(1, 6)(rng);
    }
    const int merges = std::uniform_int_distribution<int>(1, 20)(rng);
    if (learn_bpe(counts, merges).merges() == oracle::learn_bpe(counts, merges)) ++agree;
  }
  return {agree == 20, std::to_string(agree) + "/20 corpora identical"};
}

// 3. k-NN vectors agree with a full sort, with ties and missing values.
Outcome knn_oracle() {
  std::mt19937_64 rng(303);
  int agree = 0;
  std::size_t tied_queries = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 50)(rng);
    // Coarse coordinates and shallow lineages make equal distances common.
    std::uniform_int_distribution<int> grid(-2, 2), fam(0, 2), depth(1, 2);
    Registry reg;
    for (std::size_t i = 0; i < n; ++i) {
      LanguageRecord r;
      r.code = "k" + std::to_string(100 + (i * 37) % 1000);
      r.lat = 30.0 * grid(rng);
      r.lon = 60.0 * grid(rng);
      r.lineage = {"F" + std::to_string(fam(rng))};
      if (depth(rng) == 2) r.lineage.push_back(r.lineage[0] + "x" + std::to_string(fam(rng)));
      reg.add(r);
    }
    std::vector<std::string> langs;
    for (const auto& r : reg.records()) langs.push_back(r.code);
    std::vector<FeatureSpec> specs;
    for (int f = 0; f < 8; ++f) specs.push_back(make_feature_spec("S_F" + std::to_string(f)));
    FeatureMatrix m(langs, specs);
    std::bernoulli_distribution bit(0.5);
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t f = 0; f < specs.size(); ++f) {
        const double missing = f == 7 ? 0.95 : 0.3;  // one feature almost never observed
        if (!std::bernoulli_distribution(missing)(rng)) m.set(l, f, bit(rng) ? 1 : 0);
      }
    const std::size_t k = std::min<std::size_t>(n - 1, std::uniform_int_distribution<std::size_t>(1, 5)(rng));
    DistanceContext d(reg, {k, 1.0, trial % 4 == 0 ? 0.0 : 1.0});
    bool same = true;
    for (const auto& lang : langs) {
      std::vector<double> ds;
      for (const auto& o : langs)
        if (o != lang) ds.push_back(d.combined(lang, o));
      std::sort(ds.begin(), ds.end());
      if (k < ds.size() && ds[k - 1] == ds[k]) ++tied_queries;
      if (knn_feature_vector(lang, m, d) != oracle::knn_feature_vector(lang, m, d)) same = false;
    }
    if (same) ++agree;
  }
  return {agree == 20, std::to_string(agree) + "/20 registries identical; " + std::to_string(tied_queries) +
                           " queries with a tie at the k-th neighbour"};
}

// 4. One sentence pair is memorised.
Outcome overfit() {
  SubwordVocab vocab;
  vocab.add(language_token("aaa"));
  for (int i = 0; i < 27; ++i) vocab.add("p" + std::to_string(i));
  const std::size_t V = vocab.size();
  EncodedCorpus corpus = {{"aaa", vocab.lang_id("aaa"), {5, 9, 14, 20, 7}, {11, 25, 18, 6, 30, 12}}};
  TrainConfig cfg;
  cfg.hidden = 32;
  cfg.embed = 32;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.dropout = 0.0;
  cfg.lr = 0.01;
  cfg.seed = 404;
  auto result = train_nmt(corpus, vocab, cfg);
  const double ppl = perplexity(result.model, corpus);
  const double first = result.loss_curve.front();
  const double ln_v = std::log(static_cast<double>(V));
  const double rel = std::abs(first - ln_v) / ln_v;
  return {ppl <= kOverfitPerplexity && rel <= kFirstEpochSlack,
          "perplexity " + fmt(ppl, 4) + " (limit 1.1); epoch-1 loss " + fmt(first, 4) + " vs ln V " + fmt(ln_v, 4) +
              " (" + fmt(100 * rel) + "% off, limit 5%)"};
}

// 7. Stored table values render to the golden files.
Outcome tables() {
  const std::string dir = LANGTYP_TEST_DATA;
  std::istringstream t1(read_file(dir + "/fixtures/table1.tsv")), t2(read_file(dir + "/fixtures/table2.tsv"));
  const bool one = render_accuracy_markdown(read_accuracy_tsv(t1)) == read_file(dir + "/golden/table1.md");
  const bool two = render_gains_markdown(read_gains_tsv(t2)) == read_file(dir + "/golden/table2.md");
  return {one && two, std::string("table1 ") + (one ? "identical" : "differs") + ", table2 " +
                          (two ? "identical" : "differs")};
}

// 8. Paired bootstrap sanity.
Outcome bootstrap() {
  std::vector<int> gold(200), right(200), wrong(200);
  for (int i = 0; i < 200; ++i) {
    gold[i] = i % 3 == 0;
    right[i] = gold[i];
    wrong[i] = 1 - gold[i];
  }
  const auto same = paired_bootstrap(right, right, gold, 10000, 808);
  const auto dom = paired_bootstrap(wrong, right, gold, 10000, 808);
  std::vector<int> mixed = right;
  for (int i = 0; i < 200; i += 7) mixed[i] = 1 - gold[i];
  const auto r1 = paired_bootstrap(mixed, right, gold, 10000, 909);
  const auto r2 = paired_bootstrap(mixed, right, gold, 10000, 909);
  const bool repeat = std::memcmp(&r1.p_value, &r2.p_value, sizeof(double)) == 0;
  return {same.p_value >= kBootstrapNearOne && dom.p_value <= kBootstrapDominance && repeat,
          "identical p=" + fmt(same.p_value, 4) + ", dominance p=" + fmt(dom.p_value, 4) +
              ", repeated seed " + (repeat ? "bitwise equal" : "differs")};
}

std::string pipeline_config(const std::string& extra) {
  return "registry = data/registry.tsv\n"
         "corpus = data/corpus.txt\n"
         "features = data/features.csv\n"
         "work_dir = work\n" +
         extra;
}

// 9. Two runs with the same config produce identical artefacts.
Outcome determinism() {
  const std::string cfg = pipeline_config(
      "seed = 99\nsynth_langs = 12\nsynth_sentences = 40\nnum_merges = 60\nhidden = 8\nembed = 8\n"
      "epochs = 2\nfolds = 3\nbootstrap_resamples = 1000\n");
  std::vector<fs::path> dirs = {scratch("det_a"), scratch("det_b")};
  for (const auto& d : dirs) {
    write_file(d / "run.cfg", cfg);
    Pipeline(load_pipeline_config(d / "run.cfg")).run("all");
  }
  const char* files[] = {"extract/vectors.tsv",      "report/table1.md",     "report/table2.md",
                         "report/accuracy.tsv",      "report/gains.tsv",     "report/features.tsv",
                         "bootstrap/bootstrap.tsv",  "predict/predictions.tsv", "traj/trajectory.csv",
                         "train-nmt/model.ckpt",     "train-lm/model.ckpt"};
  std::size_t same = 0, total = 0;
  std::string differing;
  for (const char* f : files) {
    ++total;
    if (read_file(dirs[0] / "work" / f) == read_file(dirs[1] / "work" / f))
      ++same;
    else
      differing += std::string(" ") + f;
  }
  for (const auto& d : dirs) fs::remove_all(d);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) + " artefacts byte-identical" +
                             (differing.empty() ? "" : "; differ:" + differing)};
}

struct SynthRun {
  fs::path dir;
  PipelineConfig config;
  double seconds = 0;
};

// Shared by criteria 5, 6 and 10: the full pipeline on a 40-language suite.
SynthRun run_synthetic() {
  SynthRun run;
  run.dir = scratch("synth");
  write_file(run.dir / "run.cfg",
             pipeline_config("seed = 2024\nsynth_langs = 40\nsynth_sentences = 500\nnum_merges = 300\n"
                             "hidden = 64\nembed = 64\nepochs = 10\ndropout = 0\nlr = 0.005\nattention = true\n"
                             "methods = None,MTVec,MTCell,MTBoth\nfolds = 10\ntraj_sentences = 3\n"));
  run.config = load_pipeline_config(run.dir / "run.cfg");
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline(run.config).run("all");
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// Per (method, aux, feature) accuracy recomputed from the raw predictions.
std::map<std::string, double> feature_accuracy(const fs::path& predictions) {
  std::map<std::string, std::pair<int, int>> counts;
  std::istringstream in(read_file(predictions));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line, '\t');
    auto& c = counts[f[0] + f[1] + " " + f[2]];
    c.first += f[5] == f[6];
    c.second += 1;
  }
  std::map<std::string, double> acc;
  for (const auto& [k, c] : counts) acc[k] = 100.0 * c.first / c.second;
  return acc;
}

Outcome synthetic_signal(const SynthRun& run, const std::map<std::string, double>& acc) {
  const std::string obj = kObjectBeforeVerb;
  const double both = acc.at("MTBoth-Aux " + obj), chance = acc.at("None-Aux " + obj), knn = acc.at("None+Aux " + obj);
  return {both >= kSynthTarget && knn <= kKnnCeiling,
          obj + ": MTBoth -Aux " + fmt(both) + " (>= 85), chance " + fmt(chance) + ", k-NN " + fmt(knn) +
              " (<= 65); pipeline " + fmt(run.seconds / 60.0, 1) + " min"};
}

Outcome ordering(const std::map<std::string, double>& acc) {
  double both = 0, vec = 0, chance = 0;
  for (const char* f : {kObjectBeforeVerb, kAdpositionAfterNoun, kNumeralBeforeNoun}) {
    both += acc.at(std::string("MTBoth-Aux ") + f) / 3;
    vec += acc.at(std::string("MTVec-Aux ") + f) / 3;
    chance += acc.at(std::string("None-Aux ") + f) / 3;
  }
  return {both + kOrderingSlack >= vec && vec + kOrderingSlack >= chance,
          "syntax mean: MTBoth -Aux " + fmt(both) + " >= MTVec -Aux " + fmt(vec) + " >= chance " + fmt(chance) +
              " (2-point ties allowed)"};
}

// 10. Each exported series averages to the one-sentence MTCell coordinate.
Outcome trajectory(const SynthRun& run) {
  const fs::path W = run.config.path("work_dir");
  Registry reg = load_registry(W / "ingest" / "registry.tsv");
  CorpusStore corpus = load_parallel(W / "ingest" / "corpus.txt", reg);
  MergeTable merges = load_merges(W / "bpe-learn" / "merges.txt");
  SubwordVocab vocab = load_vocab(W / "bpe-learn" / "vocab.tsv");
  EncodedCorpus encoded = encode_corpus(corpus, merges, vocab);
  Seq2SeqModel nmt = load_nmt(W / "train-nmt" / "model", vocab);
  const auto info = parse_key_values(read_file(W / "traj" / "node.txt"), "node.txt");
  const std::size_t node = std::stoul(info.at("node"));

  std::map<std::string, std::vector<const EncodedPair*>> by_lang;
  for (const auto& p : encoded) by_lang[p.lang].push_back(&p);

  // (lang, sentence) -> exported values in step order.
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> series;
  std::istringstream in(read_file(W / "traj" / "trajectory.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line, ',');
    series[{f[0], std::stoul(f[1])}].push_back(parse_double(f[3]));
  }
  double worst = 0.0;
  for (const auto& [key, values] : series) {
    const EncodedPair& pair = *by_lang.at(key.first).at(key.second);
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    EncodedCorpus one = {pair};
    worst = std::max(worst, std::abs(mean - extract_mtcell(nmt, one, key.first).values[node]));
  }
  return {!series.empty() && worst <= kTrajectoryTolerance,
          std::to_string(series.size()) + " sentences, node " + std::to_string(node) + ", max deviation " +
              fmt_sci(worst) + " (limit 1e-10)"};
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  std::vector<std::pair<int, Outcome>> results;
  auto report = [&](int id, const std::string& name, Outcome o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
              << std::endl;
    results.push_back({id, o});
  };

  report(1, "gradient check", guarded(gradients));
  report(2, "BPE oracle", guarded(bpe_oracle));
  report(3, "k-NN oracle", guarded(knn_oracle));
  report(4, "overfit", guarded(overfit));

  SynthRun run;
  std::map<std::string, double> acc;
  Outcome synth_failure;
  try {
    run = run_synthetic();
    acc = feature_accuracy(run.config.path("work_dir") / "predict" / "predictions.tsv");
  } catch (const std::exception& e) {
    synth_failure = {false, std::string("synthetic run failed: ") + e.what()};
  }
  const bool have_synth = !acc.empty();
  report(5, "synthetic signal", have_synth ? guarded([&] { return synthetic_signal(run, acc); }) : synth_failure);
  report(6, "ordering", have_synth ? guarded([&] { return ordering(acc); }) : synth_failure);
  report(7, "table fixtures", guarded(tables));
  report(8, "bootstrap", guarded(bootstrap));
  report(9, "determinism", guarded(determinism));
  report(10, "trajectory", have_synth ? guarded([&] { return trajectory(run); }) : synth_failure);

  if (have_synth) fs::remove_all(run.dir);
  int failed = 0;
  for (const auto& [_, o] : results) failed += !o.pass;
  std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
