#include "langtyp/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "langtyp/bpe.hpp"
#include "langtyp/corpus.hpp"
#include "langtyp/error.hpp"
#include "langtyp/lang_repr.hpp"
#include "langtyp/report.hpp"
#include "langtyp/synth.hpp"
#include "langtyp/util.hpp"

namespace fs = std::filesystem;

namespace langtyp {

const std::map<std::string, std::string>& config_defaults() {
  static const std::map<std::string, std::string> defaults = {
      {"registry", ""},
      {"corpus", ""},
      {"features", ""},
      {"work_dir", ""},
      {"seed", ""},
      {"num_merges", "32000"},
      {"hidden", "512"},
      {"embed", "512"},
      {"lr", "0.001"},
      {"dropout", "0.5"},
      {"epochs", "10"},
      {"batch_size", "32"},
      {"clip_norm", "5"},
      {"attention", "false"},
      {"lang_token", "true"},
      {"knn_k", "3"},
      {"knn_geodesic_weight", "1"},
      {"knn_genetic_weight", "1"},
      {"methods", "None,LMVec,MTVec,MTCell,MTBoth"},
      {"folds", "10"},
      {"l2", "1"},
      {"bootstrap_resamples", "10000"},
      {"cell_max_sentences", "0"},
      {"traj_feature", "S_OBJECT_BEFORE_VERB"},
      {"traj_method", "MTCell"},
      {"traj_sentences", "3"},
      {"synth_langs", "0"},
      {"synth_sentences", "500"},
      {"synth_lexicon", "20"},
  };
  return defaults;
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ValidationError("config: unknown key '" + key + "'");
  return it->second;
}

fs::path PipelineConfig::path(const std::string& key) const {
  fs::path p = get(key);
  return p.is_absolute() ? p : base_dir / p;
}

long long PipelineConfig::integer(const std::string& key) const {
  try {
    return parse_int(get(key));
  } catch (const ValidationError& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

double PipelineConfig::real(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const ValidationError& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

bool PipelineConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::uint64_t PipelineConfig::seed() const {
  const long long s = integer("seed");
  if (s < 0) throw ValidationError("config key 'seed' must be non-negative");
  return static_cast<std::uint64_t>(s);
}

TrainConfig PipelineConfig::train() const {
  TrainConfig t;
  auto positive = [&](const std::string& key) {
    const long long v = integer(key);
    if (v <= 0) throw ValidationError("config key '" + key + "' must be positive");
    return v;
  };
  t.hidden = static_cast<std::size_t>(positive("hidden"));
  t.embed = static_cast<std::size_t>(positive("embed"));
  t.lr = real("lr");
  t.dropout = real("dropout");
  t.epochs = static_cast<int>(positive("epochs"));
  t.batch_size = static_cast<std::size_t>(positive("batch_size"));
  t.clip_norm = real("clip_norm");
  t.attention = flag("attention");
  t.lang_token = flag("lang_token");
  t.seed = seed();
  t.validate();
  return t;
}

KnnConfig PipelineConfig::knn() const {
  KnnConfig k;
  const long long n = integer("knn_k");
  if (n <= 0) throw ValidationError("config key 'knn_k' must be positive");
  k.k = static_cast<std::size_t>(n);
  k.geodesic_weight = real("knn_geodesic_weight");
  k.genetic_weight = real("knn_genetic_weight");
  k.validate();
  return k;
}

std::vector<EvalMethod> PipelineConfig::methods() const {
  std::vector<EvalMethod> out;
  for (const auto& part : split(get("methods"), ',')) {
    EvalMethod m;
    try {
      m = parse_eval_method(trim(part));
    } catch (const ValidationError& e) {
      throw ValidationError("config key 'methods': " + std::string(e.what()));
    }
    if (std::find(out.begin(), out.end(), m) != out.end())
      throw ValidationError("config key 'methods' lists " + eval_method_name(m) + " twice");
    out.push_back(m);
  }
  if (out.empty()) throw ValidationError("config key 'methods' is empty");
  return out;
}

PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source_name,
                                     const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  c.values = parse_key_values(text, source_name);
  for (const auto& [key, _] : c.values)
    if (!config_defaults().count(key)) throw ValidationError(source_name + ": unknown config key '" + key + "'");
  for (const auto& [key, def] : config_defaults()) {
    if (c.values.count(key)) continue;
    if (def.empty()) throw ValidationError(source_name + ": missing required config key '" + key + "'");
    c.values[key] = def;
  }
  // Validate everything up front so a bad value fails before any stage runs.
  c.seed();
  c.train();
  c.knn();
  c.methods();
  if (c.integer("num_merges") <= 0) throw ValidationError("config key 'num_merges' must be positive");
  if (c.integer("folds") < 2) throw ValidationError("config key 'folds' must be at least 2");
  if (!(c.real("l2") >= 0.0)) throw ValidationError("config key 'l2' must be non-negative");
  if (c.integer("bootstrap_resamples") < static_cast<long long>(kMinBootstrapResamples))
    throw ValidationError("config key 'bootstrap_resamples' must be at least " +
                          std::to_string(kMinBootstrapResamples));
  if (c.integer("cell_max_sentences") < 0) throw ValidationError("config key 'cell_max_sentences' must be >= 0");
  if (c.integer("traj_sentences") <= 0) throw ValidationError("config key 'traj_sentences' must be positive");
  const Method traj = parse_method(c.get("traj_method"));
  if (traj != Method::MTCell && traj != Method::MTBoth)
    throw ValidationError("config key 'traj_method' must be MTCell or MTBoth");
  make_feature_spec(c.get("traj_feature"));
  if (c.integer("synth_langs") < 0 || c.integer("synth_sentences") <= 0 || c.integer("synth_lexicon") < 10)
    throw ValidationError("config: synth_langs >= 0, synth_sentences > 0 and synth_lexicon >= 10 required");
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(read_file(path), path.string(), path.parent_path());
}

std::string effective_config(const PipelineConfig& config) { return format_key_values(config.values); }

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth",   "ingest",   "bpe-learn", "train-lm",
                                                 "train-nmt", "extract", "baseline",  "predict",
                                                 "report",  "bootstrap", "traj"};
  return names;
}

namespace {

// Independent random streams per stage.
enum Stream : std::uint64_t { kNmtStream = 1, kLmStream, kFoldStream, kBootstrapStream, kTrajStream, kCellStream };

void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << std::endl; }

class WorkLock {
 public:
  explicit WorkLock(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST)
        throw RuntimeFailure("work dir is locked by another run (" + path.string() +
                             "); remove the file if no run is active");
      throw RuntimeFailure("cannot create lock " + path.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The pid is informational only.
    }
  }
  ~WorkLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  WorkLock(const WorkLock&) = delete;
  WorkLock& operator=(const WorkLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Input {
  std::string name;
  fs::path path;
  std::string producer;  // stage to run when missing
};

struct StageSpec {
  std::vector<Input> inputs;
  std::vector<std::string> config_keys;
  std::vector<fs::path> outputs;
  std::function<void()> action;
};

bool has_method(const std::vector<EvalMethod>& methods, Method m) {
  return std::find(methods.begin(), methods.end(), EvalMethod(m)) != methods.end();
}

bool needs_nmt(const std::vector<EvalMethod>& methods) {
  return has_method(methods, Method::MTVec) || has_method(methods, Method::MTCell) ||
         has_method(methods, Method::MTBoth) || has_method(methods, Method::MTCellFinal) ||
         has_method(methods, Method::MTHiddenMean);
}

bool needs_vectors(const std::vector<EvalMethod>& methods) {
  return std::any_of(methods.begin(), methods.end(), [](const EvalMethod& m) { return m.has_value(); });
}

void write_knn_table(const fs::path& path, const KnnTable& table) {
  std::ostringstream out;
  out << "lang\tvalues\n";
  for (const auto& [lang, v] : table) {
    std::vector<std::string> parts;
    for (double x : v) parts.push_back(format_double(x));
    out << lang << '\t' << join(parts, " ") << '\n';
  }
  write_file(path, out.str());
}

KnnTable read_knn_table(const fs::path& path) {
  KnnTable table;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (++n == 1) continue;
    if (line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 2) throw ParseError(path.string(), n, "expected 2 fields");
    std::vector<double> v;
    for (const auto& x : split(f[1], ' '))
      if (!x.empty()) v.push_back(parse_double(x));
    table.emplace(f[0], std::move(v));
  }
  return table;
}

void write_folds(const fs::path& path, const FoldAssignment& folds) {
  std::ostringstream out;
  out << "# seed=" << folds.seed << " n_folds=" << folds.n_folds << " hash=" << hex64(folds.hash()) << "\n";
  out << "lang\tfold\n";
  for (const auto& [lang, f] : folds.fold) out << lang << '\t' << f << '\n';
  write_file(path, out.str());
}

FoldAssignment read_folds(const fs::path& path) {
  FoldAssignment a;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  int max_fold = -1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#' || line == "lang\tfold") continue;
    auto f = split(line, '\t');
    if (f.size() != 2) throw ParseError(path.string(), n, "expected 2 fields");
    const int fold = static_cast<int>(parse_int(f[1]));
    a.languages.push_back(f[0]);
    a.fold[f[0]] = fold;
    max_fold = std::max(max_fold, fold);
  }
  a.n_folds = max_fold + 1;
  return a;
}

void write_predictions(const fs::path& path, const EvalReport& report, const FeatureMatrix& matrix,
                       const FoldAssignment& folds) {
  std::ostringstream out;
  out << "method\taux\tfeature\tlang\tfold\tgold\tpredicted\n";
  for (const auto& c : report.conditions)
    for (const auto& p : c.predictions)
      out << eval_method_name(c.method) << '\t' << (c.aux ? "+Aux" : "-Aux") << '\t'
          << matrix.features()[p.feature].name << '\t' << p.lang << '\t' << folds.fold_of(p.lang) << '\t' << p.gold
          << '\t' << p.predicted << '\n';
  write_file(path, out.str());
}

EvalReport read_predictions(const fs::path& path, const FeatureMatrix& matrix, std::uint64_t fold_hash) {
  EvalReport report;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (++n == 1 || line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 7) throw ParseError(path.string(), n, "expected 7 fields");
    const EvalMethod method = parse_eval_method(f[0]);
    const bool aux = f[1] == "+Aux";
    auto feature = matrix.feature_index(f[2]);
    if (!feature) throw ParseError(path.string(), n, "unknown feature " + f[2]);
    ConditionResult* cond = nullptr;
    for (auto& c : report.conditions)
      if (c.method == method && c.aux == aux) cond = &c;
    if (!cond) {
      report.conditions.push_back({method, aux, fold_hash, {}, {}});
      cond = &report.conditions.back();
    }
    InstancePrediction p{f[3], *feature, static_cast<int>(parse_int(f[5])), static_cast<int>(parse_int(f[6]))};
    cond->predictions.push_back(p);
  }
  for (auto& c : report.conditions) {
    std::map<std::size_t, FeatureResult> by_feature;
    for (const auto& p : c.predictions) {
      auto& fr = by_feature[p.feature];
      fr.feature = p.feature;
      fr.name = matrix.features()[p.feature].name;
      fr.category = matrix.features()[p.feature].category;
      ++fr.total;
      if (p.gold == p.predicted) ++fr.correct;
    }
    for (auto& [_, fr] : by_feature) c.features.push_back(fr);
  }
  return report;
}

FeatureMatrix restrict_matrix(const FeatureMatrix& matrix, const std::vector<std::string>& langs) {
  FeatureMatrix out(langs, matrix.features());
  for (std::size_t r = 0; r < langs.size(); ++r) {
    const std::size_t src = *matrix.language_index(langs[r]);
    for (std::size_t f = 0; f < matrix.num_features(); ++f) out.set(r, f, matrix.get(src, f));
  }
  return out;
}

// Matrix languages that have every representation the methods need.
std::vector<std::string> evaluable_languages(const FeatureMatrix& matrix, const VectorTable& vectors,
                                             const std::vector<EvalMethod>& methods) {
  std::vector<std::string> out;
  for (const auto& lang : matrix.languages()) {
    bool ok = true;
    for (const auto& m : methods) {
      if (!m) continue;
      auto it = vectors.find(*m);
      if (it == vectors.end() || !it->second.count(lang)) ok = false;
    }
    if (ok) out.push_back(lang);
  }
  return out;
}

// The learned method whose gains are tabulated: MTBoth when evaluated,
// otherwise the last learned method listed.
EvalMethod headline_method(const std::vector<EvalMethod>& methods) {
  if (has_method(methods, Method::MTBoth)) return Method::MTBoth;
  EvalMethod best;
  for (const auto& m : methods)
    if (m) best = m;
  return best;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {}

fs::path Pipeline::work_dir() const { return config_.path("work_dir"); }

std::vector<StageOutcome> Pipeline::run(const std::string& stage) {
  const auto& names = stage_names();
  if (stage != "all" && std::find(names.begin(), names.end(), stage) == names.end())
    throw ValidationError("unknown stage '" + stage + "'");
  fs::create_directories(work_dir());
  WorkLock lock(work_dir() / ".lock");
  write_file(work_dir() / "config.effective", effective_config(config_));

  std::vector<StageOutcome> outcomes;
  if (stage != "all") {
    outcomes.push_back(run_stage(stage));
    return outcomes;
  }
  const auto methods = config_.methods();
  for (const auto& name : names) {
    if (name == "synth" && config_.integer("synth_langs") == 0) continue;
    if (name == "train-lm" && !has_method(methods, Method::LMVec)) continue;
    if (name == "train-nmt" && !needs_nmt(methods)) continue;
    if (name == "extract" && !needs_vectors(methods)) continue;
    if (name == "traj" && !has_method(methods, parse_method(config_.get("traj_method")))) continue;
    outcomes.push_back(run_stage(name));
  }
  return outcomes;
}

StageOutcome Pipeline::run_stage(const std::string& stage) {
  const PipelineConfig& cfg = config_;
  const fs::path W = work_dir();
  const auto methods = cfg.methods();
  const std::uint64_t seed = cfg.seed();

  const fs::path ingest_registry = W / "ingest" / "registry.tsv", ingest_corpus = W / "ingest" / "corpus.txt",
                 ingest_features = W / "ingest" / "features.csv";
  const fs::path merges_path = W / "bpe-learn" / "merges.txt", vocab_path = W / "bpe-learn" / "vocab.tsv";
  const fs::path nmt_stem = W / "train-nmt" / "model", lm_stem = W / "train-lm" / "model";
  const fs::path vectors_path = W / "extract" / "vectors.tsv";
  const fs::path knn_path = W / "baseline" / "knn.tsv";
  const fs::path predictions_path = W / "predict" / "predictions.tsv", folds_path = W / "predict" / "folds.tsv";

  const std::vector<Input> ingested = {{"registry", ingest_registry, "ingest"},
                                       {"corpus", ingest_corpus, "ingest"}};
  const std::vector<Input> subwords = {{"merges", merges_path, "bpe-learn"}, {"vocab", vocab_path, "bpe-learn"}};
  auto model_inputs = [](const std::string& name, const fs::path& stem, const std::string& producer) {
    return std::vector<Input>{{name + ".ckpt", stem.string() + ".ckpt", producer},
                              {name + ".manifest", stem.string() + ".manifest", producer}};
  };
  auto concat = [](std::vector<Input> a, const std::vector<Input>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  const std::vector<std::string> train_keys = {"hidden", "embed",      "lr",        "dropout",   "epochs",
                                               "batch_size", "clip_norm", "attention", "lang_token", "seed"};

  auto load_corpus = [&](const Registry& reg) { return load_parallel(ingest_corpus, reg); };

  StageSpec spec;
  if (stage == "synth") {
    spec.config_keys = {"synth_langs", "synth_sentences", "synth_lexicon", "seed"};
    spec.outputs = {cfg.path("registry"), cfg.path("corpus"), cfg.path("features")};
    spec.action = [&] {
      const long long n = cfg.integer("synth_langs");
      if (n < 4) throw ValidationError("synth: config key 'synth_langs' must be at least 4");
      SynthSuite suite = generate_suite(static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.integer("synth_sentences")),
                                        seed, static_cast<std::size_t>(cfg.integer("synth_lexicon")));
      std::ostringstream reg, corpus, feats;
      write_registry(reg, suite.registry);
      write_parallel(corpus, suite.corpus);
      write_features(feats, suite.gold);
      write_file(cfg.path("registry"), reg.str());
      write_file(cfg.path("corpus"), corpus.str());
      write_file(cfg.path("features"), feats.str());
      log(stage, std::to_string(n) + " languages, " + std::to_string(suite.corpus.total()) + " sentence pairs");
    };
  } else if (stage == "ingest") {
    const std::string producer = cfg.integer("synth_langs") > 0 ? "synth" : "";
    spec.inputs = {{"registry", cfg.path("registry"), producer},
                   {"corpus", cfg.path("corpus"), producer},
                   {"features", cfg.path("features"), producer}};
    spec.outputs = {ingest_registry, ingest_corpus, ingest_features, W / "ingest" / "summary.txt"};
    spec.action = [&] {
      Registry reg = load_registry(cfg.path("registry"));
      CorpusStore corpus = load_parallel(cfg.path("corpus"), reg);
      FeatureMatrix feats = load_features(cfg.path("features"), reg);
      std::ostringstream r, c, f, s;
      write_registry(r, reg);
      write_parallel(c, corpus);
      write_features(f, feats);
      s << "languages=" << reg.size() << "\ncorpus_languages=" << corpus.languages().size()
        << "\nsentence_pairs=" << corpus.total() << "\n";
      for (Category cat : kAllCategories) s << category_name(cat) << "_features=" << feats.count(cat) << "\n";
      std::vector<std::string> sparse;
      for (std::size_t i = 0; i < feats.num_features(); ++i)
        if (feats.labeled(i) < 2) sparse.push_back(feats.features()[i].name);
      s << "unpredictable_features=" << join(sparse, ",") << "\n";
      write_file(ingest_registry, r.str());
      write_file(ingest_corpus, c.str());
      write_file(ingest_features, f.str());
      write_file(W / "ingest" / "summary.txt", s.str());
      log(stage, std::to_string(reg.size()) + " languages, " + std::to_string(corpus.total()) + " pairs, " +
                     std::to_string(feats.num_features()) + " features");
    };
  } else if (stage == "bpe-learn") {
    spec.inputs = ingested;
    spec.config_keys = {"num_merges"};
    spec.outputs = {merges_path, vocab_path};
    spec.action = [&] {
      Registry reg = load_registry(ingest_registry);
      CorpusStore corpus = load_corpus(reg);
      MergeTable merges = learn_bpe(corpus, static_cast<int>(cfg.integer("num_merges")));
      SubwordVocab vocab = build_vocab(corpus, merges, reg);
      save_merges(merges_path, merges);
      save_vocab(vocab_path, vocab);
      log(stage, std::to_string(merges.size()) + " merges, vocabulary " + std::to_string(vocab.size()));
    };
  } else if (stage == "train-nmt" || stage == "train-lm") {
    const bool nmt = stage == "train-nmt";
    const fs::path stem = nmt ? nmt_stem : lm_stem;
    spec.inputs = concat(ingested, subwords);
    spec.config_keys = train_keys;
    spec.outputs = {stem.string() + ".ckpt", stem.string() + ".manifest", stem.parent_path() / "loss.tsv"};
    spec.action = [&, nmt, stem] {
      Registry reg = load_registry(ingest_registry);
      CorpusStore corpus = load_corpus(reg);
      MergeTable merges = load_merges(merges_path);
      SubwordVocab vocab = load_vocab(vocab_path);
      EncodedCorpus encoded = encode_corpus(corpus, merges, vocab);
      TrainConfig tc = cfg.train();
      tc.seed = derive_seed(seed, nmt ? kNmtStream : kLmStream);
      auto progress = [&](int epoch, double loss) {
        log(stage, "epoch " + std::to_string(epoch) + " mean token loss " + format_double(loss));
      };
      ModelManifest m;
      m.kind = nmt ? "nmt" : "lm";
      m.config = tc;
      m.vocab_hash = vocab.hash();
      m.epoch = tc.epochs;
      std::ostringstream loss;
      loss << "epoch\tloss\n";
      if (nmt) {
        NmtTrainResult r = train_nmt(encoded, vocab, tc, progress);
        m.dims = r.model.dims();
        m.loss_curve = r.loss_curve;
        save_model(stem, r.model, m);
      } else {
        LmTrainResult r = train_lm(encoded, vocab, tc, progress);
        m.dims = r.model.dims();
        m.loss_curve = r.loss_curve;
        save_model(stem, r.model, m);
      }
      for (std::size_t e = 0; e < m.loss_curve.size(); ++e)
        loss << e + 1 << '\t' << format_double(m.loss_curve[e]) << '\n';
      write_file(stem.parent_path() / "loss.tsv", loss.str());
    };
  } else if (stage == "extract") {
    spec.inputs = concat(ingested, subwords);
    if (needs_nmt(methods)) spec.inputs = concat(spec.inputs, model_inputs("nmt", nmt_stem, "train-nmt"));
    if (has_method(methods, Method::LMVec)) spec.inputs = concat(spec.inputs, model_inputs("lm", lm_stem, "train-lm"));
    spec.config_keys = {"methods", "cell_max_sentences", "seed"};
    spec.outputs = {vectors_path};
    for (const auto& m : methods)
      if (m) spec.outputs.push_back(W / "extract" / (std::string(method_name(*m)) + ".nwk"));
    spec.action = [&] {
      Registry reg = load_registry(ingest_registry);
      CorpusStore corpus = load_corpus(reg);
      MergeTable merges = load_merges(merges_path);
      SubwordVocab vocab = load_vocab(vocab_path);
      EncodedCorpus encoded = encode_corpus(corpus, merges, vocab);
      CellOptions opts;
      if (cfg.integer("cell_max_sentences") > 0)
        opts.max_sentences = static_cast<std::size_t>(cfg.integer("cell_max_sentences"));
      opts.seed = derive_seed(seed, kCellStream);

      std::optional<Seq2SeqModel> nmt;
      std::optional<RnnLmModel> lm;
      if (needs_nmt(methods)) nmt.emplace(load_nmt(nmt_stem, vocab));
      if (has_method(methods, Method::LMVec)) lm.emplace(load_lm(lm_stem, vocab));

      std::vector<LangVector> all;
      std::map<Method, std::vector<LangVector>> by_method;
      for (const auto& lang : corpus.languages()) {
        std::optional<LangVector> mtvec, mtcell;
        auto need = [&](Method m) { return has_method(methods, m); };
        if (need(Method::MTVec) || need(Method::MTBoth)) mtvec = extract_mtvec(*nmt, vocab, lang);
        if (need(Method::MTCell) || need(Method::MTBoth)) mtcell = extract_mtcell(*nmt, encoded, lang, opts);
        for (const auto& m : methods) {
          if (!m) continue;
          LangVector v;
          switch (*m) {
            case Method::LMVec: v = extract_lmvec(*lm, vocab, lang); break;
            case Method::MTVec: v = *mtvec; break;
            case Method::MTCell: v = *mtcell; break;
            case Method::MTBoth: v = combine_mtboth(*mtvec, *mtcell); break;
            case Method::MTCellFinal: v = extract_variant(*nmt, encoded, lang, VariantKind::FinalCell, opts); break;
            case Method::MTHiddenMean: v = extract_variant(*nmt, encoded, lang, VariantKind::MeanHidden, opts); break;
          }
          by_method[*m].push_back(v);
          all.push_back(std::move(v));
        }
      }
      save_vectors(vectors_path, all);
      for (const auto& [m, vs] : by_method)
        write_file(W / "extract" / (std::string(method_name(m)) + ".nwk"), cluster_vectors(vs).newick() + "\n");
      log(stage, std::to_string(all.size()) + " vectors for " + std::to_string(corpus.languages().size()) +
                     " languages");
    };
  } else if (stage == "baseline") {
    spec.inputs = {{"registry", ingest_registry, "ingest"}, {"features", ingest_features, "ingest"}};
    spec.config_keys = {"knn_k", "knn_geodesic_weight", "knn_genetic_weight"};
    spec.outputs = {knn_path, W / "baseline" / "distances.tsv", W / "baseline" / "neighbours.tsv"};
    spec.action = [&] {
      Registry reg = load_registry(ingest_registry);
      FeatureMatrix feats = load_features(ingest_features, reg);
      DistanceContext dc(reg, cfg.knn());
      write_knn_table(knn_path, make_knn_table(feats, dc));
      std::ostringstream dump, nb;
      dump << "lang_a\tlang_b\tgeodesic\tgenetic\tcombined\n";
      dc.write_dump(dump);
      nb << "lang\tneighbours\n";
      for (const auto& lang : feats.languages()) nb << lang << '\t' << join(nearest_languages(lang, feats, dc), ",") << '\n';
      write_file(W / "baseline" / "distances.tsv", dump.str());
      write_file(W / "baseline" / "neighbours.tsv", nb.str());
      log(stage, "k-NN vectors for " + std::to_string(feats.num_languages()) + " languages");
    };
  } else if (stage == "predict") {
    spec.inputs = {{"registry", ingest_registry, "ingest"},
                   {"features", ingest_features, "ingest"},
                   {"knn", knn_path, "baseline"}};
    if (needs_vectors(methods)) spec.inputs.push_back({"vectors", vectors_path, "extract"});
    spec.config_keys = {"methods", "folds", "l2", "seed"};
    spec.outputs = {predictions_path, folds_path};
    spec.action = [&] {
      Registry reg = load_registry(ingest_registry);
      FeatureMatrix feats = load_features(ingest_features, reg);
      VectorTable vectors;
      if (needs_vectors(methods)) vectors = make_vector_table(load_vectors(vectors_path));
      KnnTable knn = read_knn_table(knn_path);
      const auto langs = evaluable_languages(feats, vectors, methods);
      if (langs.size() < feats.num_languages())
        log(stage, std::to_string(feats.num_languages() - langs.size()) + " languages lack representations; skipped");
      FeatureMatrix matrix = restrict_matrix(feats, langs);
      FoldAssignment folds = make_folds(langs, static_cast<int>(cfg.integer("folds")), derive_seed(seed, kFoldStream));
      EvalOptions opts;
      opts.l2 = cfg.real("l2");
      EvalReport report = evaluate(matrix, vectors, knn, folds, methods, {false, true}, opts);
      for (const auto& name : report.excluded_features) log(stage, "excluded " + name + ": fewer than 2 labels");
      write_predictions(predictions_path, report, matrix, folds);
      write_folds(folds_path, folds);
      log(stage, std::to_string(report.conditions.size()) + " conditions over " + std::to_string(langs.size()) +
                     " languages");
    };
  } else if (stage == "report" || stage == "bootstrap") {
    spec.inputs = {{"registry", ingest_registry, "ingest"},
                   {"features", ingest_features, "ingest"},
                   {"predictions", predictions_path, "predict"},
                   {"folds", folds_path, "predict"}};
    const fs::path dir = W / stage;
    if (stage == "report") {
      spec.config_keys = {"methods"};
      spec.outputs = {dir / "table1.md", dir / "table2.md", dir / "accuracy.tsv", dir / "gains.tsv",
                      dir / "features.tsv"};
    } else {
      spec.config_keys = {"methods", "bootstrap_resamples", "seed"};
      spec.outputs = {dir / "bootstrap.tsv"};
    }
    spec.action = [&, dir] {
      Registry reg = load_registry(ingest_registry);
      FeatureMatrix feats = load_features(ingest_features, reg);
      FoldAssignment folds = read_folds(folds_path);
      EvalReport report = read_predictions(predictions_path, feats, folds.hash());
      const EvalMethod headline = headline_method(methods);
      if (stage == "report") {
        AccuracyTable table = accuracy_table(report);
        std::ostringstream acc, gains, per_feature;
        write_accuracy_tsv(acc, table);
        std::vector<GainSection> sections;
        const ConditionResult* before = report.find(std::nullopt, false);
        const ConditionResult* after = headline ? report.find(headline, false) : nullptr;
        if (before && after)
          for (Category c : kAllCategories)
            if (before->has(c)) sections.push_back({c, top_gains(*before, *after, c)});
        write_gains_tsv(gains, sections);
        per_feature << "method\taux\tfeature\tcorrect\ttotal\taccuracy\n";
        for (const auto& c : report.conditions)
          for (const auto& f : c.features)
            per_feature << eval_method_name(c.method) << '\t' << (c.aux ? "+Aux" : "-Aux") << '\t' << f.name << '\t'
                        << f.correct << '\t' << f.total << '\t' << format_double(f.accuracy()) << '\n';
        write_file(dir / "table1.md", render_accuracy_markdown(table));
        write_file(dir / "table2.md", render_gains_markdown(sections));
        write_file(dir / "accuracy.tsv", acc.str());
        write_file(dir / "gains.tsv", gains.str());
        write_file(dir / "features.tsv", per_feature.str());
        log(stage, "tables written to " + dir.string());
      } else {
        std::ostringstream out;
        out << "category\tbaseline\tsystem\tinstances\tgain\tp_value\tresamples\n";
        const ConditionResult* a = report.find(std::nullopt, true);
        const ConditionResult* b = headline ? report.find(headline, true) : nullptr;
        if (!a || !b) throw ValidationError("bootstrap needs None and a learned method in config key 'methods'");
        const auto n = static_cast<std::size_t>(cfg.integer("bootstrap_resamples"));
        for (Category c : kAllCategories) {
          if (!a->has(c)) continue;
          AlignedPredictions al = align_predictions(*a, *b, feats, c);
          BootstrapResult r = paired_bootstrap(al.a, al.b, al.gold, n,
                                               derive_seed(derive_seed(seed, kBootstrapStream), static_cast<std::uint64_t>(c)));
          out << category_name(c) << "\tNone+Aux\t" << eval_method_name(headline) << "+Aux\t" << al.gold.size() << '\t'
              << format_double(r.observed_gain) << '\t' << format_double(r.p_value) << '\t' << r.resamples << '\n';
        }
        write_file(dir / "bootstrap.tsv", out.str());
        log(stage, "significance written to " + (dir / "bootstrap.tsv").string());
      }
    };
  } else if (stage == "traj") {
    spec.inputs = concat(concat(ingested, subwords), model_inputs("nmt", nmt_stem, "train-nmt"));
    spec.inputs.push_back({"features", ingest_features, "ingest"});
    spec.inputs.push_back({"vectors", vectors_path, "extract"});
    spec.inputs.push_back({"knn", knn_path, "baseline"});
    spec.config_keys = {"traj_feature", "traj_method", "traj_sentences", "l2", "seed"};
    spec.outputs = {W / "traj" / "trajectory.csv", W / "traj" / "node.txt"};
    spec.action = [&] {
      Registry reg = load_registry(ingest_registry);
      CorpusStore corpus = load_corpus(reg);
      FeatureMatrix feats = load_features(ingest_features, reg);
      MergeTable merges = load_merges(merges_path);
      SubwordVocab vocab = load_vocab(vocab_path);
      Seq2SeqModel nmt = load_nmt(nmt_stem, vocab);
      EncodedCorpus encoded = encode_corpus(corpus, merges, vocab);
      VectorTable vectors = make_vector_table(load_vectors(vectors_path));
      KnnTable knn = read_knn_table(knn_path);
      const Method method = parse_method(cfg.get("traj_method"));
      if (!vectors.count(method))
        throw ValidationError("traj needs " + cfg.get("traj_method") + " vectors; add it to 'methods' and run 'extract'");
      FeatureMatrix matrix = restrict_matrix(feats, evaluable_languages(feats, vectors, {method}));
      auto feature = matrix.feature_index(cfg.get("traj_feature"));
      if (!feature) throw ValidationError("traj: feature " + cfg.get("traj_feature") + " is not in the feature file");
      FeatureClassifier fc = train_feature_classifier(matrix, vectors, knn, *feature, method, false, cfg.real("l2"));
      const std::size_t node = select_node(fc.model, nmt.dims().hidden);
      const std::size_t offset = method == Method::MTCell ? 0 : fc.model.representation_dim - nmt.dims().hidden;

      std::vector<std::string> langs;
      for (std::size_t r = 0; r < matrix.num_languages(); ++r)
        if (matrix.get(r, *feature)) langs.push_back(matrix.languages()[r]);
      CellOptions opts;
      opts.max_sentences = static_cast<std::size_t>(cfg.integer("traj_sentences"));
      opts.seed = derive_seed(seed, kTrajStream);
      std::ostringstream csv;
      write_trajectory_csv(csv, export_trajectory(nmt, encoded, langs, node, opts));
      std::map<std::string, std::string> info = {
          {"feature", cfg.get("traj_feature")},
          {"method", cfg.get("traj_method")},
          {"node", std::to_string(node)},
          {"weight", format_double(fc.model.weights[offset + node])},
          {"hidden", std::to_string(nmt.dims().hidden)},
      };
      for (const auto& lang : langs) info["label." + lang] = std::to_string(*matrix.get(*matrix.language_index(lang), *feature));
      write_file(W / "traj" / "trajectory.csv", csv.str());
      write_file(W / "traj" / "node.txt", format_key_values(info));
      log(stage, "node " + std::to_string(node) + " for " + std::to_string(langs.size()) + " languages");
    };
  } else {
    throw ValidationError("unknown stage '" + stage + "'");
  }

  // Provenance: input hashes and relevant settings. Identical provenance and
  // intact outputs make the stage a no-op.
  std::map<std::string, std::string> manifest = {{"stage", stage}, {"tool_version", kToolVersion}};
  for (const auto& in : spec.inputs) {
    if (!fs::exists(in.path)) {
      std::string msg = "stage '" + stage + "' needs " + in.path.string();
      if (!in.producer.empty())
        msg += "; run '" + in.producer + "' first";
      else
        msg += "; check the path in the config";
      throw ValidationError(msg);
    }
    manifest["input." + in.name] = hex64(hash_file(in.path));
  }
  for (const auto& key : spec.config_keys) manifest["config." + key] = cfg.get(key);

  const fs::path manifest_path = W / stage / "MANIFEST";
  if (fs::exists(manifest_path)) {
    auto previous = parse_key_values(read_file(manifest_path), manifest_path.string());
    bool same = true;
    for (const auto& [k, v] : manifest)
      if (previous[k] != v) same = false;
    for (const auto& out : spec.outputs) {
      const std::string key = "output." + fs::relative(out, W).generic_string();
      if (!fs::exists(out) || previous[key] != hex64(hash_file(out))) same = false;
    }
    if (same) {
      log(stage, "inputs unchanged; skipped");
      return {stage, true};
    }
  }

  log(stage, "running");
  try {
    spec.action();
  } catch (const ValidationError&) {
    throw;
  } catch (const RuntimeFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeFailure("stage '" + stage + "' failed: " + e.what());
  }
  for (const auto& out : spec.outputs) {
    if (!fs::exists(out)) throw RuntimeFailure("stage '" + stage + "' did not produce " + out.string());
    manifest["output." + fs::relative(out, W).generic_string()] = hex64(hash_file(out));
  }
  write_file(manifest_path, format_key_values(manifest));
  return {stage, false};
}

}  // namespace langtyp
