#include "langtyp/predict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

int FoldAssignment::fold_of(std::string_view lang) const {
  auto it = fold.find(std::string(lang));
  if (it == fold.end()) throw ValidationError("language not in fold assignment: " + std::string(lang));
  return it->second;
}

std::vector<std::size_t> FoldAssignment::sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(n_folds), 0);
  for (const auto& [_, f] : fold) ++out[static_cast<std::size_t>(f)];
  return out;
}

std::uint64_t FoldAssignment::hash() const {
  std::uint64_t h = fnv1a("folds");
  for (const auto& [lang, f] : fold) h = fnv1a(lang + "=" + std::to_string(f) + ";", h);
  return h;
}

FoldAssignment make_folds(std::vector<std::string> languages, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ValidationError("make_folds: need at least 2 folds");
  if (languages.size() < static_cast<std::size_t>(n_folds))
    throw ValidationError("make_folds: " + std::to_string(languages.size()) + " languages for " +
                          std::to_string(n_folds) + " folds");
  FoldAssignment a;
  a.languages = languages;
  a.n_folds = n_folds;
  a.seed = seed;
  std::mt19937_64 rng(seed);
  std::shuffle(languages.begin(), languages.end(), rng);
  for (std::size_t i = 0; i < languages.size(); ++i)
    if (!a.fold.emplace(languages[i], static_cast<int>(i % static_cast<std::size_t>(n_folds))).second)
      throw ValidationError("make_folds: duplicate language " + languages[i]);
  return a;
}

double LogRegModel::probability(std::span<const double> x) const {
  if (x.size() != weights.size())
    throw ValidationError("logreg: input has " + std::to_string(x.size()) + " dims, model expects " +
                          std::to_string(weights.size()));
  double z = bias;
  for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * x[i];
  return 1.0 / (1.0 + std::exp(-z));
}

namespace {

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

LogRegModel train_logreg(const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2,
                         std::string feature) {
  if (X.size() != y.size()) throw ValidationError("train_logreg: row and label counts differ");
  if (X.empty()) throw ValidationError("train_logreg: no training rows");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ValidationError("train_logreg: l2 must be a non-negative number");
  const std::size_t n = X.size(), d = X[0].size();
  Eigen::MatrixXd A(n, d + 1);
  Eigen::VectorXd t(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (X[i].size() != d) throw ValidationError("train_logreg: ragged input rows");
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(X[i][j])) throw ValidationError("train_logreg: non-finite input");
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = X[i][j];
    }
    A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
    if (y[i] != 0 && y[i] != 1) throw ValidationError("train_logreg: labels must be 0 or 1");
    t(static_cast<Eigen::Index>(i)) = y[i];
  }

  LogRegModel model;
  model.feature = std::move(feature);
  model.l2 = l2;
  model.weights.assign(d, 0.0);
  const double positives = t.sum();
  if (positives == 0.0 || positives == static_cast<double>(n)) {
    model.bias = positives == 0.0 ? -kSingleClassBias : kSingleClassBias;
    return model;
  }

  const Eigen::Index D = static_cast<Eigen::Index>(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(D + 1, l2);
  reg(D) = 0.0;
  auto objective = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd z = A * theta;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) loss += log1pexp(z(i)) - t(i) * z(i);
    return loss * inv_n + 0.5 * theta.head(D).squaredNorm() * l2;
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(D + 1);
  const double rate = positives * inv_n;
  theta(D) = std::log(rate / (1.0 - rate));
  double f = objective(theta);
  constexpr int kMaxIter = 200;
  constexpr double kTolerance = 1e-8;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    Eigen::VectorXd z = A * theta;
    Eigen::VectorXd p(z.size()), w(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      w(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = A.transpose() * (p - t) * inv_n + reg.cwiseProduct(theta);
    if (grad.norm() <= kTolerance) break;
    Eigen::MatrixXd H = A.transpose() * w.asDiagonal() * A * inv_n;
    H.diagonal() += reg;
    // Tiny ridge keeps the solve defined when the bias curvature vanishes.
    H.diagonal().array() += 1e-12;
    Eigen::VectorXd step = H.ldlt().solve(grad);
    double alpha = 1.0;
    const double slope = grad.dot(step);
    Eigen::VectorXd next = theta - step;
    double f_next = objective(next);
    while (f_next > f - 1e-4 * alpha * slope && alpha > 1e-10) {
      alpha *= 0.5;
      next = theta - alpha * step;
      f_next = objective(next);
    }
    if (!(f_next <= f)) break;
    theta = next;
    f = f_next;
  }
  for (std::size_t j = 0; j < d; ++j) model.weights[j] = theta(static_cast<Eigen::Index>(j));
  model.bias = theta(D);
  return model;
}

void Standardizer::fit(const std::vector<std::vector<double>>& X) {
  if (X.empty()) throw ValidationError("standardizer: no rows");
  const std::size_t d = X[0].size();
  mean_.assign(d, 0.0);
  scale_.assign(d, 1.0);
  for (const auto& row : X)
    for (std::size_t j = 0; j < d; ++j) mean_[j] += row[j];
  for (double& m : mean_) m /= static_cast<double>(X.size());
  std::vector<double> var(d, 0.0);
  for (const auto& row : X)
    for (std::size_t j = 0; j < d; ++j) var[j] += (row[j] - mean_[j]) * (row[j] - mean_[j]);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(X.size()));
    scale_[j] = sd > 1e-12 ? sd : 1.0;
  }
}

std::vector<double> Standardizer::transform(std::span<const double> x) const {
  if (x.size() != mean_.size()) throw ValidationError("standardizer: dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean_[j]) / scale_[j];
  return out;
}

std::vector<std::vector<double>> Standardizer::transform(const std::vector<std::vector<double>>& X) const {
  std::vector<std::vector<double>> out;
  out.reserve(X.size());
  for (const auto& row : X) out.push_back(transform(row));
  return out;
}

int decide(double probability, int majority) {
  if (probability > 0.5) return 1;
  if (probability < 0.5) return 0;
  return majority;
}

std::string eval_method_name(const EvalMethod& m) { return m ? std::string(method_name(*m)) : "None"; }

EvalMethod parse_eval_method(std::string_view name) {
  if (name == "None") return std::nullopt;
  return parse_method(name);
}

VectorTable make_vector_table(const std::vector<LangVector>& vectors) {
  VectorTable table;
  for (const auto& v : vectors) {
    if (!table[v.method].emplace(v.lang, v.values).second)
      throw ValidationError("duplicate " + std::string(method_name(v.method)) + " vector for " + v.lang);
  }
  return table;
}

KnnTable make_knn_table(const FeatureMatrix& matrix, const DistanceContext& distances) {
  KnnTable table;
  for (const auto& lang : matrix.languages()) table.emplace(lang, knn_feature_vector(lang, matrix, distances));
  return table;
}

std::vector<double> assemble_inputs(std::string_view lang, const EvalMethod& method, bool aux,
                                    const VectorTable& vectors, const KnnTable& knn) {
  std::vector<double> x;
  if (method) {
    auto mt = vectors.find(*method);
    const std::vector<double>* v = nullptr;
    if (mt != vectors.end()) {
      auto it = mt->second.find(std::string(lang));
      if (it != mt->second.end()) v = &it->second;
    }
    if (!v)
      throw ValidationError("missing " + std::string(method_name(*method)) + " representation for " + std::string(lang));
    x = *v;
  }
  if (aux) {
    auto it = knn.find(std::string(lang));
    if (it == knn.end()) throw ValidationError("missing k-NN feature vector for " + std::string(lang));
    x.insert(x.end(), it->second.begin(), it->second.end());
  }
  return x;
}

bool ConditionResult::has(Category c) const {
  return std::any_of(features.begin(), features.end(), [c](const FeatureResult& f) { return f.category == c; });
}

double ConditionResult::accuracy(Category c) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : features)
    if (f.category == c) {
      sum += f.accuracy();
      ++n;
    }
  if (n == 0) throw ValidationError("no evaluated features in category " + std::string(category_name(c)));
  return sum / static_cast<double>(n);
}

const FeatureResult* ConditionResult::feature(std::string_view name) const {
  for (const auto& f : features)
    if (f.name == name) return &f;
  return nullptr;
}

const ConditionResult* EvalReport::find(const EvalMethod& method, bool aux) const {
  for (const auto& c : conditions)
    if (c.method == method && c.aux == aux) return &c;
  return nullptr;
}

const ConditionResult& EvalReport::at(const EvalMethod& method, bool aux) const {
  const auto* c = find(method, aux);
  if (!c) throw ValidationError("report lacks condition " + eval_method_name(method) + (aux ? " +Aux" : " -Aux"));
  return *c;
}

namespace {

struct LabeledLanguage {
  std::string lang;
  int label;
  int fold;
};

ConditionResult evaluate_condition(const FeatureMatrix& matrix, const VectorTable& vectors, const KnnTable& knn,
                                   const FoldAssignment& folds, const EvalMethod& method, bool aux,
                                   const std::vector<std::size_t>& feature_ids, const EvalOptions& options) {
  ConditionResult result;
  result.method = method;
  result.aux = aux;
  result.fold_hash = folds.hash();

  // Inputs do not depend on the feature; assemble them once per language.
  std::map<std::string, std::vector<double>> inputs;
  if (method || aux)
    for (const auto& lang : matrix.languages())
      if (folds.contains(lang)) inputs.emplace(lang, assemble_inputs(lang, method, aux, vectors, knn));

  for (std::size_t f : feature_ids) {
    std::vector<LabeledLanguage> labeled;
    for (std::size_t r = 0; r < matrix.num_languages(); ++r) {
      const auto& lang = matrix.languages()[r];
      if (!folds.contains(lang)) continue;
      if (auto v = matrix.get(r, f)) labeled.push_back({lang, *v, folds.fold_of(lang)});
    }
    FeatureResult fr;
    fr.feature = f;
    fr.name = matrix.features()[f].name;
    fr.category = matrix.features()[f].category;

    auto record = [&](const LabeledLanguage& l, int predicted) {
      result.predictions.push_back({l.lang, f, l.label, predicted});
      ++fr.total;
      if (predicted == l.label) ++fr.correct;
    };

    if (!method && !aux) {
      std::size_t ones = 0;
      for (const auto& l : labeled) ones += static_cast<std::size_t>(l.label);
      const int majority = 2 * ones >= labeled.size() ? 1 : 0;
      for (const auto& l : labeled) record(l, majority);
      result.features.push_back(fr);
      continue;
    }

    for (int k = 0; k < folds.n_folds; ++k) {
      std::vector<const LabeledLanguage*> train, test;
      for (const auto& l : labeled) (l.fold == k ? test : train).push_back(&l);
      if (test.empty()) continue;
      std::size_t ones = 0;
      for (const auto* l : train) ones += static_cast<std::size_t>(l->label);
      const int majority = 2 * ones >= train.size() ? 1 : 0;
      if (train.empty()) {
        for (const auto* l : test) record(*l, majority);
        continue;
      }

      if (!method) {
        // None +Aux: the k-NN average of this feature, thresholded.
        for (const auto* l : test) record(*l, decide(knn.at(l->lang)[f], majority));
        continue;
      }

      std::vector<std::vector<double>> X;
      std::vector<int> y;
      for (const auto* l : train) {
        X.push_back(inputs.at(l->lang));
        y.push_back(l->label);
      }
      Standardizer scaler;
      scaler.fit(X);
      LogRegModel model = train_logreg(scaler.transform(X), y, options.l2, fr.name);
      for (const auto* l : test) record(*l, decide(model.probability(scaler.transform(inputs.at(l->lang))), majority));
    }
    result.features.push_back(fr);
  }
  return result;
}

}  // namespace

EvalReport evaluate(const FeatureMatrix& matrix, const VectorTable& vectors, const KnnTable& knn,
                    const FoldAssignment& folds, const std::vector<EvalMethod>& methods,
                    const std::vector<bool>& aux_settings, const EvalOptions& options) {
  EvalReport report;
  std::vector<std::size_t> feature_ids;
  for (std::size_t f = 0; f < matrix.num_features(); ++f) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < matrix.num_languages(); ++r)
      if (folds.contains(matrix.languages()[r]) && matrix.get(r, f)) ++n;
    if (n < 2)
      report.excluded_features.push_back(matrix.features()[f].name);
    else
      feature_ids.push_back(f);
  }
  for (const auto& method : methods)
    for (bool aux : aux_settings)
      report.conditions.push_back(evaluate_condition(matrix, vectors, knn, folds, method, aux, feature_ids, options));
  return report;
}

BootstrapResult paired_bootstrap(std::span<const int> preds_a, std::span<const int> preds_b,
                                 std::span<const int> gold, std::size_t n, std::uint64_t seed) {
  if (preds_a.size() != gold.size() || preds_b.size() != gold.size())
    throw ValidationError("paired_bootstrap: prediction and gold lengths differ");
  if (gold.empty()) throw ValidationError("paired_bootstrap: no instances");
  if (n < kMinBootstrapResamples)
    throw ValidationError("paired_bootstrap: need at least " + std::to_string(kMinBootstrapResamples) + " resamples");
  const std::size_t m = gold.size();
  // Per-instance difference in correctness, in {-1, 0, 1}.
  std::vector<int> diff(m);
  long observed = 0;
  for (std::size_t i = 0; i < m; ++i) {
    diff[i] = static_cast<int>(preds_b[i] == gold[i]) - static_cast<int>(preds_a[i] == gold[i]);
    observed += diff[i];
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  std::size_t failures = 0;
  for (std::size_t r = 0; r < n; ++r) {
    long s = 0;
    for (std::size_t i = 0; i < m; ++i) s += diff[pick(rng)];
    if (s <= 0) ++failures;
  }
  BootstrapResult res;
  res.observed_gain = 100.0 * static_cast<double>(observed) / static_cast<double>(m);
  res.p_value = static_cast<double>(failures) / static_cast<double>(n);
  res.resamples = n;
  return res;
}

AlignedPredictions align_predictions(const ConditionResult& a, const ConditionResult& b, const FeatureMatrix& matrix,
                                     Category category) {
  if (a.fold_hash != b.fold_hash) throw ValidationError("align_predictions: conditions used different folds");
  using Key = std::pair<std::size_t, std::string>;
  std::map<Key, std::pair<int, int>> left;
  for (const auto& p : a.predictions)
    if (matrix.features()[p.feature].category == category) left[{p.feature, p.lang}] = {p.predicted, p.gold};
  AlignedPredictions out;
  std::map<Key, int> right;
  for (const auto& p : b.predictions)
    if (matrix.features()[p.feature].category == category) right[{p.feature, p.lang}] = p.predicted;
  if (left.size() != right.size()) throw ValidationError("align_predictions: conditions cover different instances");
  for (const auto& [key, pa] : left) {
    auto it = right.find(key);
    if (it == right.end()) throw ValidationError("align_predictions: conditions cover different instances");
    out.a.push_back(pa.first);
    out.gold.push_back(pa.second);
    out.b.push_back(it->second);
  }
  return out;
}

std::vector<GainRow> top_gains(const ConditionResult& a, const ConditionResult& b, Category category, std::size_t n) {
  std::vector<GainRow> rows;
  for (const auto& fa : a.features) {
    if (fa.category != category) continue;
    const FeatureResult* fb = b.feature(fa.name);
    if (!fb) continue;
    rows.push_back({fa.name, fa.accuracy(), fb->accuracy(), fb->accuracy() - fa.accuracy()});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const GainRow& x, const GainRow& y) {
    if (x.gain != y.gain) return x.gain > y.gain;
    return x.feature < y.feature;
  });
  if (rows.size() > n) rows.resize(n);
  return rows;
}

FeatureClassifier train_feature_classifier(const FeatureMatrix& matrix, const VectorTable& vectors,
                                           const KnnTable& knn, std::size_t feature, Method method, bool aux,
                                           double l2) {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (std::size_t r = 0; r < matrix.num_languages(); ++r)
    if (auto v = matrix.get(r, feature)) {
      X.push_back(assemble_inputs(matrix.languages()[r], method, aux, vectors, knn));
      y.push_back(*v);
    }
  if (X.empty()) throw ValidationError("no labeled languages for " + matrix.features().at(feature).name);
  FeatureClassifier fc;
  fc.scaler.fit(X);
  fc.model = train_logreg(fc.scaler.transform(X), y, l2, matrix.features()[feature].name);
  fc.model.method = method;
  fc.model.aux = aux;
  fc.model.representation_dim = X[0].size() - (aux ? knn.begin()->second.size() : 0);
  fc.majority = majority_label(feature, matrix);
  return fc;
}

std::size_t select_node(const LogRegModel& model, std::size_t hidden) {
  if (!model.method || (*model.method != Method::MTCell && *model.method != Method::MTBoth))
    throw ValidationError("select_node: classifier was not trained on MTCell inputs");
  if (model.representation_dim < hidden || model.weights.size() < model.representation_dim)
    throw ValidationError("select_node: classifier inputs are smaller than the hidden size");
  const std::size_t offset = *model.method == Method::MTCell ? 0 : model.representation_dim - hidden;
  std::size_t best = 0;
  for (std::size_t j = 1; j < hidden; ++j)
    if (std::abs(model.weights[offset + j]) > std::abs(model.weights[offset + best])) best = j;
  return best;
}

std::vector<TrajectoryPoint> export_trajectory(const Seq2SeqModel& nmt, const EncodedCorpus& corpus,
                                               const std::vector<std::string>& languages, std::size_t node,
                                               const CellOptions& options) {
  if (node >= nmt.dims().hidden) throw ValidationError("export_trajectory: node index outside hidden size");
  std::vector<TrajectoryPoint> out;
  for (const auto& lang : languages) {
    auto sentences = select_sentences(corpus, lang, options);
    if (sentences.empty()) throw ValidationError("export_trajectory: no sentences for " + lang);
    std::map<const EncodedPair*, std::size_t> position;
    for (const auto& p : corpus)
      if (p.lang == lang) position.emplace(&p, position.size());
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      auto states = nmt.encode(sentences[s]->lang_id, sentences[s]->source);
      for (std::size_t t = 0; t < states.size(); ++t)
        out.push_back({lang, position.at(sentences[s]), t, states[t].c[node]});
    }
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& points) {
  out << "lang,sentence,step,value\n";
  for (const auto& p : points)
    out << p.lang << ',' << p.sentence << ',' << p.step << ',' << format_double(p.value) << '\n';
}

}  // namespace langtyp
