#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "langtyp/lang_repr.hpp"
#include "langtyp/typology.hpp"

namespace langtyp {

// Language -> fold id. Built by a seeded shuffle followed by round-robin
// assignment, so fold sizes differ by at most one.
struct FoldAssignment {
  std::vector<std::string> languages;  // as given
  std::map<std::string, int> fold;
  int n_folds = 10;
  std::uint64_t seed = 0;

  int fold_of(std::string_view lang) const;
  bool contains(std::string_view lang) const { return fold.count(std::string(lang)) != 0; }
  std::vector<std::size_t> sizes() const;
  std::uint64_t hash() const;
};

FoldAssignment make_folds(std::vector<std::string> languages, int n_folds, std::uint64_t seed);

struct LogRegModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::string feature;
  double l2 = 1.0;
  // Inputs the model was trained on; needed to locate MTCell coordinates.
  std::optional<Method> method;
  std::size_t representation_dim = 0;
  bool aux = false;

  double probability(std::span<const double> x) const;
};

// Minimises mean logistic loss + l2 * |w|^2 / 2 (bias unpenalised) with
// Newton's method until the gradient norm is at most 1e-8. With a single
// class present the optimum is at infinity; the model then has zero weights
// and a bias of +-kSingleClassBias.
inline constexpr double kSingleClassBias = 20.0;
LogRegModel train_logreg(const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2,
                         std::string feature = {});

// Per-dimension z-scoring fitted on training rows only. Constant
// dimensions are only centred.
class Standardizer {
 public:
  void fit(const std::vector<std::vector<double>>& X);
  std::vector<double> transform(std::span<const double> x) const;
  std::vector<std::vector<double>> transform(const std::vector<std::vector<double>>& X) const;
  const std::vector<double>& means() const { return mean_; }
  const std::vector<double>& scales() const { return scale_; }

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

// Threshold rule shared by every classifier: above 0.5 -> 1, below -> 0,
// exactly 0.5 -> the training-fold majority label.
int decide(double probability, int majority);

// nullopt stands for "None" (no learned representation).
using EvalMethod = std::optional<Method>;
std::string eval_method_name(const EvalMethod& m);
EvalMethod parse_eval_method(std::string_view name);

using VectorTable = std::map<Method, std::map<std::string, std::vector<double>>>;
using KnnTable = std::map<std::string, std::vector<double>>;

VectorTable make_vector_table(const std::vector<LangVector>& vectors);
KnnTable make_knn_table(const FeatureMatrix& matrix, const DistanceContext& distances);

// Representation vector (empty for None), followed by the k-NN feature
// vector when aux is on.
std::vector<double> assemble_inputs(std::string_view lang, const EvalMethod& method, bool aux,
                                    const VectorTable& vectors, const KnnTable& knn);

struct InstancePrediction {
  std::string lang;
  std::size_t feature = 0;
  int gold = 0;
  int predicted = 0;
};

struct FeatureResult {
  std::size_t feature = 0;
  std::string name;
  Category category = Category::Syntax;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct ConditionResult {
  EvalMethod method;
  bool aux = false;
  std::uint64_t fold_hash = 0;
  std::vector<FeatureResult> features;       // matrix feature order
  std::vector<InstancePrediction> predictions;  // feature-major, fold order within

  bool has(Category c) const;
  // Macro average of per-feature accuracies (percent).
  double accuracy(Category c) const;
  const FeatureResult* feature(std::string_view name) const;
};

struct EvalReport {
  std::vector<ConditionResult> conditions;
  std::vector<std::string> excluded_features;  // fewer than 2 labeled languages

  const ConditionResult* find(const EvalMethod& method, bool aux) const;
  const ConditionResult& at(const EvalMethod& method, bool aux) const;
};

struct EvalOptions {
  double l2 = 1.0;
};

// Cross-validated per-feature prediction. The same folds are used for every
// (method, aux) condition. None -Aux is the majority-class rate over each
// feature's labeled languages; None +Aux thresholds the k-NN component of
// the feature at 0.5; every other condition trains a logistic regression
// per feature and fold.
EvalReport evaluate(const FeatureMatrix& matrix, const VectorTable& vectors, const KnnTable& knn,
                    const FoldAssignment& folds, const std::vector<EvalMethod>& methods,
                    const std::vector<bool>& aux_settings, const EvalOptions& options = {});

struct BootstrapResult {
  double observed_gain = 0.0;  // accuracy(B) - accuracy(A), percentage points
  double p_value = 1.0;        // share of resamples where B does not beat A
  std::size_t resamples = 0;
};

inline constexpr std::size_t kMinBootstrapResamples = 1000;

BootstrapResult paired_bootstrap(std::span<const int> preds_a, std::span<const int> preds_b,
                                 std::span<const int> gold, std::size_t n = 10000, std::uint64_t seed = 1);

// Predictions of two conditions over the same (language, feature) instances
// of one category, aligned by instance.
struct AlignedPredictions {
  std::vector<int> a;
  std::vector<int> b;
  std::vector<int> gold;
};
AlignedPredictions align_predictions(const ConditionResult& a, const ConditionResult& b, const FeatureMatrix& matrix,
                                     Category category);

struct GainRow {
  std::string feature;
  double before = 0.0;
  double after = 0.0;
  double gain = 0.0;
};

// Per-feature accuracy change from `a` to `b` within a category, largest
// first (ties by name), at most n rows.
std::vector<GainRow> top_gains(const ConditionResult& a, const ConditionResult& b, Category category,
                               std::size_t n = 5);

// Trains one classifier on every labeled language of a feature.
struct FeatureClassifier {
  LogRegModel model;
  Standardizer scaler;
  int majority = 1;
};
FeatureClassifier train_feature_classifier(const FeatureMatrix& matrix, const VectorTable& vectors,
                                           const KnnTable& knn, std::size_t feature, Method method, bool aux,
                                           double l2);

// Index (0..hidden-1) of the encoder cell dimension with the largest
// absolute classifier weight. The classifier must have MTCell or MTBoth
// inputs.
std::size_t select_node(const LogRegModel& model, std::size_t hidden);

struct TrajectoryPoint {
  std::string lang;
  std::size_t sentence = 0;  // position among the language's pairs in the corpus
  std::size_t step = 0;
  double value = 0.0;
};

// Cell value of `node` at every encoder step of each selected sentence.
std::vector<TrajectoryPoint> export_trajectory(const Seq2SeqModel& nmt, const EncodedCorpus& corpus,
                                               const std::vector<std::string>& languages, std::size_t node,
                                               const CellOptions& options = {});
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& points);

}  // namespace langtyp
