#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "langtyp/corpus.hpp"

namespace langtyp {

enum class Category { Syntax, Phonology, Inventory };

inline constexpr Category kAllCategories[] = {Category::Syntax, Category::Phonology, Category::Inventory};

std::string_view category_name(Category c);  // "syntax", "phonology", "inventory"
Category parse_category(std::string_view name);

struct FeatureSpec {
  std::string name;  // "S_", "P_" or "I_" prefix
  Category category;
};

// Derives the category from the name prefix; throws on an unknown prefix.
FeatureSpec make_feature_spec(const std::string& name);

// Languages x binary features; cells are 0, 1 or missing.
class FeatureMatrix {
 public:
  static constexpr std::int8_t kMissing = -1;

  FeatureMatrix() = default;
  FeatureMatrix(std::vector<std::string> languages, std::vector<FeatureSpec> features);

  const std::vector<std::string>& languages() const { return languages_; }
  const std::vector<FeatureSpec>& features() const { return features_; }
  std::size_t num_languages() const { return languages_.size(); }
  std::size_t num_features() const { return features_.size(); }

  std::optional<std::size_t> language_index(std::string_view code) const;
  std::optional<std::size_t> feature_index(std::string_view name) const;

  std::optional<int> get(std::size_t lang, std::size_t feature) const;
  void set(std::size_t lang, std::size_t feature, std::optional<int> value);

  std::size_t count(Category c) const;
  std::vector<std::size_t> features_in(Category c) const;
  // Number of non-missing cells in a feature column.
  std::size_t labeled(std::size_t feature) const;

 private:
  std::vector<std::string> languages_;
  std::vector<FeatureSpec> features_;
  std::unordered_map<std::string, std::size_t> lang_index_;
  std::unordered_map<std::string, std::size_t> feature_index_;
  std::vector<std::int8_t> cells_;
};

// CSV with header "lang,<feature names...>" and cells "0", "1" or empty.
FeatureMatrix parse_features(std::istream& in, const Registry& registry, const std::string& source_name = "<features>");
FeatureMatrix load_features(const std::filesystem::path& path, const Registry& registry);
void write_features(std::ostream& out, const FeatureMatrix& matrix);

inline constexpr double kEarthRadiusKm = 6371.0;

// Great-circle distance in kilometres (haversine).
double geodesic_distance(const LanguageRecord& a, const LanguageRecord& b);
// 1 - 2 * |shared lineage prefix| / (|a| + |b|), in [0, 1].
double genetic_distance(const LanguageRecord& a, const LanguageRecord& b);

struct KnnConfig {
  std::size_t k = 3;
  double geodesic_weight = 1.0;
  double genetic_weight = 1.0;

  void validate() const;
};

// Both distances min-max normalised over all registry pairs and combined
// as a weighted mean. A component whose pairs are all equal contributes 0.
class DistanceContext {
 public:
  DistanceContext(const Registry& registry, KnnConfig config);

  double geodesic(std::string_view a, std::string_view b) const;
  double genetic(std::string_view a, std::string_view b) const;
  double combined(std::string_view a, std::string_view b) const;

  const Registry& registry() const { return registry_; }
  const KnnConfig& config() const { return config_; }

  // TSV rows "langA langB geodesic genetic combined" for every pair a < b.
  void write_dump(std::ostream& out) const;

 private:
  std::size_t index(std::string_view code) const;

  const Registry& registry_;
  KnnConfig config_;
  std::size_t n_ = 0;
  std::vector<double> geo_;
  std::vector<double> gen_;
  double geo_min_ = 0, geo_max_ = 0, gen_min_ = 0, gen_max_ = 0;
};

// The k languages nearest to `lang` among the matrix languages (itself
// excluded), ordered by combined distance then code.
std::vector<std::string> nearest_languages(std::string_view lang, const FeatureMatrix& matrix,
                                           const DistanceContext& distances);

// Per feature, the mean of the neighbours' non-missing values. When all
// neighbours lack a feature, the mean over every other language is used
// (0.5 if nobody has it).
std::vector<double> knn_feature_vector(std::string_view lang, const FeatureMatrix& matrix,
                                       const DistanceContext& distances);

// Majority-class frequency of a feature within a subset of languages (all
// languages when the subset is empty). Ties favour 1.
double majority_rate(std::size_t feature, const FeatureMatrix& matrix, const std::vector<std::string>& subset = {});
int majority_label(std::size_t feature, const FeatureMatrix& matrix, const std::vector<std::string>& subset = {});

}  // namespace langtyp
