#include "langtyp/typology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Syntax: return "syntax";
    case Category::Phonology: return "phonology";
    case Category::Inventory: return "inventory";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  for (Category c : kAllCategories)
    if (category_name(c) == name) return c;
  throw ValidationError("unknown feature category: " + std::string(name));
}

FeatureSpec make_feature_spec(const std::string& name) {
  if (name.size() > 2 && name[1] == '_') {
    switch (name[0]) {
      case 'S': return {name, Category::Syntax};
      case 'P': return {name, Category::Phonology};
      case 'I': return {name, Category::Inventory};
      default: break;
    }
  }
  throw ValidationError("feature name lacks an S_/P_/I_ category prefix: " + name);
}

FeatureMatrix::FeatureMatrix(std::vector<std::string> languages, std::vector<FeatureSpec> features)
    : languages_(std::move(languages)),
      features_(std::move(features)),
      cells_(languages_.size() * features_.size(), kMissing) {
  for (std::size_t i = 0; i < languages_.size(); ++i)
    if (!lang_index_.emplace(languages_[i], i).second)
      throw ValidationError("feature matrix: duplicate language " + languages_[i]);
  for (std::size_t j = 0; j < features_.size(); ++j)
    if (!feature_index_.emplace(features_[j].name, j).second)
      throw ValidationError("feature matrix: duplicate feature " + features_[j].name);
}

std::optional<std::size_t> FeatureMatrix::language_index(std::string_view code) const {
  auto it = lang_index_.find(std::string(code));
  if (it == lang_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> FeatureMatrix::feature_index(std::string_view name) const {
  auto it = feature_index_.find(std::string(name));
  if (it == feature_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> FeatureMatrix::get(std::size_t lang, std::size_t feature) const {
  std::int8_t v = cells_.at(lang * features_.size() + feature);
  if (v == kMissing) return std::nullopt;
  return v;
}

void FeatureMatrix::set(std::size_t lang, std::size_t feature, std::optional<int> value) {
  if (value && *value != 0 && *value != 1) throw ValidationError("feature values must be 0 or 1");
  cells_.at(lang * features_.size() + feature) = value ? static_cast<std::int8_t>(*value) : kMissing;
}

std::size_t FeatureMatrix::count(Category c) const {
  return static_cast<std::size_t>(
      std::count_if(features_.begin(), features_.end(), [c](const FeatureSpec& f) { return f.category == c; }));
}

std::vector<std::size_t> FeatureMatrix::features_in(Category c) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < features_.size(); ++j)
    if (features_[j].category == c) out.push_back(j);
  return out;
}

std::size_t FeatureMatrix::labeled(std::size_t feature) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < languages_.size(); ++i)
    if (get(i, feature)) ++n;
  return n;
}

FeatureMatrix parse_features(std::istream& in, const Registry& registry, const std::string& source_name) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      header = split(line, ',');
      break;
    }
  }
  if (header.empty() || header[0] != "lang") throw ParseError(source_name, lineno, "header must start with 'lang'");
  std::vector<FeatureSpec> specs;
  for (std::size_t j = 1; j < header.size(); ++j) {
    try {
      specs.push_back(make_feature_spec(header[j]));
    } catch (const ValidationError& e) {
      throw ParseError(source_name, lineno, e.what());
    }
  }

  std::vector<std::string> langs;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != header.size())
      throw ParseError(source_name, lineno,
                       "expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cols.size()));
    if (!registry.contains(cols[0])) throw ParseError(source_name, lineno, "unknown language: " + cols[0]);
    langs.push_back(cols[0]);
    rows.push_back(std::move(cols));
    row_lines.push_back(lineno);
  }

  FeatureMatrix matrix(langs, specs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < specs.size(); ++j) {
      const std::string& cell = rows[i][j + 1];
      if (cell.empty()) continue;
      if (cell != "0" && cell != "1")
        throw ParseError(source_name, row_lines[i], "value '" + cell + "' for " + specs[j].name + " is not 0, 1 or empty");
      matrix.set(i, j, cell == "1" ? 1 : 0);
    }
  }
  return matrix;
}

FeatureMatrix load_features(const std::filesystem::path& path, const Registry& registry) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open features: " + path.string());
  return parse_features(in, registry, path.string());
}

void write_features(std::ostream& out, const FeatureMatrix& matrix) {
  out << "lang";
  for (const auto& f : matrix.features()) out << ',' << f.name;
  out << '\n';
  for (std::size_t i = 0; i < matrix.num_languages(); ++i) {
    out << matrix.languages()[i];
    for (std::size_t j = 0; j < matrix.num_features(); ++j) {
      out << ',';
      if (auto v = matrix.get(i, j)) out << *v;
    }
    out << '\n';
  }
}

double geodesic_distance(const LanguageRecord& a, const LanguageRecord& b) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double lat1 = a.lat * kDeg, lat2 = b.lat * kDeg;
  const double dlat = lat2 - lat1;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dlat / 2.0), s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double genetic_distance(const LanguageRecord& a, const LanguageRecord& b) {
  std::size_t shared = 0;
  while (shared < a.lineage.size() && shared < b.lineage.size() && a.lineage[shared] == b.lineage[shared]) ++shared;
  const double total = static_cast<double>(a.lineage.size() + b.lineage.size());
  if (total == 0.0) return 0.0;
  return 1.0 - 2.0 * static_cast<double>(shared) / total;
}

void KnnConfig::validate() const {
  if (k < 1) throw ValidationError("knn: k must be at least 1");
  if (geodesic_weight < 0.0 || genetic_weight < 0.0 || geodesic_weight + genetic_weight <= 0.0)
    throw ValidationError("knn: distance weights must be non-negative and not all zero");
}

DistanceContext::DistanceContext(const Registry& registry, KnnConfig config)
    : registry_(registry), config_(config), n_(registry.size()) {
  config_.validate();
  geo_.assign(n_ * n_, 0.0);
  gen_.assign(n_ * n_, 0.0);
  const auto& recs = registry.records();
  bool first = true;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double g = geodesic_distance(recs[i], recs[j]);
      const double p = genetic_distance(recs[i], recs[j]);
      geo_[i * n_ + j] = geo_[j * n_ + i] = g;
      gen_[i * n_ + j] = gen_[j * n_ + i] = p;
      if (first) {
        geo_min_ = geo_max_ = g;
        gen_min_ = gen_max_ = p;
        first = false;
      } else {
        geo_min_ = std::min(geo_min_, g);
        geo_max_ = std::max(geo_max_, g);
        gen_min_ = std::min(gen_min_, p);
        gen_max_ = std::max(gen_max_, p);
      }
    }
  }
}

std::size_t DistanceContext::index(std::string_view code) const {
  const LanguageRecord& rec = registry_.at(code);
  return static_cast<std::size_t>(&rec - registry_.records().data());
}

double DistanceContext::geodesic(std::string_view a, std::string_view b) const { return geo_[index(a) * n_ + index(b)]; }

double DistanceContext::genetic(std::string_view a, std::string_view b) const { return gen_[index(a) * n_ + index(b)]; }

double DistanceContext::combined(std::string_view a, std::string_view b) const {
  const std::size_t i = index(a), j = index(b);
  if (i == j) return 0.0;
  auto normalize = [](double v, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  };
  const double g = normalize(geo_[i * n_ + j], geo_min_, geo_max_);
  const double p = normalize(gen_[i * n_ + j], gen_min_, gen_max_);
  return (config_.geodesic_weight * g + config_.genetic_weight * p) /
         (config_.geodesic_weight + config_.genetic_weight);
}

void DistanceContext::write_dump(std::ostream& out) const {
  const auto& recs = registry_.records();
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j)
      out << recs[i].code << '\t' << recs[j].code << '\t' << format_double(geo_[i * n_ + j]) << '\t'
          << format_double(gen_[i * n_ + j]) << '\t' << format_double(combined(recs[i].code, recs[j].code)) << '\n';
}

std::vector<std::string> nearest_languages(std::string_view lang, const FeatureMatrix& matrix,
                                           const DistanceContext& distances) {
  const std::size_t k = distances.config().k;
  std::vector<std::pair<double, std::string>> candidates;
  for (const auto& other : matrix.languages())
    if (other != lang) candidates.emplace_back(distances.combined(lang, other), other);
  if (candidates.size() < k)
    throw ValidationError("knn: " + std::to_string(candidates.size()) + " candidate languages for " +
                          std::string(lang) + ", need " + std::to_string(k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(candidates[i].second);
  return out;
}

std::vector<double> knn_feature_vector(std::string_view lang, const FeatureMatrix& matrix,
                                       const DistanceContext& distances) {
  const auto neighbours = nearest_languages(lang, matrix, distances);
  std::vector<std::size_t> rows;
  for (const auto& n : neighbours) rows.push_back(*matrix.language_index(n));
  const auto self = matrix.language_index(lang);

  std::vector<double> out(matrix.num_features());
  for (std::size_t f = 0; f < matrix.num_features(); ++f) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r : rows)
      if (auto v = matrix.get(r, f)) {
        sum += *v;
        ++n;
      }
    if (n == 0) {
      for (std::size_t r = 0; r < matrix.num_languages(); ++r) {
        if (self && r == *self) continue;
        if (auto v = matrix.get(r, f)) {
          sum += *v;
          ++n;
        }
      }
      out[f] = n == 0 ? 0.5 : sum / static_cast<double>(n);
    } else {
      out[f] = sum / static_cast<double>(n);
    }
  }
  return out;
}

namespace {
std::pair<std::size_t, std::size_t> label_counts(std::size_t feature, const FeatureMatrix& matrix,
                                                 const std::vector<std::string>& subset) {
  std::size_t ones = 0, zeros = 0;
  auto visit = [&](std::size_t row) {
    if (auto v = matrix.get(row, feature)) (*v == 1 ? ones : zeros)++;
  };
  if (subset.empty()) {
    for (std::size_t r = 0; r < matrix.num_languages(); ++r) visit(r);
  } else {
    for (const auto& code : subset) {
      auto r = matrix.language_index(code);
      if (!r) throw ValidationError("majority_rate: language not in matrix: " + code);
      visit(*r);
    }
  }
  if (ones + zeros == 0)
    throw ValidationError("majority_rate: no labeled languages for " + matrix.features().at(feature).name);
  return {ones, zeros};
}
}  // namespace

double majority_rate(std::size_t feature, const FeatureMatrix& matrix, const std::vector<std::string>& subset) {
  auto [ones, zeros] = label_counts(feature, matrix, subset);
  return static_cast<double>(std::max(ones, zeros)) / static_cast<double>(ones + zeros);
}

int majority_label(std::size_t feature, const FeatureMatrix& matrix, const std::vector<std::string>& subset) {
  auto [ones, zeros] = label_counts(feature, matrix, subset);
  return ones >= zeros ? 1 : 0;
}

}  // namespace langtyp
