#include "langtyp/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

void Registry::add(LanguageRecord record) {
  if (record.code.empty()) throw ValidationError("registry: empty language code");
  if (record.lineage.empty()) throw ValidationError("registry: empty lineage for " + record.code);
  if (!(record.lat >= -90.0 && record.lat <= 90.0))
    throw ValidationError("registry: latitude out of range for " + record.code);
  if (!(record.lon >= -180.0 && record.lon <= 180.0))
    throw ValidationError("registry: longitude out of range for " + record.code);
  if (index_.count(record.code)) throw ValidationError("registry: duplicate code " + record.code);
  index_.emplace(record.code, records_.size());
  records_.push_back(std::move(record));
}

const LanguageRecord* Registry::find(std::string_view code) const {
  auto it = index_.find(std::string(code));
  return it == index_.end() ? nullptr : &records_[it->second];
}

const LanguageRecord& Registry::at(std::string_view code) const {
  const auto* r = find(code);
  if (!r) throw ValidationError("unknown language: " + std::string(code));
  return *r;
}

Registry parse_registry(std::istream& in, const std::string& source_name) {
  Registry registry;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() != 4) throw ParseError(source_name, lineno, "expected 4 tab-separated columns");
    LanguageRecord rec;
    rec.code = std::string(trim(cols[0]));
    try {
      rec.lat = parse_double(cols[1]);
      rec.lon = parse_double(cols[2]);
    } catch (const ValidationError& e) {
      throw ParseError(source_name, lineno, e.what());
    }
    for (auto& node : split(cols[3], '|')) {
      auto t = trim(node);
      if (t.empty()) throw ParseError(source_name, lineno, "empty lineage node");
      rec.lineage.emplace_back(t);
    }
    try {
      registry.add(std::move(rec));
    } catch (const ValidationError& e) {
      throw ParseError(source_name, lineno, e.what());
    }
  }
  return registry;
}

Registry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open registry: " + path.string());
  return parse_registry(in, path.string());
}

void write_registry(std::ostream& out, const Registry& registry) {
  out << "# code\tlat\tlon\tlineage\n";
  for (const auto& r : registry.records())
    out << r.code << '\t' << format_double(r.lat) << '\t' << format_double(r.lon) << '\t'
        << join(r.lineage, "|") << '\n';
}

TokenSeq preprocess(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw RuntimeFailure("ICU NFC normalizer unavailable");
  icu::UnicodeString normalized =
      nfc->normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), text.size())), status);
  if (U_FAILURE(status)) throw RuntimeFailure("NFC normalization failed");
  std::string utf8;
  normalized.toUTF8String(utf8);

  TokenSeq tokens;
  std::string current;
  int32_t i = 0;
  const int32_t n = static_cast<int32_t>(utf8.size());
  while (i < n) {
    int32_t start = i;
    UChar32 c;
    U8_NEXT(utf8.data(), i, n, c);
    if (c >= 0 && u_isUWhiteSpace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.append(utf8, start, i - start);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void CorpusStore::add(SentencePair pair) {
  auto& group = groups_[pair.lang];
  order_.emplace_back(pair.lang, group.size());
  group.push_back(std::move(pair));
}

const std::vector<SentencePair>& CorpusStore::pairs(std::string_view lang) const {
  static const std::vector<SentencePair> empty;
  auto it = groups_.find(lang);
  return it == groups_.end() ? empty : it->second;
}

std::vector<std::string> CorpusStore::languages() const {
  std::vector<std::string> out;
  for (const auto& [lang, _] : groups_) out.push_back(lang);
  return out;
}

std::map<std::string, std::size_t> CorpusStore::counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [lang, group] : groups_) out[lang] = group.size();
  return out;
}

CorpusStore parse_parallel(std::istream& in, const Registry& registry, const std::string& source_name) {
  CorpusStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source_name, lineno, "missing language column");
    std::string lang = line.substr(0, tab);
    if (!registry.contains(lang)) throw ParseError(source_name, lineno, "unknown language: " + lang);
    std::string_view rest(line);
    rest.remove_prefix(tab + 1);
    auto sep = rest.find(kPairSeparator);
    if (sep == std::string_view::npos) throw ParseError(source_name, lineno, "missing ' ||| ' separator");
    SentencePair pair;
    pair.lang = std::move(lang);
    pair.source = preprocess(rest.substr(0, sep));
    pair.target = preprocess(rest.substr(sep + kPairSeparator.size()));
    if (pair.source.empty()) throw ParseError(source_name, lineno, "empty source side");
    if (pair.target.empty()) throw ParseError(source_name, lineno, "empty target side");
    store.add(std::move(pair));
  }
  return store;
}

CorpusStore load_parallel(const std::filesystem::path& path, const Registry& registry) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus: " + path.string());
  return parse_parallel(in, registry, path.string());
}

void write_parallel(std::ostream& out, const CorpusStore& corpus) {
  corpus.for_each([&](const SentencePair& p) {
    out << p.lang << '\t' << join(p.source, " ") << kPairSeparator << join(p.target, " ") << '\n';
  });
}

}  // namespace langtyp
