#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace langtyp {

using TokenSeq = std::vector<std::string>;

struct LanguageRecord {
  std::string code;
  double lat = 0.0;
  double lon = 0.0;
  std::vector<std::string> lineage;  // root first

  bool operator==(const LanguageRecord&) const = default;
};

// Languages in file order. Codes are unique.
class Registry {
 public:
  void add(LanguageRecord record);

  const LanguageRecord* find(std::string_view code) const;
  const LanguageRecord& at(std::string_view code) const;
  bool contains(std::string_view code) const { return find(code) != nullptr; }

  const std::vector<LanguageRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<LanguageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

Registry parse_registry(std::istream& in, const std::string& source_name = "<registry>");
Registry load_registry(const std::filesystem::path& path);
void write_registry(std::ostream& out, const Registry& registry);

// NFC normalization followed by a split on Unicode whitespace. Case is kept.
TokenSeq preprocess(std::string_view text);

struct SentencePair {
  std::string lang;
  TokenSeq source;
  TokenSeq target;
};

// Sentence pairs grouped by language. Remembers the input line order so the
// store can be written back out unchanged.
class CorpusStore {
 public:
  void add(SentencePair pair);

  const std::vector<SentencePair>& pairs(std::string_view lang) const;
  std::vector<std::string> languages() const;  // sorted by code
  std::map<std::string, std::size_t> counts() const;
  std::size_t total() const { return order_.size(); }
  bool empty() const { return order_.empty(); }

  // Visits pairs in input order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [lang, idx] : order_) fn(groups_.at(lang)[idx]);
  }

 private:
  std::map<std::string, std::vector<SentencePair>, std::less<>> groups_;
  std::vector<std::pair<std::string, std::size_t>> order_;
};

inline constexpr std::string_view kPairSeparator = " ||| ";

CorpusStore parse_parallel(std::istream& in, const Registry& registry,
                           const std::string& source_name = "<corpus>");
CorpusStore load_parallel(const std::filesystem::path& path, const Registry& registry);
void write_parallel(std::ostream& out, const CorpusStore& corpus);

}  // namespace langtyp
