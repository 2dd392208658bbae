#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "langtyp/corpus.hpp"

namespace langtyp {

// Appended to the last piece of every word so a subword sequence can be
// decoded back into words.
inline constexpr std::string_view kEndOfWord = "⟨/w⟩";

using SymbolPair = std::pair<std::string, std::string>;

// Learned merges; rank = position in learning order.
class MergeTable {
 public:
  MergeTable() = default;
  explicit MergeTable(std::vector<SymbolPair> merges);

  void push_back(SymbolPair pair);
  const std::vector<SymbolPair>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  // Rank of a pair, or -1 when not present.
  long rank(const std::string& left, const std::string& right) const;

  bool operator==(const MergeTable& o) const { return merges_ == o.merges_; }

 private:
  std::vector<SymbolPair> merges_;
  std::map<SymbolPair, long> ranks_;
};

// UTF-8 code points of a word.
std::vector<std::string> split_chars(std::string_view word);

// Word type -> frequency over source and target sides of every pair.
std::map<std::string, long> word_frequencies(const CorpusStore& corpus);

// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties broken by
// the lexicographically smallest (left, right)) until num_merges merges exist
// or no pair occurs at least twice.
MergeTable learn_bpe(const std::map<std::string, long>& word_counts, int num_merges);
MergeTable learn_bpe(const CorpusStore& corpus, int num_merges);

// Segments one word. The last piece carries kEndOfWord.
std::vector<std::string> apply_bpe_word(std::string_view word, const MergeTable& merges);
std::vector<std::string> apply_bpe(const TokenSeq& tokens, const MergeTable& merges);
// Inverse of apply_bpe: strips markers and rebuilds words.
TokenSeq decode_pieces(const std::vector<std::string>& pieces);

// Memoizes apply_bpe_word; not thread-safe.
class BpeCache {
 public:
  explicit BpeCache(const MergeTable& merges) : merges_(merges) {}
  const std::vector<std::string>& word(const std::string& w);
  std::vector<std::string> apply(const TokenSeq& tokens);

 private:
  const MergeTable& merges_;
  std::unordered_map<std::string, std::vector<std::string>> cache_;
};

std::string language_token(std::string_view code);

class SubwordVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  SubwordVocab();

  int add(const std::string& token);  // returns existing id when present
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  int lang_id(std::string_view code) const;  // throws for unknown languages
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& pieces) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  std::uint64_t hash() const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Reserved tokens, then one "<code>" token per registry language, then every
// subword apply_bpe produces over the corpus (sorted).
SubwordVocab build_vocab(const CorpusStore& corpus, const MergeTable& merges, const Registry& registry);

void save_merges(const std::filesystem::path& path, const MergeTable& merges);
MergeTable load_merges(const std::filesystem::path& path);
void save_vocab(const std::filesystem::path& path, const SubwordVocab& vocab);
SubwordVocab load_vocab(const std::filesystem::path& path);

}  // namespace langtyp
