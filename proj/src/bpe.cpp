#include "langtyp/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <unicode/utf8.h>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

MergeTable::MergeTable(std::vector<SymbolPair> merges) {
  for (auto& p : merges) push_back(std::move(p));
}

void MergeTable::push_back(SymbolPair pair) {
  if (ranks_.count(pair)) throw ValidationError("duplicate merge: " + pair.first + " " + pair.second);
  ranks_.emplace(pair, static_cast<long>(merges_.size()));
  merges_.push_back(std::move(pair));
}

long MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(SymbolPair(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

std::vector<std::string> split_chars(std::string_view word) {
  std::vector<std::string> out;
  int32_t i = 0;
  const int32_t n = static_cast<int32_t>(word.size());
  while (i < n) {
    int32_t start = i;
    UChar32 c;
    U8_NEXT(word.data(), i, n, c);
    (void)c;
    out.emplace_back(word.substr(start, i - start));
  }
  return out;
}

std::map<std::string, long> word_frequencies(const CorpusStore& corpus) {
  std::map<std::string, long> counts;
  corpus.for_each([&](const SentencePair& p) {
    for (const auto& w : p.source) ++counts[w];
    for (const auto& w : p.target) ++counts[w];
  });
  return counts;
}

namespace {

// Incremental pair statistics over interned symbols. Candidates are kept in
// an ordered set so the best pair (highest count, then smallest strings) is
// always at the front.
class PairStats {
 public:
  using Pair = std::pair<int, int>;

  explicit PairStats(const std::vector<std::string>& symbols)
      : symbols_(symbols), order_(Compare{&symbols_}) {}

  void change(Pair p, long delta) {
    auto it = counts_.find(p);
    long old = it == counts_.end() ? 0 : it->second;
    if (old > 0) order_.erase(Key{old, p.first, p.second});
    long now = old + delta;
    if (now > 0) {
      counts_[p] = now;
      order_.insert(Key{now, p.first, p.second});
    } else if (it != counts_.end()) {
      counts_.erase(it);
    }
  }

  bool empty() const { return order_.empty(); }
  long best_count() const { return order_.begin()->count; }
  Pair best() const { return {order_.begin()->left, order_.begin()->right}; }

 private:
  struct Key {
    long count;
    int left;
    int right;
  };
  struct Compare {
    const std::vector<std::string>* symbols;
    bool operator()(const Key& a, const Key& b) const {
      if (a.count != b.count) return a.count > b.count;
      const auto& s = *symbols;
      if (a.left != b.left) {
        int c = s[a.left].compare(s[b.left]);
        if (c != 0) return c < 0;
      }
      if (a.right != b.right) return s[a.right] < s[b.right];
      return false;
    }
  };

  const std::vector<std::string>& symbols_;
  std::map<Pair, long> counts_;
  std::set<Key, Compare> order_;
};

}  // namespace

MergeTable learn_bpe(const std::map<std::string, long>& word_counts, int num_merges) {
  if (num_merges <= 0) throw ValidationError("learn_bpe: num_merges must be positive");
  if (word_counts.empty()) throw ValidationError("learn_bpe: empty corpus");

  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_ids;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = symbol_ids.emplace(s, static_cast<int>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };

  std::vector<std::vector<int>> words;
  std::vector<long> freqs;
  for (const auto& [word, count] : word_counts) {
    std::vector<int> seq;
    for (const auto& ch : split_chars(word)) seq.push_back(intern(ch));
    words.push_back(std::move(seq));
    freqs.push_back(count);
  }
  // PairStats compares through a reference to `symbols`, which keeps growing.
  PairStats stats(symbols);
  std::map<PairStats::Pair, std::set<std::size_t>> where;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& seq = words[w];
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      stats.change({seq[i], seq[i + 1]}, freqs[w]);
      where[{seq[i], seq[i + 1]}].insert(w);
    }
  }

  MergeTable table;
  while (static_cast<int>(table.size()) < num_merges && !stats.empty() && stats.best_count() >= 2) {
    auto [left, right] = stats.best();
    // A merge can rebuild a symbol by another route and recreate a pair that
    // was already learned; it is applied again but not listed twice.
    if (table.rank(symbols[left], symbols[right]) < 0) table.push_back({symbols[left], symbols[right]});
    int merged = intern(symbols[left] + symbols[right]);

    auto affected = where[{left, right}];
    for (std::size_t w : affected) {
      auto& seq = words[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        if (seq[i] == left && seq[i + 1] == right) present = true;
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) stats.change({seq[i], seq[i + 1]}, -freqs[w]);
      std::vector<int> next;
      next.reserve(seq.size());
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(next);
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        stats.change({seq[i], seq[i + 1]}, freqs[w]);
        where[{seq[i], seq[i + 1]}].insert(w);
      }
    }
    where.erase({left, right});
  }
  return table;
}

MergeTable learn_bpe(const CorpusStore& corpus, int num_merges) {
  if (corpus.empty()) throw ValidationError("learn_bpe: empty corpus");
  return learn_bpe(word_frequencies(corpus), num_merges);
}

std::vector<std::string> apply_bpe_word(std::string_view word, const MergeTable& merges) {
  std::vector<std::string> pieces = split_chars(word);
  while (pieces.size() > 1) {
    long best = -1;
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      long r = merges.rank(pieces[i], pieces[i + 1]);
      if (r >= 0 && (best < 0 || r < best)) best = r;
    }
    if (best < 0) break;
    const auto& [left, right] = merges.merges()[static_cast<std::size_t>(best)];
    std::vector<std::string> next;
    next.reserve(pieces.size());
    for (std::size_t i = 0; i < pieces.size();) {
      if (i + 1 < pieces.size() && pieces[i] == left && pieces[i + 1] == right) {
        next.push_back(left + right);
        i += 2;
      } else {
        next.push_back(std::move(pieces[i]));
        ++i;
      }
    }
    pieces = std::move(next);
  }
  if (!pieces.empty()) pieces.back() += kEndOfWord;
  return pieces;
}

std::vector<std::string> apply_bpe(const TokenSeq& tokens, const MergeTable& merges) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    auto pieces = apply_bpe_word(t, merges);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

TokenSeq decode_pieces(const std::vector<std::string>& pieces) {
  TokenSeq words;
  std::string current;
  for (const auto& p : pieces) {
    if (p.size() >= kEndOfWord.size() && p.compare(p.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      current.append(p, 0, p.size() - kEndOfWord.size());
      words.push_back(std::move(current));
      current.clear();
    } else {
      current += p;
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

const std::vector<std::string>& BpeCache::word(const std::string& w) {
  auto it = cache_.find(w);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(w, apply_bpe_word(w, merges_)).first->second;
}

std::vector<std::string> BpeCache::apply(const TokenSeq& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    const auto& pieces = word(t);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

std::string language_token(std::string_view code) { return "<" + std::string(code) + ">"; }

SubwordVocab::SubwordVocab() {
  for (const char* t : {"<pad>", "<s>", "</s>", "<unk>"}) add(t);
}

int SubwordVocab::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int SubwordVocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& SubwordVocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ValidationError("vocab id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

int SubwordVocab::lang_id(std::string_view code) const {
  auto it = ids_.find(language_token(code));
  if (it == ids_.end()) throw ValidationError("unknown language token: " + language_token(code));
  return it->second;
}

std::vector<int> SubwordVocab::encode(const std::vector<std::string>& pieces) const {
  std::vector<int> out;
  out.reserve(pieces.size());
  for (const auto& p : pieces) out.push_back(id(p));
  return out;
}

std::vector<std::string> SubwordVocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::uint64_t SubwordVocab::hash() const {
  std::uint64_t h = fnv1a("");
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

SubwordVocab build_vocab(const CorpusStore& corpus, const MergeTable& merges, const Registry& registry) {
  SubwordVocab vocab;
  for (const auto& rec : registry.records()) vocab.add(language_token(rec.code));
  std::set<std::string> subwords;
  BpeCache cache(merges);
  for (const auto& [word, _] : word_frequencies(corpus))
    for (const auto& piece : cache.word(word)) subwords.insert(piece);
  for (const auto& s : subwords) vocab.add(s);
  return vocab;
}

void save_merges(const std::filesystem::path& path, const MergeTable& merges) {
  std::ostringstream out;
  for (const auto& [l, r] : merges.merges()) out << l << ' ' << r << '\n';
  write_file(path, out.str());
}

MergeTable load_merges(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  MergeTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto parts = split(line, ' ');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
      throw ParseError(path.string(), lineno, "expected 'left right'");
    table.push_back({parts[0], parts[1]});
  }
  return table;
}

void save_vocab(const std::filesystem::path& path, const SubwordVocab& vocab) {
  std::ostringstream out;
  for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab.tokens()[i] << '\t' << i << '\n';
  write_file(path, out.str());
}

SubwordVocab load_vocab(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  SubwordVocab vocab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2) throw ParseError(path.string(), lineno, "expected 'token<TAB>id'");
    long long id = parse_int(parts[1]);
    if (id != vocab.add(parts[0])) throw ParseError(path.string(), lineno, "ids must be dense and in order");
  }
  return vocab;
}

}  // namespace langtyp
