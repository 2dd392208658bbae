#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "langtyp/bpe.hpp"
#include "langtyp/error.hpp"
#include "oracles.hpp"

using namespace langtyp;

namespace {

const std::string kEow(kEndOfWord);

std::map<std::string, long> random_counts(std::mt19937_64& rng, std::size_t types, const std::string& alphabet) {
  std::uniform_int_distribution<std::size_t> len(1, 7), ch(0, alphabet.size() - 1);
  std::uniform_int_distribution<long> freq(1, 9);
  std::map<std::string, long> counts;
  while (counts.size() < types) {
    std::string w;
    for (std::size_t n = len(rng); n > 0; --n) w += alphabet[ch(rng)];
    counts[w] = freq(rng);
  }
  return counts;
}

}  // namespace

TEST_CASE("learn_bpe picks the most frequent pair") {
  MergeTable t = learn_bpe(std::map<std::string, long>{{"abab", 1}, {"abc", 1}}, 1);
  REQUIRE(t.size() == 1);
  CHECK(t.merges()[0] == SymbolPair{"a", "b"});
  CHECK(apply_bpe_word("abab", t) == std::vector<std::string>{"ab", "ab" + kEow});
  CHECK(apply_bpe_word("abc", t) == std::vector<std::string>{"ab", "c" + kEow});
}

TEST_CASE("single-character words yield no merges") {
  CHECK(learn_bpe(std::map<std::string, long>{{"a", 5}, {"b", 3}, {"c", 9}}, 10).empty());
  CHECK_THROWS_AS(learn_bpe(std::map<std::string, long>{{"ab", 2}}, 0), ValidationError);
}

TEST_CASE("ties break toward the lexicographically smallest pair") {
  MergeTable t = learn_bpe(std::map<std::string, long>{{"xy", 2}, {"ab", 2}}, 1);
  CHECK(t.merges()[0] == SymbolPair{"a", "b"});
}

TEST_CASE("learn_bpe agrees with the recount oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    auto counts = random_counts(rng, 1 + trial * 3, trial % 2 ? "abc" : "abcdef");
    const int merges = 1 + trial % 20;
    CHECK(learn_bpe(counts, merges).merges() == oracle::learn_bpe(counts, merges));
  }
}

TEST_CASE("multi-byte characters are atomic") {
  CHECK(split_chars("h\xc3\xa9llo") == std::vector<std::string>{"h", "\xc3\xa9", "l", "l", "o"});
  MergeTable t = learn_bpe(std::map<std::string, long>{{"\xc3\xa9\xc3\xa9", 3}}, 5);
  CHECK(t.merges()[0] == SymbolPair{"\xc3\xa9", "\xc3\xa9"});
}

TEST_CASE("apply and decode are inverse") {
  std::mt19937_64 rng(5);
  auto counts = random_counts(rng, 50, "abcd");
  MergeTable t = learn_bpe(counts, 15);
  TokenSeq words;
  for (const auto& [w, _] : counts) words.push_back(w);
  words.push_back("dcbazz");  // unseen characters still round-trip
  CHECK(decode_pieces(apply_bpe(words, t)) == words);
  BpeCache cache(t);
  CHECK(cache.apply(words) == apply_bpe(words, t));
}

TEST_CASE("vocabulary layout") {
  std::istringstream reg("bbb\t0\t0\tX\naaa\t0\t0\tX\n");
  Registry r = parse_registry(reg);
  std::istringstream text("aaa\tab ab ||| ba\nbbb\tab ||| ab ba\n");
  CorpusStore c = parse_parallel(text, r);
  MergeTable t = learn_bpe(c, 2);
  SubwordVocab v = build_vocab(c, t, r);
  CHECK(v.token(SubwordVocab::kPad) == "<pad>");
  CHECK(v.lang_id("bbb") == 4);
  CHECK(v.lang_id("aaa") == 5);
  CHECK(v.token(5) == language_token("aaa"));
  CHECK_THROWS_AS(v.lang_id("ccc"), ValidationError);
  CHECK(v.id("never-seen") == SubwordVocab::kUnk);
  for (int i = 7; i < static_cast<int>(v.size()); ++i) CHECK(v.token(i - 1) < v.token(i));

  auto dir = std::filesystem::temp_directory_path() / "langtyp_bpe_test";
  save_merges(dir / "merges.txt", t);
  save_vocab(dir / "vocab.tsv", v);
  CHECK(load_merges(dir / "merges.txt") == t);
  SubwordVocab back = load_vocab(dir / "vocab.tsv");
  CHECK(back.tokens() == v.tokens());
  CHECK(back.hash() == v.hash());
  std::filesystem::remove_all(dir);
}
