#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "langtyp/corpus.hpp"
#include "langtyp/typology.hpp"

namespace langtyp {

inline constexpr const char* kObjectBeforeVerb = "S_OBJECT_BEFORE_VERB";
inline constexpr const char* kAdpositionAfterNoun = "S_ADPOSITION_AFTER_NOUN";
inline constexpr const char* kNumeralBeforeNoun = "S_NUMERAL_BEFORE_NOUN";

struct SynthGrammar {
  bool obj_before_verb = false;
  bool adposition_after_noun = false;
  bool numeral_before_noun = false;
  std::uint64_t lexicon_seed = 1;
  std::size_t lexicon_size = 20;
};

enum class WordClass { Noun, Verb, Numeral, Adposition };

// Concept inventory split by word class; identical for every language with
// the same lexicon size, so concepts align across languages.
struct ConceptCounts {
  std::size_t nouns = 0, verbs = 0, numerals = 0, adpositions = 0;
  std::size_t total() const { return nouns + verbs + numerals + adpositions; }
  std::size_t of(WordClass c) const;
};
ConceptCounts concept_counts(std::size_t lexicon_size);

struct WordInfo {
  WordClass cls;
  std::size_t concept_id;
};

struct Lexicon {
  // words[class][concept]
  std::vector<std::vector<std::string>> words;
  std::unordered_map<std::string, WordInfo> entries;

  const std::string& word(WordClass c, std::size_t concept_id) const;
  std::optional<WordInfo> lookup(const std::string& w) const;
};

// Source words are strings of open CV syllables drawn from one shared
// inventory. Target words end in a consonant, so they never collide with
// source words.
Lexicon make_lexicon(std::size_t lexicon_size, std::uint64_t seed);
const Lexicon& target_lexicon(std::size_t lexicon_size);

struct SynthSentence {
  TokenSeq source;
  TokenSeq target;
};

// Clause: S V C, or C V S when the object precedes the verb, where the
// complement C holds the object and an adpositional phrase on either side
// of it. One numeral quantifies the object or the adpositional noun. The
// three nouns of a clause are distinct concepts. The target side always
// reads S V (Num) O Adp (Num) N.
class SynthLanguage {
 public:
  SynthLanguage(SynthGrammar grammar, Lexicon lexicon, std::uint64_t stream_seed);

  SynthSentence next();
  const SynthGrammar& grammar() const { return grammar_; }
  const Lexicon& lexicon() const { return lexicon_; }

 private:
  SynthGrammar grammar_;
  Lexicon lexicon_;
  std::mt19937_64 rng_;
};

SynthLanguage generate_language(const SynthGrammar& grammar, std::uint64_t stream_seed);

// Word-order facts read off a source clause without consulting the flags:
// roles come from aligning source concepts with the fixed-order target.
// Optional parts that are absent leave the corresponding field empty.
struct ParsedClause {
  bool obj_before_verb = false;
  std::optional<bool> numeral_before_noun;
  std::optional<bool> adposition_after_noun;
};
ParsedClause parse_clause(const SynthSentence& sentence, const Lexicon& lexicon);
bool clause_matches(const ParsedClause& parsed, const SynthGrammar& grammar);

struct SynthSuite {
  Registry registry;
  CorpusStore corpus;
  FeatureMatrix gold;
  std::vector<SynthGrammar> grammars;  // registry order
  std::vector<Lexicon> lexicons;
  std::uint64_t seed = 0;
};

// Language i gets flag combination i mod 8. Coordinates and lineage are
// drawn independently of the flags.
SynthSuite generate_suite(std::size_t n_langs, std::size_t sentences_per_lang, std::uint64_t seed,
                          std::size_t lexicon_size = 20);

// Writes registry.tsv, corpus.txt and features.csv.
void write_suite(const std::filesystem::path& dir, const SynthSuite& suite);

}  // namespace langtyp
