#include "langtyp/synth.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <sstream>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

namespace {

constexpr std::array<char, 12> kConsonants = {'p', 't', 'k', 'b', 'd', 'g', 'm', 'n', 's', 'l', 'r', 'w'};
constexpr std::array<char, 5> kVowels = {'a', 'e', 'i', 'o', 'u'};
constexpr std::array<WordClass, 4> kClasses = {WordClass::Noun, WordClass::Verb, WordClass::Numeral,
                                               WordClass::Adposition};

std::string syllable(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> c(0, kConsonants.size() - 1), v(0, kVowels.size() - 1);
  return {kConsonants[c(rng)], kVowels[v(rng)]};
}

std::size_t index_of(WordClass c) { return static_cast<std::size_t>(c); }

std::size_t concept_counts_total(const Lexicon& lex) {
  std::size_t n = 0;
  for (const auto& ws : lex.words) n += ws.size();
  return n;
}

}  // namespace

std::size_t ConceptCounts::of(WordClass c) const {
  switch (c) {
    case WordClass::Noun: return nouns;
    case WordClass::Verb: return verbs;
    case WordClass::Numeral: return numerals;
    case WordClass::Adposition: return adpositions;
  }
  return 0;
}

ConceptCounts concept_counts(std::size_t lexicon_size) {
  if (lexicon_size < 10) throw ValidationError("lexicon size must be at least 10, got " + std::to_string(lexicon_size));
  ConceptCounts c;
  c.adpositions = std::max<std::size_t>(2, lexicon_size / 10);
  c.numerals = std::max<std::size_t>(2, lexicon_size / 10);
  c.verbs = std::max<std::size_t>(2, lexicon_size / 4);
  c.nouns = lexicon_size - c.adpositions - c.numerals - c.verbs;
  return c;
}

const std::string& Lexicon::word(WordClass c, std::size_t concept_id) const {
  return words.at(index_of(c)).at(concept_id);
}

std::optional<WordInfo> Lexicon::lookup(const std::string& w) const {
  auto it = entries.find(w);
  if (it == entries.end()) return std::nullopt;
  return it->second;
}

Lexicon make_lexicon(std::size_t lexicon_size, std::uint64_t seed) {
  const ConceptCounts counts = concept_counts(lexicon_size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> length(2, 3);
  Lexicon lex;
  lex.words.resize(kClasses.size());
  for (WordClass c : kClasses)
    for (std::size_t i = 0; i < counts.of(c); ++i) {
      std::string w;
      do {
        w.clear();
        for (int s = length(rng); s > 0; --s) w += syllable(rng);
      } while (lex.entries.count(w));
      lex.entries.emplace(w, WordInfo{c, i});
      lex.words[index_of(c)].push_back(w);
    }
  return lex;
}

const Lexicon& target_lexicon(std::size_t lexicon_size) {
  static std::map<std::size_t, Lexicon> cache;
  auto it = cache.find(lexicon_size);
  if (it != cache.end()) return it->second;
  Lexicon lex = make_lexicon(lexicon_size, 0x7461726765740000ULL);
  Lexicon out;
  out.words.resize(kClasses.size());
  // Closing consonant keeps these out of every source lexicon.
  std::mt19937_64 rng(0x7461726765740001ULL);
  std::uniform_int_distribution<std::size_t> pick(0, kConsonants.size() - 1);
  for (WordClass c : kClasses)
    for (const auto& w : lex.words[index_of(c)]) {
      std::string t;
      do t = w + kConsonants[pick(rng)];
      while (out.entries.count(t));
      out.entries.emplace(t, WordInfo{c, out.words[index_of(c)].size()});
      out.words[index_of(c)].push_back(t);
    }
  return cache.emplace(lexicon_size, std::move(out)).first->second;
}

SynthLanguage::SynthLanguage(SynthGrammar grammar, Lexicon lexicon, std::uint64_t stream_seed)
    : grammar_(grammar), lexicon_(std::move(lexicon)), rng_(stream_seed) {}

SynthSentence SynthLanguage::next() {
  const ConceptCounts counts = concept_counts(grammar_.lexicon_size);
  const Lexicon& en = target_lexicon(grammar_.lexicon_size);
  auto draw = [&](WordClass c) { return std::uniform_int_distribution<std::size_t>(0, counts.of(c) - 1)(rng_); };
  std::bernoulli_distribution coin(0.5);

  const std::size_t subj = draw(WordClass::Noun), verb = draw(WordClass::Verb);
  std::size_t obj;
  do obj = draw(WordClass::Noun);
  while (obj == subj);
  const std::size_t num = draw(WordClass::Numeral), adp = draw(WordClass::Adposition);
  std::size_t pp_noun;
  do pp_noun = draw(WordClass::Noun);
  while (pp_noun == subj || pp_noun == obj);

  // The numeral quantifies the object or the adpositional noun, and the
  // adpositional phrase may precede or follow the object. Two nouns can
  // then stand next to each other, and only the language's numeral and
  // adposition orders tell which word belongs to which.
  const bool num_on_pp = coin(rng_);
  const bool pp_first = coin(rng_);

  auto src = [&](WordClass c, std::size_t i) { return lexicon_.word(c, i); };
  auto tgt = [&](WordClass c, std::size_t i) { return en.word(c, i); };
  auto noun_phrase = [&](std::size_t noun, bool with_num) {
    TokenSeq np;
    if (with_num && grammar_.numeral_before_noun) np.push_back(src(WordClass::Numeral, num));
    np.push_back(src(WordClass::Noun, noun));
    if (with_num && !grammar_.numeral_before_noun) np.push_back(src(WordClass::Numeral, num));
    return np;
  };

  TokenSeq complement = noun_phrase(obj, !num_on_pp);
  TokenSeq pp = noun_phrase(pp_noun, num_on_pp);
  if (grammar_.adposition_after_noun)
    pp.push_back(src(WordClass::Adposition, adp));
  else
    pp.insert(pp.begin(), src(WordClass::Adposition, adp));
  complement.insert(pp_first ? complement.begin() : complement.end(), pp.begin(), pp.end());

  SynthSentence s;
  if (grammar_.obj_before_verb) {
    s.source = complement;
    s.source.push_back(src(WordClass::Verb, verb));
    s.source.push_back(src(WordClass::Noun, subj));
  } else {
    s.source.push_back(src(WordClass::Noun, subj));
    s.source.push_back(src(WordClass::Verb, verb));
    s.source.insert(s.source.end(), complement.begin(), complement.end());
  }

  s.target.push_back(tgt(WordClass::Noun, subj));
  s.target.push_back(tgt(WordClass::Verb, verb));
  if (!num_on_pp) s.target.push_back(tgt(WordClass::Numeral, num));
  s.target.push_back(tgt(WordClass::Noun, obj));
  s.target.push_back(tgt(WordClass::Adposition, adp));
  if (num_on_pp) s.target.push_back(tgt(WordClass::Numeral, num));
  s.target.push_back(tgt(WordClass::Noun, pp_noun));
  return s;
}

SynthLanguage generate_language(const SynthGrammar& grammar, std::uint64_t stream_seed) {
  return SynthLanguage(grammar, make_lexicon(grammar.lexicon_size, grammar.lexicon_seed), stream_seed);
}

ParsedClause parse_clause(const SynthSentence& sentence, const Lexicon& lexicon) {
  const Lexicon& en = target_lexicon(concept_counts_total(lexicon));
  auto fail = [&](const std::string& why) {
    return ValidationError("unparseable clause '" + join(sentence.source, " ") + "': " + why);
  };

  // Target order is S V (Num) O (Adp (Num) N); the numeral precedes the
  // noun it quantifies.
  std::vector<WordInfo> t;
  for (const auto& w : sentence.target) {
    auto info = en.lookup(w);
    if (!info) throw fail("target word '" + w + "' is not in the target lexicon");
    t.push_back(*info);
  }
  if (t.size() < 3 || t[0].cls != WordClass::Noun || t[1].cls != WordClass::Verb) throw fail("bad target");
  std::size_t k = 2;
  std::optional<std::size_t> num, num_noun;
  auto noun = [&]() {
    if (k < t.size() && t[k].cls == WordClass::Numeral) {
      if (num) throw fail("two numerals");
      num = t[k++].concept_id;
      if (k >= t.size() || t[k].cls != WordClass::Noun) throw fail("numeral without a noun");
      num_noun = t[k].concept_id;
    }
    if (k >= t.size() || t[k].cls != WordClass::Noun) throw fail("missing noun");
    return t[k++].concept_id;
  };
  const std::size_t obj = noun();
  std::optional<std::size_t> adp, pp;
  if (k < t.size()) {
    if (t[k].cls != WordClass::Adposition) throw fail("bad target adpositional phrase");
    adp = t[k++].concept_id;
    pp = noun();
  }
  if (k != t.size()) throw fail("trailing target words");

  auto position = [&](WordClass c, std::size_t concept_id) {
    std::optional<std::size_t> at;
    for (std::size_t i = 0; i < sentence.source.size(); ++i) {
      auto info = lexicon.lookup(sentence.source[i]);
      if (!info) throw fail("word '" + sentence.source[i] + "' is not in the lexicon");
      if (info->cls == c && info->concept_id == concept_id) {
        if (at) throw fail("concept appears twice");
        at = i;
      }
    }
    if (!at) throw fail("concept missing from source");
    return *at;
  };
  auto adjacent = [](std::size_t a, std::size_t b) { return a + 1 == b || b + 1 == a; };

  ParsedClause p;
  p.obj_before_verb = position(WordClass::Noun, obj) < position(WordClass::Verb, t[1].concept_id);
  if (num) {
    const std::size_t num_at = position(WordClass::Numeral, *num), noun_at = position(WordClass::Noun, *num_noun);
    if (!adjacent(num_at, noun_at)) throw fail("numeral not adjacent to its noun");
    p.numeral_before_noun = num_at < noun_at;
  }
  if (adp) {
    // A numeral on the adpositional noun may sit between the two.
    const std::size_t adp_at = position(WordClass::Adposition, *adp), pp_at = position(WordClass::Noun, *pp);
    const std::size_t gap = adp_at > pp_at ? adp_at - pp_at : pp_at - adp_at;
    if (gap != 1 && !(gap == 2 && num_noun == pp)) throw fail("adposition not next to its noun");
    p.adposition_after_noun = pp_at < adp_at;
  }
  if (sentence.source.size() != sentence.target.size()) throw fail("source and target lengths differ");
  return p;
}

bool clause_matches(const ParsedClause& parsed, const SynthGrammar& grammar) {
  if (parsed.obj_before_verb != grammar.obj_before_verb) return false;
  if (parsed.numeral_before_noun && *parsed.numeral_before_noun != grammar.numeral_before_noun) return false;
  if (parsed.adposition_after_noun && *parsed.adposition_after_noun != grammar.adposition_after_noun) return false;
  return true;
}

SynthSuite generate_suite(std::size_t n_langs, std::size_t sentences_per_lang, std::uint64_t seed,
                          std::size_t lexicon_size) {
  if (n_langs < 4) throw ValidationError("synthetic suite needs at least 4 languages");
  if (sentences_per_lang == 0) throw ValidationError("synthetic suite needs at least one sentence per language");
  concept_counts(lexicon_size);

  SynthSuite suite;
  suite.seed = seed;
  const int width = n_langs > 100 ? 3 : 2;
  std::vector<std::string> codes;
  std::set<std::string> used;
  for (const auto& [w, _] : target_lexicon(lexicon_size).entries) used.insert(w);

  for (std::size_t i = 0; i < n_langs; ++i) {
    std::string num = std::to_string(i);
    std::string code = "syn" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0') + num;
    codes.push_back(code);

    std::mt19937_64 place(derive_seed(seed, 2 * i + 1));
    LanguageRecord rec;
    rec.code = code;
    rec.lat = std::uniform_real_distribution<double>(-60.0, 60.0)(place);
    rec.lon = std::uniform_real_distribution<double>(-180.0, 180.0)(place);
    std::uniform_int_distribution<int> family(0, 4), branch(0, 2);
    const int fam = family(place);
    rec.lineage = {"Fam" + std::to_string(fam), "Fam" + std::to_string(fam) + "_" + std::to_string(branch(place))};
    suite.registry.add(rec);

    SynthGrammar g;
    g.obj_before_verb = (i & 1) != 0;
    g.adposition_after_noun = (i & 2) != 0;
    g.numeral_before_noun = (i & 4) != 0;
    g.lexicon_size = lexicon_size;
    // Redraw until no word is shared with an earlier language.
    for (std::uint64_t attempt = 0;; ++attempt) {
      g.lexicon_seed = derive_seed(derive_seed(seed, 2 * i), attempt);
      Lexicon lex = make_lexicon(lexicon_size, g.lexicon_seed);
      if (std::none_of(lex.entries.begin(), lex.entries.end(), [&](const auto& kv) { return used.count(kv.first); })) {
        for (const auto& [w, _] : lex.entries) used.insert(w);
        suite.lexicons.push_back(std::move(lex));
        break;
      }
      if (attempt > 1000) throw RuntimeFailure("could not draw a disjoint lexicon for " + code);
    }
    suite.grammars.push_back(g);
  }

  suite.gold = FeatureMatrix(codes, {make_feature_spec(kObjectBeforeVerb), make_feature_spec(kAdpositionAfterNoun),
                                     make_feature_spec(kNumeralBeforeNoun)});
  for (std::size_t i = 0; i < n_langs; ++i) {
    suite.gold.set(i, 0, suite.grammars[i].obj_before_verb ? 1 : 0);
    suite.gold.set(i, 1, suite.grammars[i].adposition_after_noun ? 1 : 0);
    suite.gold.set(i, 2, suite.grammars[i].numeral_before_noun ? 1 : 0);
  }

  std::vector<SynthLanguage> langs;
  for (std::size_t i = 0; i < n_langs; ++i)
    langs.emplace_back(suite.grammars[i], suite.lexicons[i], derive_seed(seed ^ 0x5e47e9ce5ULL, i));
  // Interleave languages so the corpus file is not sorted by language.
  for (std::size_t s = 0; s < sentences_per_lang; ++s)
    for (std::size_t i = 0; i < n_langs; ++i) {
      SynthSentence sent = langs[i].next();
      suite.corpus.add({codes[i], std::move(sent.source), std::move(sent.target)});
    }
  return suite;
}

void write_suite(const std::filesystem::path& dir, const SynthSuite& suite) {
  std::ostringstream reg, corpus, feats;
  write_registry(reg, suite.registry);
  write_parallel(corpus, suite.corpus);
  write_features(feats, suite.gold);
  write_file(dir / "registry.tsv", reg.str());
  write_file(dir / "corpus.txt", corpus.str());
  write_file(dir / "features.csv", feats.str());
}

}  // namespace langtyp
