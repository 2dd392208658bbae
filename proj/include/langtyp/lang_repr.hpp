#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "langtyp/models.hpp"

namespace langtyp {

enum class Method { LMVec, MTVec, MTCell, MTBoth, MTCellFinal, MTHiddenMean };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct LangVector {
  std::string lang;
  Method method = Method::MTVec;
  std::vector<double> values;
  std::size_t n_sentences = 0;  // 0 for embedding methods

  std::size_t dim() const { return values.size(); }
  bool operator==(const LangVector&) const = default;
};

// Embedding row of the language token "<lang>".
LangVector extract_lmvec(const RnnLmModel& lm, const SubwordVocab& vocab, std::string_view lang);
LangVector extract_mtvec(const Seq2SeqModel& nmt, const SubwordVocab& vocab, std::string_view lang);

struct CellOptions {
  std::optional<std::size_t> max_sentences;  // all when unset
  std::uint64_t seed = 1;                    // for subsampling when capped
  bool include_boundary_steps = true;        // language-token and EOS steps
  bool sentence_weighted = false;            // mean of per-sentence means
};

// Sentences of `lang` that extraction uses, in corpus order. With a cap, a
// seeded uniform sample of that size (kept in corpus order).
std::vector<const EncodedPair*> select_sentences(const EncodedCorpus& corpus, std::string_view lang,
                                                 const CellOptions& options);

// Mean encoder cell state over every step of every selected sentence.
LangVector extract_mtcell(const Seq2SeqModel& nmt, const EncodedCorpus& corpus, std::string_view lang,
                          const CellOptions& options = {});

enum class VariantKind { FinalCell, MeanHidden };

// FinalCell: mean over sentences of the last encoder cell state.
// MeanHidden: mean of h over every step of every sentence.
LangVector extract_variant(const Seq2SeqModel& nmt, const EncodedCorpus& corpus, std::string_view lang,
                           VariantKind kind, const CellOptions& options = {});

LangVector combine_mtboth(const LangVector& mtvec, const LangVector& mtcell);

// Vector store file: a header line "lang\tmethod\tdim\tn_sentences", then
// one line per vector with those four fields and a fifth holding the
// space-separated values in shortest round-trip decimal form.
void write_vectors(std::ostream& out, const std::vector<LangVector>& vectors);
std::vector<LangVector> read_vectors(std::istream& in, const std::string& source_name = "<vectors>");
void save_vectors(const std::filesystem::path& path, const std::vector<LangVector>& vectors);
std::vector<LangVector> load_vectors(const std::filesystem::path& path);

// Agglomerative clustering, cosine distance, average linkage. Leaves are
// 0..n-1 in input order; merge i creates node n + i.
struct Merge {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

struct Dendrogram {
  std::vector<std::string> leaves;
  std::vector<Merge> merges;

  std::size_t leaf_count() const { return leaves.size(); }
  // Newick rendering with merge distances as branch annotations.
  std::string newick() const;
};

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);
Dendrogram cluster_vectors(const std::vector<LangVector>& vectors);

}  // namespace langtyp
