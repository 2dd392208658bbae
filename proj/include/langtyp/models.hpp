#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "langtyp/autograd.hpp"
#include "langtyp/bpe.hpp"
#include "langtyp/corpus.hpp"

namespace langtyp {

struct TrainConfig {
  std::size_t hidden = 512;
  std::size_t embed = 512;
  double lr = 0.001;
  double dropout = 0.5;  // on LSTM inputs only
  int epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  bool attention = false;   // translation model only
  bool lang_token = true;   // language model only; false feeds BOS instead

  void validate() const;
};

// Gate order in the packed weights is input, forget, output, candidate.
struct LstmCell {
  const Parameter* w_input = nullptr;      // [E, 4H]
  const Parameter* w_recurrent = nullptr;  // [H, 4H]
  const Parameter* bias = nullptr;         // [1, 4H]
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  // Xavier weights, zero biases except the forget gate (1.0).
  static LstmCell create(ParameterSet& params, const std::string& prefix, std::size_t input_size,
                         std::size_t hidden_size, std::mt19937_64& rng);
};

struct LstmState {
  Var h;
  Var c;
};

// Binds a parameter into a graph: trainable when `train`, frozen otherwise.
Var bind_param(Graph& g, const Parameter& p, bool train);

LstmState lstm_step(Graph& g, const LstmCell& cell, Var x, const LstmState& prev, bool train = false);
LstmState lstm_zero_state(Graph& g, std::size_t batch, std::size_t hidden);

// Per-step encoder state of one sentence.
struct StepState {
  std::vector<double> h;
  std::vector<double> c;
};

struct EncodedPair {
  std::string lang;
  int lang_id = 0;
  std::vector<int> source;
  std::vector<int> target;
};
using EncodedCorpus = std::vector<EncodedPair>;

// Applies BPE to both sides and maps pieces to ids, in corpus input order.
EncodedCorpus encode_corpus(const CorpusStore& corpus, const MergeTable& merges, const SubwordVocab& vocab);

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 0;
  std::size_t hidden = 0;
  bool attention = false;
};

// Many-to-one encoder-decoder. One embedding table serves source subwords,
// target subwords and language tokens.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelDims dims, std::uint64_t seed);
  Seq2SeqModel(Seq2SeqModel&&) = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) = default;

  const ModelDims& dims() const { return dims_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Parameter& embedding() const { return *embedding_; }

  // Encoder states for [lang] + source + [EOS], one entry per step.
  std::vector<StepState> encode(int lang_id, std::span<const int> source) const;

  // Summed target negative log-likelihood of a batch under teacher forcing.
  // Every source in the batch must have the same length; targets may differ
  // (padding is excluded from the loss). batch_loss binds trainable
  // parameters and applies dropout; batch_nll is the frozen inference path.
  Var batch_loss(Graph& g, std::span<const EncodedPair* const> batch, double dropout, std::mt19937_64& rng);
  Var batch_nll(Graph& g, std::span<const EncodedPair* const> batch) const;

 private:
  Var forward(Graph& g, std::span<const EncodedPair* const> batch, bool train, double dropout,
              std::mt19937_64* rng) const;

  ModelDims dims_;
  ParameterSet params_;
  const Parameter* embedding_;
  LstmCell encoder_;
  LstmCell decoder_;
  const Parameter* out_w_;
  const Parameter* out_b_;
  const Parameter* attn_w_ = nullptr;
};

// Multilingual RNN language model over [lang] + source, predicting each next
// token and finally EOS.
class RnnLmModel {
 public:
  RnnLmModel(ModelDims dims, std::uint64_t seed, bool lang_token = true);
  RnnLmModel(RnnLmModel&&) = default;
  RnnLmModel& operator=(RnnLmModel&&) = default;

  const ModelDims& dims() const { return dims_; }
  bool uses_lang_token() const { return lang_token_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Parameter& embedding() const { return *embedding_; }

  // Sources in the batch must share one length.
  Var batch_loss(Graph& g, std::span<const EncodedPair* const> batch, double dropout, std::mt19937_64& rng);
  Var batch_nll(Graph& g, std::span<const EncodedPair* const> batch) const;

 private:
  Var forward(Graph& g, std::span<const EncodedPair* const> batch, bool train, double dropout,
              std::mt19937_64* rng) const;

  ModelDims dims_;
  bool lang_token_;
  ParameterSet params_;
  const Parameter* embedding_;
  LstmCell cell_;
  const Parameter* out_w_;
  const Parameter* out_b_;
};

std::vector<StepState> encode(const Seq2SeqModel& model, const SubwordVocab& vocab, std::string_view lang,
                              std::span<const int> source);

// Target-side token count of a pair (target + EOS) for the translation model.
std::size_t nmt_tokens(const EncodedPair& p);
// Predicted token count of a pair for the language model (source + EOS).
std::size_t lm_tokens(const EncodedPair& p);

struct NmtTrainResult {
  Seq2SeqModel model;
  std::vector<double> loss_curve;  // mean per-token loss per epoch
};
struct LmTrainResult {
  RnnLmModel model;
  std::vector<double> loss_curve;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

NmtTrainResult train_nmt(const EncodedCorpus& corpus, const SubwordVocab& vocab, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});
LmTrainResult train_lm(const EncodedCorpus& corpus, const SubwordVocab& vocab, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

// exp(mean per-token negative log-likelihood), dropout off.
double perplexity(const Seq2SeqModel& model, const EncodedCorpus& corpus);
double perplexity(const RnnLmModel& model, const EncodedCorpus& corpus);

// Groups indices by source length (ascending), preserving order within a
// length. Exposed for tests.
std::map<std::size_t, std::vector<std::size_t>> length_buckets(const EncodedCorpus& corpus);

// Checkpoint (<stem>.ckpt) plus a key=value manifest (<stem>.manifest) with
// the configuration, vocabulary hash, epoch count and loss curve.
struct ModelManifest {
  std::string kind;  // "nmt" or "lm"
  ModelDims dims;
  TrainConfig config;
  std::uint64_t vocab_hash = 0;
  int epoch = 0;
  std::vector<double> loss_curve;
};

void save_model(const std::filesystem::path& stem, const Seq2SeqModel& model, const ModelManifest& manifest);
void save_model(const std::filesystem::path& stem, const RnnLmModel& model, const ModelManifest& manifest);
ModelManifest load_manifest(const std::filesystem::path& stem);
Seq2SeqModel load_nmt(const std::filesystem::path& stem, const SubwordVocab& vocab);
RnnLmModel load_lm(const std::filesystem::path& stem, const SubwordVocab& vocab);

}  // namespace langtyp
