#include "langtyp/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "langtyp/checkpoint.hpp"
#include "langtyp/error.hpp"
#include "langtyp/optim.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

void TrainConfig::validate() const {
  if (hidden == 0 || embed == 0) throw ValidationError("train config: sizes must be positive");
  if (!(lr > 0.0 && lr < 1.0)) throw ValidationError("train config: learning rate must be in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("train config: dropout must be in [0, 1)");
  if (epochs <= 0) throw ValidationError("train config: epochs must be positive");
  if (batch_size == 0) throw ValidationError("train config: batch size must be positive");
  if (!(clip_norm >= 0.0)) throw ValidationError("train config: clip norm must be non-negative");
}

LstmCell LstmCell::create(ParameterSet& params, const std::string& prefix, std::size_t input_size,
                          std::size_t hidden_size, std::mt19937_64& rng) {
  LstmCell cell;
  cell.input_size = input_size;
  cell.hidden_size = hidden_size;
  cell.w_input = &params.add(prefix + ".w_input", xavier_uniform(input_size, 4 * hidden_size, rng));
  cell.w_recurrent = &params.add(prefix + ".w_recurrent", xavier_uniform(hidden_size, 4 * hidden_size, rng));
  Tensor bias = Tensor::matrix(1, 4 * hidden_size);
  for (std::size_t j = hidden_size; j < 2 * hidden_size; ++j) bias[j] = 1.0;
  cell.bias = &params.add(prefix + ".bias", std::move(bias));
  return cell;
}

Var bind_param(Graph& g, const Parameter& p, bool train) {
  // Trainable binding is only requested from the non-const training entry
  // points of a model, which own the parameter.
  return train ? g.param(const_cast<Parameter&>(p)) : g.frozen(p);
}

LstmState lstm_zero_state(Graph& g, std::size_t batch, std::size_t hidden) {
  return {g.constant(Tensor::matrix(batch, hidden)), g.constant(Tensor::matrix(batch, hidden))};
}

LstmState lstm_step(Graph& g, const LstmCell& cell, Var x, const LstmState& prev, bool train) {
  const std::size_t H = cell.hidden_size;
  const Tensor& xv = x.value();
  if (xv.cols() != cell.input_size || prev.h.value().cols() != H || prev.c.value().cols() != H ||
      prev.h.value().rows() != xv.rows() || prev.c.value().rows() != xv.rows())
    throw ValidationError("lstm_step: input " + xv.shape_string() + ", h " + prev.h.value().shape_string() + ", c " +
                          prev.c.value().shape_string() + " do not match cell (E=" + std::to_string(cell.input_size) +
                          ", H=" + std::to_string(H) + ")");
  Var wx = bind_param(g, *cell.w_input, train);
  Var wh = bind_param(g, *cell.w_recurrent, train);
  Var b = bind_param(g, *cell.bias, train);
  Var gates = ops::add(ops::add(ops::matmul(x, wx), ops::matmul(prev.h, wh)), b);
  Var i = ops::sigmoid(ops::slice_cols(gates, 0, H));
  Var f = ops::sigmoid(ops::slice_cols(gates, H, H));
  Var o = ops::sigmoid(ops::slice_cols(gates, 2 * H, H));
  Var cand = ops::tanh(ops::slice_cols(gates, 3 * H, H));
  Var c = ops::add(ops::mul(f, prev.c), ops::mul(i, cand));
  Var h = ops::mul(o, ops::tanh(c));
  return {h, c};
}

EncodedCorpus encode_corpus(const CorpusStore& corpus, const MergeTable& merges, const SubwordVocab& vocab) {
  EncodedCorpus out;
  out.reserve(corpus.total());
  BpeCache cache(merges);
  corpus.for_each([&](const SentencePair& p) {
    EncodedPair e;
    e.lang = p.lang;
    e.lang_id = vocab.lang_id(p.lang);
    e.source = vocab.encode(cache.apply(p.source));
    e.target = vocab.encode(cache.apply(p.target));
    out.push_back(std::move(e));
  });
  return out;
}

std::size_t nmt_tokens(const EncodedPair& p) { return p.target.size() + 1; }
std::size_t lm_tokens(const EncodedPair& p) { return p.source.size() + 1; }

namespace {

Var embed_input(Var table, const std::vector<int>& ids, bool train, double dropout,
                std::mt19937_64* rng) {
  Var x = ops::lookup(table, ids);
  if (train && dropout > 0.0 && rng) x = ops::dropout(x, dropout, *rng);
  return x;
}

std::size_t shared_source_length(std::span<const EncodedPair* const> batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  const std::size_t T = batch[0]->source.size();
  for (const auto* p : batch)
    if (p->source.size() != T) throw ValidationError("batch sources must share one length");
  return T;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(ModelDims dims, std::uint64_t seed) : dims_(dims) {
  if (dims.vocab == 0 || dims.embed == 0 || dims.hidden == 0) throw ValidationError("seq2seq: sizes must be positive");
  std::mt19937_64 rng(seed);
  embedding_ = &params_.add("embedding", xavier_uniform(dims.vocab, dims.embed, rng));
  encoder_ = LstmCell::create(params_, "encoder", dims.embed, dims.hidden, rng);
  decoder_ = LstmCell::create(params_, "decoder", dims.embed, dims.hidden, rng);
  out_w_ = &params_.add("output.w", xavier_uniform(dims.hidden, dims.vocab, rng));
  out_b_ = &params_.add("output.b", Tensor::matrix(1, dims.vocab));
  if (dims.attention) attn_w_ = &params_.add("attention.w", xavier_uniform(2 * dims.hidden, dims.hidden, rng));
}

std::vector<StepState> Seq2SeqModel::encode(int lang_id, std::span<const int> source) const {
  if (lang_id < 0 || static_cast<std::size_t>(lang_id) >= dims_.vocab)
    throw ValidationError("encode: language id out of range");
  Graph g;
  Var emb = g.frozen(*embedding_);
  LstmState st = lstm_zero_state(g, 1, dims_.hidden);
  std::vector<StepState> out;
  out.reserve(source.size() + 2);
  std::vector<int> id(1);
  for (std::size_t t = 0; t < source.size() + 2; ++t) {
    id[0] = t == 0 ? lang_id : (t <= source.size() ? source[t - 1] : SubwordVocab::kEos);
    st = lstm_step(g, encoder_, ops::lookup(emb, id), st);
    out.push_back({st.h.value().vector(), st.c.value().vector()});
  }
  return out;
}

Var Seq2SeqModel::batch_loss(Graph& g, std::span<const EncodedPair* const> batch, double dropout,
                             std::mt19937_64& rng) {
  return forward(g, batch, true, dropout, &rng);
}

Var Seq2SeqModel::batch_nll(Graph& g, std::span<const EncodedPair* const> batch) const {
  return forward(g, batch, false, 0.0, nullptr);
}

Var Seq2SeqModel::forward(Graph& g, std::span<const EncodedPair* const> batch, bool train, double dropout,
                          std::mt19937_64* rng) const {
  const std::size_t T = shared_source_length(batch);
  const std::size_t B = batch.size();
  const std::size_t H = dims_.hidden;
  Var emb = bind_param(g, *embedding_, train);

  LstmState st = lstm_zero_state(g, B, H);
  std::vector<Var> enc_h;
  std::vector<int> ids(B);
  for (std::size_t t = 0; t < T + 2; ++t) {
    for (std::size_t b = 0; b < B; ++b)
      ids[b] = t == 0 ? batch[b]->lang_id : (t <= T ? batch[b]->source[t - 1] : SubwordVocab::kEos);
    st = lstm_step(g, encoder_, embed_input(emb, ids, train, dropout, rng), st, train);
    if (attn_w_) enc_h.push_back(st.h);
  }

  std::size_t steps = 0;
  for (const auto* p : batch) steps = std::max(steps, p->target.size() + 1);
  Var ow = bind_param(g, *out_w_, train);
  Var ob = bind_param(g, *out_b_, train);
  Var aw = attn_w_ ? bind_param(g, *attn_w_, train) : Var{};
  std::vector<int> targets(B);
  std::vector<double> weights(B);
  Var total{};
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto& y = batch[b]->target;
      ids[b] = s == 0 ? SubwordVocab::kBos : (s - 1 < y.size() ? y[s - 1] : SubwordVocab::kPad);
      targets[b] = s < y.size() ? y[s] : (s == y.size() ? SubwordVocab::kEos : SubwordVocab::kPad);
      weights[b] = s <= y.size() ? 1.0 : 0.0;
    }
    st = lstm_step(g, decoder_, embed_input(emb, ids, train, dropout, rng), st, train);
    Var out = st.h;
    if (attn_w_) {
      std::vector<Var> scores;
      for (Var eh : enc_h) scores.push_back(ops::row_dot(st.h, eh));
      Var align = ops::softmax_rows(ops::concat_cols(scores));
      Var context{};
      for (std::size_t t = 0; t < enc_h.size(); ++t) {
        Var part = ops::mul_col(enc_h[t], ops::slice_cols(align, t, 1));
        context = t == 0 ? part : ops::add(context, part);
      }
      out = ops::tanh(ops::matmul(ops::concat_cols({st.h, context}), aw));
    }
    Var logits = ops::add(ops::matmul(out, ow), ob);
    Var loss = ops::softmax_cross_entropy(logits, targets, weights);
    total = s == 0 ? loss : ops::add(total, loss);
  }
  return total;
}

RnnLmModel::RnnLmModel(ModelDims dims, std::uint64_t seed, bool lang_token) : dims_(dims), lang_token_(lang_token) {
  if (dims.vocab == 0 || dims.embed == 0 || dims.hidden == 0) throw ValidationError("rnnlm: sizes must be positive");
  std::mt19937_64 rng(seed);
  embedding_ = &params_.add("embedding", xavier_uniform(dims.vocab, dims.embed, rng));
  cell_ = LstmCell::create(params_, "lstm", dims.embed, dims.hidden, rng);
  out_w_ = &params_.add("output.w", xavier_uniform(dims.hidden, dims.vocab, rng));
  out_b_ = &params_.add("output.b", Tensor::matrix(1, dims.vocab));
}

Var RnnLmModel::batch_loss(Graph& g, std::span<const EncodedPair* const> batch, double dropout,
                           std::mt19937_64& rng) {
  return forward(g, batch, true, dropout, &rng);
}

Var RnnLmModel::batch_nll(Graph& g, std::span<const EncodedPair* const> batch) const {
  return forward(g, batch, false, 0.0, nullptr);
}

Var RnnLmModel::forward(Graph& g, std::span<const EncodedPair* const> batch, bool train, double dropout,
                        std::mt19937_64* rng) const {
  const std::size_t T = shared_source_length(batch);
  const std::size_t B = batch.size();
  Var emb = bind_param(g, *embedding_, train);
  Var ow = bind_param(g, *out_w_, train);
  Var ob = bind_param(g, *out_b_, train);
  LstmState st = lstm_zero_state(g, B, dims_.hidden);
  std::vector<int> ids(B), targets(B);
  const std::vector<double> weights(B, 1.0);
  Var total{};
  for (std::size_t t = 0; t <= T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto& src = batch[b]->source;
      ids[b] = t == 0 ? (lang_token_ ? batch[b]->lang_id : SubwordVocab::kBos) : src[t - 1];
      targets[b] = t < T ? src[t] : SubwordVocab::kEos;
    }
    st = lstm_step(g, cell_, embed_input(emb, ids, train, dropout, rng), st, train);
    Var logits = ops::add(ops::matmul(st.h, ow), ob);
    Var loss = ops::softmax_cross_entropy(logits, targets, weights);
    total = t == 0 ? loss : ops::add(total, loss);
  }
  return total;
}

std::vector<StepState> encode(const Seq2SeqModel& model, const SubwordVocab& vocab, std::string_view lang,
                              std::span<const int> source) {
  return model.encode(vocab.lang_id(lang), source);
}

std::map<std::size_t, std::vector<std::size_t>> length_buckets(const EncodedCorpus& corpus) {
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < corpus.size(); ++i) buckets[corpus[i].source.size()].push_back(i);
  return buckets;
}

namespace {

template <typename Model, typename TokenFn>
std::vector<double> run_training(Model& model, const EncodedCorpus& corpus, const TrainConfig& config,
                                 TokenFn tokens_of, const EpochCallback& on_epoch) {
  std::mt19937_64 rng(derive_seed(config.seed, 1));
  Adam adam(AdamConfig{config.lr});
  const auto buckets = length_buckets(corpus);
  std::vector<double> curve;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches;
    for (const auto& [len, members] : buckets) {
      auto order = members;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size(); i += config.batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + config.batch_size)));
    }
    std::shuffle(batches.begin(), batches.end(), rng);

    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<const EncodedPair*> batch;
      std::size_t n = 0;
      for (std::size_t idx : batches[bi]) {
        batch.push_back(&corpus[idx]);
        n += tokens_of(corpus[idx]);
      }
      Graph g;
      Var loss_sum = model.batch_loss(g, batch, config.dropout, rng);
      const double value = loss_sum.value().item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch + 1 << ", batch " << bi << " (first language "
            << batch.front()->lang << ", " << batch.size() << " sentences, source length "
            << batch.front()->source.size() << ")";
        throw RuntimeFailure(msg.str());
      }
      Var loss = ops::scale(loss_sum, 1.0 / static_cast<double>(n));
      model.params().zero_grad();
      g.backward(loss);
      model.params().clip_grad_norm(config.clip_norm);
      adam.step(model.params());
      total += value;
      tokens += n;
    }
    curve.push_back(total / static_cast<double>(tokens));
    if (on_epoch) on_epoch(epoch + 1, curve.back());
  }
  return curve;
}

template <typename Model, typename TokenFn>
double corpus_perplexity(const Model& model, const EncodedCorpus& corpus, TokenFn tokens_of) {
  if (corpus.empty()) throw ValidationError("perplexity: empty corpus");
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& [len, members] : length_buckets(corpus)) {
    for (std::size_t i = 0; i < members.size(); i += kChunk) {
      std::vector<const EncodedPair*> batch;
      for (std::size_t j = i; j < std::min(members.size(), i + kChunk); ++j) {
        batch.push_back(&corpus[members[j]]);
        tokens += tokens_of(corpus[members[j]]);
      }
      Graph g;
      total += model.batch_nll(g, batch).value().item();
    }
  }
  return std::exp(total / static_cast<double>(tokens));
}

void check_corpus(const EncodedCorpus& corpus, const SubwordVocab& vocab) {
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  for (const auto& p : corpus) {
    if (p.lang_id != vocab.lang_id(p.lang)) throw ValidationError("corpus was encoded with a different vocabulary");
    for (int id : p.source)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) throw ValidationError("source id outside vocabulary");
    for (int id : p.target)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) throw ValidationError("target id outside vocabulary");
  }
}

}  // namespace

NmtTrainResult train_nmt(const EncodedCorpus& corpus, const SubwordVocab& vocab, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  check_corpus(corpus, vocab);
  Seq2SeqModel model({vocab.size(), config.embed, config.hidden, config.attention}, derive_seed(config.seed, 0));
  auto curve = run_training(model, corpus, config, nmt_tokens, on_epoch);
  return {std::move(model), std::move(curve)};
}

LmTrainResult train_lm(const EncodedCorpus& corpus, const SubwordVocab& vocab, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  check_corpus(corpus, vocab);
  RnnLmModel model({vocab.size(), config.embed, config.hidden, false}, derive_seed(config.seed, 0), config.lang_token);
  auto curve = run_training(model, corpus, config, lm_tokens, on_epoch);
  return {std::move(model), std::move(curve)};
}

double perplexity(const Seq2SeqModel& model, const EncodedCorpus& corpus) {
  return corpus_perplexity(model, corpus, nmt_tokens);
}

double perplexity(const RnnLmModel& model, const EncodedCorpus& corpus) {
  return corpus_perplexity(model, corpus, lm_tokens);
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(format_double(x));
  return join(parts, ",");
}

void write_manifest(const std::filesystem::path& stem, const ModelManifest& m) {
  std::map<std::string, std::string> kv{
      {"kind", m.kind},
      {"vocab_size", std::to_string(m.dims.vocab)},
      {"embed", std::to_string(m.dims.embed)},
      {"hidden", std::to_string(m.dims.hidden)},
      {"attention", m.dims.attention ? "1" : "0"},
      {"lr", format_double(m.config.lr)},
      {"dropout", format_double(m.config.dropout)},
      {"epochs", std::to_string(m.config.epochs)},
      {"batch_size", std::to_string(m.config.batch_size)},
      {"seed", std::to_string(m.config.seed)},
      {"clip_norm", format_double(m.config.clip_norm)},
      {"lang_token", m.config.lang_token ? "1" : "0"},
      {"vocab_hash", hex64(m.vocab_hash)},
      {"epoch", std::to_string(m.epoch)},
      {"loss_curve", join_doubles(m.loss_curve)},
  };
  write_file(std::filesystem::path(stem.string() + ".manifest"), format_key_values(kv));
}

}  // namespace

void save_model(const std::filesystem::path& stem, const Seq2SeqModel& model, const ModelManifest& manifest) {
  save_checkpoint(stem.string() + ".ckpt", model.params(), manifest.config.seed);
  write_manifest(stem, manifest);
}

void save_model(const std::filesystem::path& stem, const RnnLmModel& model, const ModelManifest& manifest) {
  save_checkpoint(stem.string() + ".ckpt", model.params(), manifest.config.seed);
  write_manifest(stem, manifest);
}

ModelManifest load_manifest(const std::filesystem::path& stem) {
  const std::string path = stem.string() + ".manifest";
  auto kv = parse_key_values(read_file(path), path);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(path + ": missing key " + key);
    return it->second;
  };
  ModelManifest m;
  m.kind = get("kind");
  m.dims.vocab = static_cast<std::size_t>(parse_int(get("vocab_size")));
  m.dims.embed = static_cast<std::size_t>(parse_int(get("embed")));
  m.dims.hidden = static_cast<std::size_t>(parse_int(get("hidden")));
  m.dims.attention = get("attention") == "1";
  m.config.embed = m.dims.embed;
  m.config.hidden = m.dims.hidden;
  m.config.attention = m.dims.attention;
  m.config.lr = parse_double(get("lr"));
  m.config.dropout = parse_double(get("dropout"));
  m.config.epochs = static_cast<int>(parse_int(get("epochs")));
  m.config.batch_size = static_cast<std::size_t>(parse_int(get("batch_size")));
  m.config.seed = std::stoull(get("seed"));
  m.config.clip_norm = parse_double(get("clip_norm"));
  m.config.lang_token = get("lang_token") == "1";
  m.vocab_hash = std::stoull(get("vocab_hash"), nullptr, 16);
  m.epoch = static_cast<int>(parse_int(get("epoch")));
  if (!get("loss_curve").empty())
    for (const auto& s : split(get("loss_curve"), ',')) m.loss_curve.push_back(parse_double(s));
  return m;
}

namespace {
void check_vocab(const ModelManifest& m, const SubwordVocab& vocab, const std::filesystem::path& stem) {
  if (m.vocab_hash != vocab.hash() || m.dims.vocab != vocab.size())
    throw ValidationError(stem.string() + ": model was trained with a different vocabulary");
}
}  // namespace

Seq2SeqModel load_nmt(const std::filesystem::path& stem, const SubwordVocab& vocab) {
  auto m = load_manifest(stem);
  if (m.kind != "nmt") throw ValidationError(stem.string() + ": not a translation model");
  check_vocab(m, vocab, stem);
  Seq2SeqModel model(m.dims, 0);
  load_checkpoint(stem.string() + ".ckpt", model.params());
  return model;
}

RnnLmModel load_lm(const std::filesystem::path& stem, const SubwordVocab& vocab) {
  auto m = load_manifest(stem);
  if (m.kind != "lm") throw ValidationError(stem.string() + ": not a language model");
  check_vocab(m, vocab, stem);
  RnnLmModel model(m.dims, 0, m.config.lang_token);
  load_checkpoint(stem.string() + ".ckpt", model.params());
  return model;
}

}  // namespace langtyp
