#pragma once

// A small transformer encoder (pre-norm blocks, a final layer norm on the
// position-0 output) with hand-written backpropagation.
//
// One parameter set serves two roles: the cross-encoder re-ranker reads the
// [CLS] vector through a scalar affine head, and the dual encoder uses the
// [CLS] vector itself as the dense representation of a query or document.
//
// Templates are instantiated for float (training, indexing) and double
// (gradient checking).

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scr/common.hpp"
#include "scr/text.hpp"

namespace scr {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_len = 128;
  std::size_t vocab_size = 0;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln1_g, ln1_b;
  Mat<T> w1, b1, w2, b2;
  Mat<T> ln2_g, ln2_b;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Mat<T> token_embeddings;     // vocab_size x d_model
  Mat<T> position_embeddings;  // max_len x d_model
  Mat<T> segment_embeddings;   // 2 x d_model
  std::vector<LayerParams<T>> layers;
  Mat<T> final_ln_g, final_ln_b;  // applied to the position-0 output
  Mat<T> head_w;  // 1 x d_model
  Mat<T> head_b;  // 1 x 1

  // Uniform in +-1/sqrt(d_model) for weight matrices, zero biases and
  // layer-norm shifts, unit layer-norm scales except the output norm, whose
  // scale starts at 1/sqrt(d_model). Deterministic in config.seed.
  static EncoderParams init(const EncoderConfig& config);
  static EncoderParams zeros(const EncoderConfig& config);

  // Visits every tensor in a fixed order (the checkpoint order).
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  template <typename U>
  EncoderParams<U> cast() const;

  void set_zero();
  std::size_t parameter_count() const;
};

// A framed encoder input. Each position holds the token ids averaged into
// its embedding: one id for plain text, N ids for an early-fused column.
struct SequenceInput {
  std::vector<std::vector<TokenId>> columns;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> mask;  // 1 = visible to attention

  std::size_t size() const { return columns.size(); }
};

// "[CLS] x [SEP]", x truncated to fit max_len.
SequenceInput frame_text(const TokenSeq& text, std::size_t max_len);
// "[CLS] q [SEP] d [SEP]" with segment 0 over the query span and 1 over the
// document span; the document is truncated, the query is kept whole.
SequenceInput frame_pair(const TokenSeq& query, const TokenSeq& doc, std::size_t max_len);
// "[CLS] frame columns [SEP]" with the frame truncated to max_len - 2.
SequenceInput frame_columns(const AlignedFrame& frame, std::size_t max_len);

template <typename T>
struct EmbeddedSeq {
  Mat<T> x;  // L x d_model
  std::vector<std::uint8_t> mask;
};

// output[i] = mean_j token_emb[id_ij] + pos_emb[i] + segment_emb[seg_i].
template <typename T>
EmbeddedSeq<T> embed(const EncoderParams<T>& params, const SequenceInput& input);

// Intermediate values of one forward pass, kept for backward().
template <typename T>
struct Tape;

template <typename T>
class ForwardPass {
 public:
  ForwardPass();
  ~ForwardPass();
  ForwardPass(ForwardPass&&) noexcept;
  ForwardPass& operator=(ForwardPass&&) noexcept;

  Tape<T>& tape() { return *tape_; }
  const Tape<T>& tape() const { return *tape_; }

 private:
  std::unique_ptr<Tape<T>> tape_;
};

// Runs the encoder stack and returns the position-0 output vector.
// With `pass` non-null the intermediates are recorded; with `dropout`
// non-null dropout is applied at config.dropout_rate.
template <typename T>
RowVec<T> encode(const EncoderParams<T>& params, const EmbeddedSeq<T>& seq);
template <typename T>
RowVec<T> forward(const EncoderParams<T>& params, const SequenceInput& input, ForwardPass<T>* pass = nullptr,
                  Rng* dropout = nullptr);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(cls).
template <typename T>
void backward(const EncoderParams<T>& params, const ForwardPass<T>& pass, const RowVec<T>& d_cls,
              EncoderParams<T>& grads);

// Dense representation g(x) of "[CLS] x [SEP]".
template <typename T>
RowVec<T> encode_text(const EncoderParams<T>& params, const TokenSeq& text);
template <typename T>
RowVec<T> encode_text(const EncoderParams<T>& params, const EmbeddedSeq<T>& fused);

template <typename T>
T rerank_logit(const EncoderParams<T>& params, const RowVec<T>& cls);
template <typename T>
double rerank_score(const EncoderParams<T>& params, const TokenSeq& query, const TokenSeq& doc);

double similarity(std::span<const float> q, std::span<const float> d);
double similarity(std::span<const double> q, std::span<const double> d);
template <typename T>
double similarity(const RowVec<T>& q, const RowVec<T>& d) {
  return similarity(std::span<const T>(q.data(), q.size()), std::span<const T>(d.data(), d.size()));
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kScoreEpsilon = 1e-7;

struct LossGrad {
  double loss = 0.0;
  double d_pos = 0.0;
  std::vector<double> d_negs;
};

// Binary cross-entropy over one positive and J negatives; scores are
// clamped to [eps, 1 - eps]. Gradients are with respect to the scores.
double rerank_loss(double pos_score, std::span<const double> neg_scores);
// Same loss, gradients with respect to the pre-sigmoid logits.
LossGrad rerank_loss_from_logits(double pos_logit, std::span<const double> neg_logits);

// Negative log-softmax of the positive similarity; gradients with respect
// to the similarities.
double dr_loss(double pos_sim, std::span<const double> neg_sims);
LossGrad dr_loss_grad(double pos_sim, std::span<const double> neg_sims);

// ---------------------------------------------------------------------------
// Optimiser

template <typename T>
struct OptimizerState {
  EncoderParams<T> m;
  EncoderParams<T> v;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState create(const EncoderParams<T>& params, double learning_rate,
                               double weight_decay = 5e-5);
};

// AdamW with decoupled weight decay. Throws NumericError naming the first
// parameter with a non-finite gradient; parameters are untouched then.
template <typename T>
void adamw_step(EncoderParams<T>& params, const EncoderParams<T>& grads, OptimizerState<T>& state);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  std::vector<std::string> groups;
  std::vector<std::string> failures;  // "name[index]: analytic vs numeric"
  bool passed = true;
};

// Returns the loss; when grads is non-null also accumulates the analytic gradient.
using DoubleLossFn = std::function<double(const EncoderParams<double>&, EncoderParams<double>*)>;

// Central differences (step h) against analytic gradients on at least
// `min_coordinates` coordinates drawn from every parameter group. Embedding
// tables are sampled only from rows the loss touches. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const EncoderParams<double>& params, const DoubleLossFn& loss, double tolerance,
                           std::size_t min_coordinates = 200, double h = 1e-5, std::uint64_t seed = 1,
                           double floor = 1e-5);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::string model = "dr";  // "rerank" | "dr"
  std::string fusion = "none";
  std::size_t n = 1;
  bool ance = false;
  std::size_t epoch = 0;
  double validation_metric = 0.0;
  std::string negative_provenance = "bm25";

  bool operator==(const CheckpointMeta&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params,
                     const CheckpointMeta& meta);
std::string checkpoint_bytes(const EncoderParams<float>& params, const CheckpointMeta& meta);
EncoderParams<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

// ---------------------------------------------------------------------------

template <typename T>
template <typename F>
void EncoderParams<T>::visit(F&& f) {
  f("token_embeddings", token_embeddings);
  f("position_embeddings", position_embeddings);
  f("segment_embeddings", segment_embeddings);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    f(pre + "wq", p.wq);
    f(pre + "bq", p.bq);
    f(pre + "wk", p.wk);
    f(pre + "bk", p.bk);
    f(pre + "wv", p.wv);
    f(pre + "bv", p.bv);
    f(pre + "wo", p.wo);
    f(pre + "bo", p.bo);
    f(pre + "ln1_g", p.ln1_g);
    f(pre + "ln1_b", p.ln1_b);
    f(pre + "w1", p.w1);
    f(pre + "b1", p.b1);
    f(pre + "w2", p.w2);
    f(pre + "b2", p.b2);
    f(pre + "ln2_g", p.ln2_g);
    f(pre + "ln2_b", p.ln2_b);
  }
  f("final_ln_g", final_ln_g);
  f("final_ln_b", final_ln_b);
  f("head_w", head_w);
  f("head_b", head_b);
}

template <typename T>
template <typename F>
void EncoderParams<T>::visit(F&& f) const {
  const_cast<EncoderParams<T>*>(this)->visit(
      [&](const std::string& name, Mat<T>& m) { f(name, static_cast<const Mat<T>&>(m)); });
}

template <typename T>
template <typename U>
EncoderParams<U> EncoderParams<T>::cast() const {
  EncoderParams<U> out = EncoderParams<U>::zeros(config);
  std::vector<const Mat<T>*> src;
  visit([&](const std::string&, const Mat<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Mat<U>& m) { m = src[i++]->template cast<U>(); });
  return out;
}

}  // namespace scr
