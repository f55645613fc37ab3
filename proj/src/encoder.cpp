#include "scr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace scr {

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("EncoderConfig: d_model must be a positive multiple of n_heads");
  if (max_len < 8) throw ConfigError("EncoderConfig: max_len must be >= 8");
  if (n_layers == 0 || d_ff == 0) throw ConfigError("EncoderConfig: n_layers and d_ff must be positive");
  if (vocab_size < static_cast<std::size_t>(kNumSpecials))
    throw ConfigError("EncoderConfig: vocab_size must cover the special tokens");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("EncoderConfig: dropout_rate in [0,1)");
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderConfig& c) {
  c.validate();
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  EncoderParams p;
  p.config = c;
  p.token_embeddings = Mat<T>::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.position_embeddings = Mat<T>::Zero(static_cast<Eigen::Index>(c.max_len), d);
  p.segment_embeddings = Mat<T>::Zero(2, d);
  p.final_ln_g = Mat<T>::Zero(1, d);
  p.final_ln_b = Mat<T>::Zero(1, d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    for (Mat<T>* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Mat<T>::Zero(d, d);
    for (Mat<T>* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_g, &l.ln1_b, &l.b2, &l.ln2_g, &l.ln2_b})
      *b = Mat<T>::Zero(1, d);
    l.w1 = Mat<T>::Zero(d, ff);
    l.b1 = Mat<T>::Zero(1, ff);
    l.w2 = Mat<T>::Zero(ff, d);
  }
  p.head_w = Mat<T>::Zero(1, d);
  p.head_b = Mat<T>::Zero(1, 1);
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& c) {
  EncoderParams p = zeros(c);
  Rng rng(derive_seed(c.seed, 0x696e6974ULL));
  const double a = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  auto fill = [&](Mat<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  };
  fill(p.token_embeddings);
  fill(p.position_embeddings);
  fill(p.segment_embeddings);
  // The output scale starts at 1/sqrt(d_model) so initial similarities are
  // of order one instead of order d_model.
  p.final_ln_g.setConstant(static_cast<T>(a));
  for (auto& l : p.layers) {
    for (Mat<T>* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) fill(*w);
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
  }
  fill(p.head_w);
  return p;
}

template <typename T>
void EncoderParams<T>::set_zero() {
  visit([](const std::string&, Mat<T>& m) { m.setZero(); });
}

template <typename T>
std::size_t EncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// ---------------------------------------------------------------------------
// Framing

SequenceInput frame_text(const TokenSeq& text, std::size_t max_len) {
  SequenceInput in;
  const std::size_t keep = std::min(text.ids.size(), max_len - 2);
  in.columns.push_back({kCls});
  for (std::size_t i = 0; i < keep; ++i) in.columns.push_back({text.ids[i]});
  in.columns.push_back({kSep});
  in.segments.assign(in.columns.size(), 0);
  in.mask.resize(in.columns.size());
  for (std::size_t i = 0; i < in.columns.size(); ++i) in.mask[i] = in.columns[i][0] != kPad;
  return in;
}

SequenceInput frame_pair(const TokenSeq& query, const TokenSeq& doc, std::size_t max_len) {
  if (query.ids.empty()) throw InputError("frame_pair: empty query");
  if (query.ids.size() + 3 > max_len) throw InputError("frame_pair: query longer than max_len allows");
  SequenceInput in;
  in.columns.push_back({kCls});
  in.segments.push_back(0);
  for (TokenId id : query.ids) {
    in.columns.push_back({id});
    in.segments.push_back(0);
  }
  in.columns.push_back({kSep});
  in.segments.push_back(0);
  const std::size_t keep = std::min(doc.ids.size(), max_len - query.ids.size() - 3);
  for (std::size_t i = 0; i < keep; ++i) {
    in.columns.push_back({doc.ids[i]});
    in.segments.push_back(1);
  }
  in.columns.push_back({kSep});
  in.segments.push_back(1);
  in.mask.resize(in.columns.size());
  for (std::size_t i = 0; i < in.columns.size(); ++i) in.mask[i] = in.columns[i][0] != kPad;
  return in;
}

SequenceInput frame_columns(const AlignedFrame& frame, std::size_t max_len) {
  if (frame.rows.empty()) throw InputError("frame_columns: empty frame");
  const std::size_t width = frame.columns();
  for (const auto& row : frame.rows)
    if (row.size() != width) throw InputError("frame_columns: ragged frame");
  const std::size_t keep = std::min(width, max_len - 2);
  SequenceInput in;
  in.columns.push_back({kCls});
  for (std::size_t c = 0; c < keep; ++c) {
    std::vector<TokenId> col(frame.rows.size());
    for (std::size_t r = 0; r < frame.rows.size(); ++r) col[r] = frame.rows[r][c];
    in.columns.push_back(std::move(col));
  }
  in.columns.push_back({kSep});
  in.segments.assign(in.columns.size(), 0);
  in.mask.assign(in.columns.size(), 1);
  return in;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Distinct ids of a column with their multiplicities, ascending by id.
std::vector<std::pair<TokenId, std::size_t>> column_counts(const std::vector<TokenId>& col) {
  std::vector<TokenId> sorted = col;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<TokenId, std::size_t>> out;
  for (TokenId id : sorted) {
    if (!out.empty() && out.back().first == id) ++out.back().second;
    else out.emplace_back(id, 1);
  }
  return out;
}

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& y, Mat<T>* xhat_out,
                ColVec<T>* rstd_out) {
  const Eigen::Index rows = x.rows();
  ColVec<T> mean = x.rowwise().mean();
  Mat<T> xc = x.colwise() - mean;
  ColVec<T> var = xc.cwiseAbs2().rowwise().mean();
  ColVec<T> rstd = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
  Mat<T> xhat = xc.array().colwise() * rstd.array();
  y.resize(rows, x.cols());
  y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = std::move(rstd);
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const ColVec<T>& rstd, const Mat<T>& g,
                           Mat<T>& dg, Mat<T>& db) {
  dg += (dy.array() * xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  ColVec<T> m1 = dxhat.rowwise().mean();
  ColVec<T> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat<T> dx = ((dxhat.colwise() - m1).array() - (xhat.array().colwise() * m2.array())).colwise() * rstd.array();
  return dx;
}

// tanh approximation of GELU.
constexpr float kGeluC = 0.7978845608028654f;
constexpr float kGeluK = 0.044715f;

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<T> m(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? T(0) : keep_scale;
  return m;
}

}  // namespace

template <typename T>
struct LayerTape {
  Eigen::Index rows_out = 0;
  Mat<T> u;  // LN1 output over all rows
  Mat<T> xhat1;
  ColVec<T> rstd1;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;
  Mat<T> ctx;
  Mat<T> drop1;
  Mat<T> w;  // LN2 output
  Mat<T> xhat2;
  ColVec<T> rstd2;
  Mat<T> f1, g, gelu_tanh;
  Mat<T> drop2;
};

template <typename T>
struct Tape {
  SequenceInput input;
  Mat<T> drop0;
  std::vector<LayerTape<T>> layers;
  Mat<T> xhat_f;
  ColVec<T> rstd_f;
};

template <typename T>
ForwardPass<T>::ForwardPass() : tape_(std::make_unique<Tape<T>>()) {}
template <typename T>
ForwardPass<T>::~ForwardPass() = default;
template <typename T>
ForwardPass<T>::ForwardPass(ForwardPass&&) noexcept = default;
template <typename T>
ForwardPass<T>& ForwardPass<T>::operator=(ForwardPass&&) noexcept = default;

template <typename T>
EmbeddedSeq<T> embed(const EncoderParams<T>& p, const SequenceInput& input) {
  const std::size_t len = input.size();
  if (len == 0) throw InputError("embed: empty input");
  if (len > p.config.max_len)
    throw ShapeError("embed: sequence length " + std::to_string(len) + " exceeds max_len");
  if (input.segments.size() != len || input.mask.size() != len) throw ShapeError("embed: ragged input");
  const auto vocab = static_cast<TokenId>(p.config.vocab_size);
  EmbeddedSeq<T> out;
  out.x.resize(static_cast<Eigen::Index>(len), p.token_embeddings.cols());
  out.mask = input.mask;
  for (std::size_t i = 0; i < len; ++i) {
    const auto& col = input.columns[i];
    if (col.empty()) throw InputError("embed: empty column");
    for (TokenId id : col)
      if (id < 0 || id >= vocab) throw VocabularyError("embed: token id " + std::to_string(id) + " out of range");
    if (input.segments[i] > 1) throw InputError("embed: segment id must be 0 or 1");
    const auto row = static_cast<Eigen::Index>(i);
    const auto counts = column_counts(col);
    if (counts.size() == 1) {
      out.x.row(row) = p.token_embeddings.row(counts[0].first);
    } else {
      RowVec<T> acc = RowVec<T>::Zero(p.token_embeddings.cols());
      for (auto [id, n] : counts) acc += static_cast<T>(n) * p.token_embeddings.row(id);
      out.x.row(row) = acc / static_cast<T>(col.size());
    }
    out.x.row(row) += p.position_embeddings.row(row);
    out.x.row(row) += p.segment_embeddings.row(input.segments[i]);
  }
  return out;
}

namespace {

// Pre-norm block: y = x + Attn(LN1(x)), z = y + FFN(LN2(y)). Only the
// first rows_out positions are computed (the queries); keys and values
// cover the whole sequence.
template <typename T>
Mat<T> layer_forward(const LayerParams<T>& lp, const EncoderConfig& cfg, const Mat<T>& x,
                     const std::vector<std::uint8_t>& mask, Eigen::Index rows_out, LayerTape<T>* tape, Rng* rng) {
  const Eigen::Index len = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index heads = static_cast<Eigen::Index>(cfg.n_heads);
  const Eigen::Index dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> u;
  Mat<T> xhat1;
  ColVec<T> rstd1;
  layer_norm<T>(x, lp.ln1_g, lp.ln1_b, u, tape ? &xhat1 : nullptr, tape ? &rstd1 : nullptr);
  Mat<T> q = (u.topRows(rows_out) * lp.wq).rowwise() + lp.bq.row(0);
  Mat<T> k = (u * lp.wk).rowwise() + lp.bk.row(0);
  Mat<T> v = (u * lp.wv).rowwise() + lp.bv.row(0);

  Mat<T> ctx(rows_out, d);
  std::vector<Mat<T>> probs;
  if (tape) probs.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index j = 0; j < len; ++j)
      if (!mask[static_cast<std::size_t>(j)]) s.col(j).setConstant(-std::numeric_limits<T>::infinity());
    ColVec<T> mx = s.rowwise().maxCoeff();
    s = (s.colwise() - mx).array().exp();
    ColVec<T> z = s.rowwise().sum();
    s = s.array().colwise() / z.array();
    ctx.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
    if (tape) probs.push_back(std::move(s));
  }

  Mat<T> a = (ctx * lp.wo).rowwise() + lp.bo.row(0);
  Mat<T> drop1;
  if (rng && cfg.dropout_rate > 0) {
    drop1 = dropout_mask<T>(rows_out, d, cfg.dropout_rate, *rng);
    a = a.cwiseProduct(drop1);
  }
  Mat<T> y = x.topRows(rows_out) + a;

  Mat<T> w;
  Mat<T> xhat2;
  ColVec<T> rstd2;
  layer_norm<T>(y, lp.ln2_g, lp.ln2_b, w, tape ? &xhat2 : nullptr, tape ? &rstd2 : nullptr);
  Mat<T> f1 = (w * lp.w1).rowwise() + lp.b1.row(0);
  Mat<T> gelu_tanh = (kGeluC * (f1.array() + kGeluK * f1.array().cube())).tanh();
  Mat<T> g = T(0.5) * f1.array() * (T(1) + gelu_tanh.array());
  Mat<T> f2 = (g * lp.w2).rowwise() + lp.b2.row(0);
  Mat<T> drop2;
  if (rng && cfg.dropout_rate > 0) {
    drop2 = dropout_mask<T>(rows_out, d, cfg.dropout_rate, *rng);
    f2 = f2.cwiseProduct(drop2);
  }
  Mat<T> z = y + f2;

  if (tape) {
    tape->rows_out = rows_out;
    tape->u = std::move(u);
    tape->xhat1 = std::move(xhat1);
    tape->rstd1 = std::move(rstd1);
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->probs = std::move(probs);
    tape->ctx = std::move(ctx);
    tape->drop1 = std::move(drop1);
    tape->w = std::move(w);
    tape->xhat2 = std::move(xhat2);
    tape->rstd2 = std::move(rstd2);
    tape->f1 = std::move(f1);
    tape->g = std::move(g);
    tape->gelu_tanh = std::move(gelu_tanh);
    tape->drop2 = std::move(drop2);
  }
  return z;
}

template <typename T>
Mat<T> layer_backward(const LayerParams<T>& lp, const EncoderConfig& cfg, const LayerTape<T>& t, const Mat<T>& dz,
                      LayerParams<T>& gp) {
  const Eigen::Index len = t.u.rows();
  const Eigen::Index d = t.u.cols();
  const Eigen::Index rows = t.rows_out;
  const Eigen::Index heads = static_cast<Eigen::Index>(cfg.n_heads);
  const Eigen::Index dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> dy = dz;
  Mat<T> df2 = t.drop2.size() ? Mat<T>(dz.cwiseProduct(t.drop2)) : dz;
  gp.w2.noalias() += t.g.transpose() * df2;
  gp.b2 += df2.colwise().sum();
  Mat<T> df1 = df2 * lp.w2.transpose();
  {
    const auto x = t.f1.array();
    const auto th = t.gelu_tanh.array();
    df1.array() *= T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th.square()) * kGeluC * (T(1) + T(3) * kGeluK * x.square());
  }
  gp.w1.noalias() += t.w.transpose() * df1;
  gp.b1 += df1.colwise().sum();
  Mat<T> dw = df1 * lp.w1.transpose();
  dy += layer_norm_backward<T>(dw, t.xhat2, t.rstd2, lp.ln2_g, gp.ln2_g, gp.ln2_b);

  Mat<T> da = t.drop1.size() ? Mat<T>(dy.cwiseProduct(t.drop1)) : dy;
  gp.wo.noalias() += t.ctx.transpose() * da;
  gp.bo += da.colwise().sum();
  Mat<T> dctx = da * lp.wo.transpose();

  Mat<T> dq(rows, d), dk(len, d), dv(len, d);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Mat<T>& p = t.probs[static_cast<std::size_t>(h)];
    const auto dch = dctx.middleCols(h * dh, dh);
    Mat<T> dp = dch * t.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * dch;
    ColVec<T> row_dot = (dp.array() * p.array()).rowwise().sum();
    Mat<T> ds = (p.array() * (dp.colwise() - row_dot).array()) * scale;
    dq.middleCols(h * dh, dh) = ds * t.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * t.q.middleCols(h * dh, dh);
  }
  Mat<T> du = Mat<T>::Zero(len, d);
  gp.wq.noalias() += t.u.topRows(rows).transpose() * dq;
  gp.bq += dq.colwise().sum();
  du.topRows(rows).noalias() += dq * lp.wq.transpose();
  gp.wk.noalias() += t.u.transpose() * dk;
  gp.bk += dk.colwise().sum();
  du.noalias() += dk * lp.wk.transpose();
  gp.wv.noalias() += t.u.transpose() * dv;
  gp.bv += dv.colwise().sum();
  du.noalias() += dv * lp.wv.transpose();

  Mat<T> dx = layer_norm_backward<T>(du, t.xhat1, t.rstd1, lp.ln1_g, gp.ln1_g, gp.ln1_b);
  dx.topRows(rows) += dy;
  return dx;
}

template <typename T>
RowVec<T> run_stack(const EncoderParams<T>& p, const Mat<T>& e, const std::vector<std::uint8_t>& mask, Tape<T>* tape,
                    Rng* rng) {
  if (mask.empty() || !mask[0]) throw InputError("encode: position 0 must be visible");
  Mat<T> x = e;
  if (rng && p.config.dropout_rate > 0) {
    Mat<T> drop = dropout_mask<T>(x.rows(), x.cols(), p.config.dropout_rate, *rng);
    x = x.cwiseProduct(drop);
    if (tape) tape->drop0 = std::move(drop);
  }
  if (tape) tape->layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    // Only position 0 is read from the last layer.
    const Eigen::Index rows_out = l + 1 == p.layers.size() ? 1 : x.rows();
    x = layer_forward<T>(p.layers[l], p.config, x, mask, rows_out, tape ? &tape->layers[l] : nullptr, rng);
    if (!x.allFinite()) throw NumericError("encode: non-finite activation in layer " + std::to_string(l));
  }
  Mat<T> out;
  layer_norm<T>(x.topRows(1), p.final_ln_g, p.final_ln_b, out, tape ? &tape->xhat_f : nullptr,
                tape ? &tape->rstd_f : nullptr);
  return out.row(0);
}

}  // namespace

template <typename T>
RowVec<T> encode(const EncoderParams<T>& params, const EmbeddedSeq<T>& seq) {
  if (static_cast<std::size_t>(seq.x.rows()) > params.config.max_len) throw ShapeError("encode: sequence too long");
  if (seq.mask.size() != static_cast<std::size_t>(seq.x.rows())) throw ShapeError("encode: mask length mismatch");
  return run_stack<T>(params, seq.x, seq.mask, nullptr, nullptr);
}

template <typename T>
RowVec<T> forward(const EncoderParams<T>& params, const SequenceInput& input, ForwardPass<T>* pass, Rng* dropout) {
  EmbeddedSeq<T> e = embed(params, input);
  Tape<T>* tape = nullptr;
  if (pass) {
    tape = &pass->tape();
    tape->input = input;
  }
  return run_stack<T>(params, e.x, e.mask, tape, dropout);
}

template <typename T>
void backward(const EncoderParams<T>& params, const ForwardPass<T>& pass, const RowVec<T>& d_cls,
              EncoderParams<T>& grads) {
  const Tape<T>& t = pass.tape();
  if (t.layers.size() != params.layers.size()) throw Error("backward: forward pass was not recorded");
  Mat<T> dx = layer_norm_backward<T>(Mat<T>(d_cls), t.xhat_f, t.rstd_f, params.final_ln_g, grads.final_ln_g,
                                     grads.final_ln_b);
  for (std::size_t l = params.layers.size(); l-- > 0;)
    dx = layer_backward<T>(params.layers[l], params.config, t.layers[l], dx, grads.layers[l]);
  Mat<T> de = t.drop0.size() ? Mat<T>(dx.cwiseProduct(t.drop0)) : dx;
  for (std::size_t i = 0; i < t.input.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    grads.position_embeddings.row(row) += de.row(row);
    grads.segment_embeddings.row(t.input.segments[i]) += de.row(row);
    const auto& col = t.input.columns[i];
    const auto counts = column_counts(col);
    if (counts.size() == 1) {
      grads.token_embeddings.row(counts[0].first) += de.row(row);
    } else {
      for (auto [id, n] : counts)
        grads.token_embeddings.row(id) += de.row(row) * (static_cast<T>(n) / static_cast<T>(col.size()));
    }
  }
}

template <typename T>
RowVec<T> encode_text(const EncoderParams<T>& params, const TokenSeq& text) {
  return forward<T>(params, frame_text(text, params.config.max_len));
}

template <typename T>
RowVec<T> encode_text(const EncoderParams<T>& params, const EmbeddedSeq<T>& fused) {
  return encode<T>(params, fused);
}

template <typename T>
T rerank_logit(const EncoderParams<T>& params, const RowVec<T>& cls) {
  return params.head_w.row(0).dot(cls) + params.head_b(0, 0);
}

namespace {
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

template <typename T>
double rerank_score(const EncoderParams<T>& params, const TokenSeq& query, const TokenSeq& doc) {
  if (query.ids.empty()) throw InputError("rerank_score: empty query");
  const RowVec<T> cls = forward<T>(params, frame_pair(query, doc, params.config.max_len));
  return sigmoid(static_cast<double>(rerank_logit<T>(params, cls)));
}

template <typename Span>
static double dot_impl(Span q, Span d) {
  if (q.size() != d.size())
    throw ShapeError("similarity: dimension mismatch " + std::to_string(q.size()) + " vs " + std::to_string(d.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += static_cast<double>(q[i]) * static_cast<double>(d[i]);
  return s;
}

double similarity(std::span<const float> q, std::span<const float> d) { return dot_impl(q, d); }
double similarity(std::span<const double> q, std::span<const double> d) { return dot_impl(q, d); }

// ---------------------------------------------------------------------------
// Losses

double rerank_loss(double pos_score, std::span<const double> neg_scores) {
  auto clamp = [](double s) { return std::clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon); };
  double loss = -std::log(clamp(pos_score));
  for (double s : neg_scores) loss -= std::log1p(-clamp(s));
  return loss;
}

LossGrad rerank_loss_from_logits(double pos_logit, std::span<const double> neg_logits) {
  LossGrad out;
  auto clamped = [](double s) { return s < kScoreEpsilon || s > 1.0 - kScoreEpsilon; };
  const double sp = sigmoid(pos_logit);
  out.loss = -std::log(std::clamp(sp, kScoreEpsilon, 1.0 - kScoreEpsilon));
  out.d_pos = clamped(sp) ? 0.0 : -(1.0 - sp);
  out.d_negs.reserve(neg_logits.size());
  for (double z : neg_logits) {
    const double s = sigmoid(z);
    out.loss -= std::log1p(-std::clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon));
    out.d_negs.push_back(clamped(s) ? 0.0 : s);
  }
  return out;
}

LossGrad dr_loss_grad(double pos_sim, std::span<const double> neg_sims) {
  if (neg_sims.empty()) throw ConfigError("dr_loss: at least one negative is required");
  double mx = pos_sim;
  for (double s : neg_sims) mx = std::max(mx, s);
  double z = std::exp(pos_sim - mx);
  for (double s : neg_sims) z += std::exp(s - mx);
  const double lse = mx + std::log(z);
  LossGrad out;
  out.loss = lse - pos_sim;
  out.d_pos = std::exp(pos_sim - lse) - 1.0;
  out.d_negs.reserve(neg_sims.size());
  for (double s : neg_sims) out.d_negs.push_back(std::exp(s - lse));
  return out;
}

double dr_loss(double pos_sim, std::span<const double> neg_sims) { return dr_loss_grad(pos_sim, neg_sims).loss; }

// ---------------------------------------------------------------------------
// AdamW

template <typename T>
OptimizerState<T> OptimizerState<T>::create(const EncoderParams<T>& params, double learning_rate,
                                            double weight_decay) {
  OptimizerState s;
  s.m = EncoderParams<T>::zeros(params.config);
  s.v = EncoderParams<T>::zeros(params.config);
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  return s;
}

template <typename T>
void adamw_step(EncoderParams<T>& params, const EncoderParams<T>& grads, OptimizerState<T>& st) {
  std::vector<const Mat<T>*> g;
  grads.visit([&](const std::string& name, const Mat<T>& m) {
    if (!m.allFinite()) throw NumericError("adamw_step: non-finite gradient in " + name);
    g.push_back(&m);
  });
  std::vector<Mat<T>*> m1, m2;
  st.m.visit([&](const std::string&, Mat<T>& m) { m1.push_back(&m); });
  st.v.visit([&](const std::string&, Mat<T>& m) { m2.push_back(&m); });
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  const T lr = static_cast<T>(st.learning_rate);
  const T wd = static_cast<T>(st.weight_decay);
  const T step_size = static_cast<T>(st.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(st.eps);
  std::size_t i = 0;
  params.visit([&](const std::string&, Mat<T>& p) {
    auto pm = p.array();
    auto gm = g[i]->array();
    auto mm = m1[i]->array();
    auto vm = m2[i]->array();
    mm = b1 * mm + (T(1) - b1) * gm;
    vm = b2 * vm + (T(1) - b2) * gm.square();
    pm -= step_size * mm / (vm.sqrt() * inv_sqrt_bc2 + eps) + lr * wd * pm;
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport grad_check(const EncoderParams<double>& params_in, const DoubleLossFn& loss, double tolerance,
                           std::size_t min_coordinates, double h, std::uint64_t seed, double floor) {
  EncoderParams<double> params = params_in;
  EncoderParams<double> analytic = EncoderParams<double>::zeros(params.config);
  loss(params, &analytic);

  struct Group {
    std::string name;
    Mat<double>* param;
    const Mat<double>* grad;
    std::vector<Eigen::Index> candidates;
  };
  std::vector<Group> groups;
  std::vector<Mat<double>*> grads_list;
  analytic.visit([&](const std::string&, Mat<double>& m) { grads_list.push_back(&m); });
  std::size_t gi = 0;
  params.visit([&](const std::string& name, Mat<double>& m) {
    Group g{name, &m, grads_list[gi++], {}};
    const bool table = name == "token_embeddings" || name == "position_embeddings" || name == "segment_embeddings";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (table && g.grad->row(r).isZero(0.0)) continue;
      for (Eigen::Index c = 0; c < m.cols(); ++c) g.candidates.push_back(r * m.cols() + c);
    }
    if (!g.candidates.empty()) groups.push_back(std::move(g));
  });

  GradCheckReport report;
  Rng rng(seed);
  const std::size_t per_group = (min_coordinates + groups.size() - 1) / groups.size() + 1;
  std::vector<std::vector<Eigen::Index>> picks(groups.size());
  std::size_t total = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto cands = groups[k].candidates;
    rng.shuffle(cands);
    cands.resize(std::min(per_group, cands.size()));
    total += cands.size();
    picks[k] = std::move(cands);
    report.groups.push_back(groups[k].name);
  }
  // Top up from the largest groups if small ones fell short.
  for (std::size_t k = 0; total < min_coordinates && k < groups.size() * per_group; ++k) {
    const std::size_t g = k % groups.size();
    if (picks[g].size() >= groups[g].candidates.size()) continue;
    Eigen::Index c;
    do {
      c = groups[g].candidates[rng.below(groups[g].candidates.size())];
    } while (std::find(picks[g].begin(), picks[g].end(), c) != picks[g].end());
    picks[g].push_back(c);
    ++total;
  }

  for (std::size_t k = 0; k < groups.size(); ++k) {
    for (Eigen::Index idx : picks[k]) {
      double& x = groups[k].param->data()[idx];
      const double orig = x;
      x = orig + h;
      const double lp = loss(params, nullptr);
      x = orig - h;
      const double lm = loss(params, nullptr);
      x = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = groups[k].grad->data()[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      report.max_relative_error = std::max(report.max_relative_error, rel);
      ++report.coordinates;
      if (!(rel <= tolerance)) {
        report.passed = false;
        report.failures.push_back(groups[k].name + "[" + std::to_string(idx) + "]: analytic " + std::to_string(a) +
                                  " vs numeric " + std::to_string(numeric));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define SCR_INSTANTIATE(T)                                                                                       \
  template struct EncoderParams<T>;                                                                              \
  template class ForwardPass<T>;                                                                                 \
  template EmbeddedSeq<T> embed<T>(const EncoderParams<T>&, const SequenceInput&);                               \
  template RowVec<T> encode<T>(const EncoderParams<T>&, const EmbeddedSeq<T>&);                                  \
  template RowVec<T> forward<T>(const EncoderParams<T>&, const SequenceInput&, ForwardPass<T>*, Rng*);           \
  template void backward<T>(const EncoderParams<T>&, const ForwardPass<T>&, const RowVec<T>&, EncoderParams<T>&); \
  template RowVec<T> encode_text<T>(const EncoderParams<T>&, const TokenSeq&);                                   \
  template RowVec<T> encode_text<T>(const EncoderParams<T>&, const EmbeddedSeq<T>&);                             \
  template T rerank_logit<T>(const EncoderParams<T>&, const RowVec<T>&);                                         \
  template double rerank_score<T>(const EncoderParams<T>&, const TokenSeq&, const TokenSeq&);                    \
  template struct OptimizerState<T>;                                                                             \
  template void adamw_step<T>(EncoderParams<T>&, const EncoderParams<T>&, OptimizerState<T>&);

SCR_INSTANTIATE(float)
SCR_INSTANTIATE(double)

#undef SCR_INSTANTIATE

}  // namespace scr
