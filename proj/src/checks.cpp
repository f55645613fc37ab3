#include "scr/checks.hpp"

#include <optional>

#include "scr/fusion.hpp"

namespace scr {

namespace {

constexpr std::size_t kVocab = 60;
constexpr std::size_t kMaxLen = 24;

TokenSeq random_text(Rng& rng, std::size_t n) {
  TokenSeq t;
  for (std::size_t i = 0; i < n; ++i) t.ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(kVocab - kNumSpecials)));
  return t;
}

// A noisy copy: each token is kept, substituted or dropped, and sometimes a
// token is inserted, so the aligned frame contains fillers.
TokenSeq perturb(const TokenSeq& src, Rng& rng) {
  TokenSeq out;
  for (TokenId id : src.ids) {
    const double u = rng.uniform();
    if (u < 0.15) continue;
    if (u < 0.35) {
      out.ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(kVocab - kNumSpecials)));
    } else {
      out.ids.push_back(id);
    }
    if (rng.uniform() < 0.1) out.ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(kVocab - kNumSpecials)));
  }
  if (out.ids.empty()) out.ids.push_back(src.ids.front());
  return out;
}

}  // namespace

GradCheckReport check_training_gradients(const std::string& path, double tolerance, std::uint64_t seed,
                                         bool dropout, std::size_t min_coordinates) {
  if (path != "rerank" && path != "dr" && path != "fusion")
    throw ConfigError("grad-check path must be rerank, dr or fusion, got " + path);
  EncoderConfig c;
  c.vocab_size = kVocab;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.max_len = kMaxLen;
  c.seed = seed;
  auto params = EncoderParams<double>::init(c);
  // A zero head would leave the encoder without gradient on the rerank path.
  Rng rng(derive_seed(seed, 0x6763));
  for (Eigen::Index j = 0; j < params.head_w.cols(); ++j) params.head_w(0, j) = rng.uniform() - 0.5;

  const TokenSeq query = random_text(rng, 3);
  std::vector<SequenceInput> docs;
  for (std::size_t i = 0; i < 3; ++i) {
    const TokenSeq base = random_text(rng, 5 + i);
    if (path == "rerank") {
      docs.push_back(frame_pair(query, base, kMaxLen));
    } else if (path == "dr") {
      docs.push_back(frame_text(base, kMaxLen));
    } else {
      std::vector<TokenSeq> hyps{base};
      for (std::size_t r = 1; r < 3; ++r) hyps.push_back(perturb(base, rng));
      docs.push_back(early_fused_input(align_nbest(hyps), kMaxLen));
    }
  }
  const SequenceInput q_in = frame_text(query, kMaxLen);
  const double rate = dropout ? c.dropout_rate : 0.0;
  const std::uint64_t drop_seed = derive_seed(seed, 0x64726f70);

  DoubleLossFn loss = [&](const EncoderParams<double>& p, EncoderParams<double>* g) {
    std::optional<Rng> drop;
    if (rate > 0) drop.emplace(drop_seed);
    Rng* dp = drop ? &*drop : nullptr;
    std::vector<ForwardPass<double>> passes(docs.size());
    std::vector<RowVec<double>> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) out[i] = forward<double>(p, docs[i], g ? &passes[i] : nullptr, dp);

    if (path == "rerank") {
      std::vector<double> logits(docs.size());
      for (std::size_t i = 0; i < docs.size(); ++i) logits[i] = rerank_logit<double>(p, out[i]);
      const auto lg = rerank_loss_from_logits(logits[0], std::span<const double>(logits.data() + 1, logits.size() - 1));
      if (g) {
        for (std::size_t i = 0; i < docs.size(); ++i) {
          const double d = i == 0 ? lg.d_pos : lg.d_negs[i - 1];
          g->head_w.row(0) += d * out[i];
          g->head_b(0, 0) += d;
          const RowVec<double> d_cls = d * p.head_w.row(0);
          backward<double>(p, passes[i], d_cls, *g);
        }
      }
      return lg.loss;
    }

    ForwardPass<double> qp;
    const RowVec<double> qv = forward<double>(p, q_in, g ? &qp : nullptr, dp);
    std::vector<double> sims(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) sims[i] = similarity<double>(qv, out[i]);
    const auto lg = dr_loss_grad(sims[0], std::span<const double>(sims.data() + 1, sims.size() - 1));
    if (g) {
      RowVec<double> dq = RowVec<double>::Zero(qv.size());
      for (std::size_t i = 0; i < docs.size(); ++i) {
        const double d = i == 0 ? lg.d_pos : lg.d_negs[i - 1];
        dq += d * out[i];
        const RowVec<double> dd = d * qv;
        backward<double>(p, passes[i], dd, *g);
      }
      backward<double>(p, qp, dq, *g);
    }
    return lg.loss;
  };
  return grad_check(params, loss, tolerance, min_coordinates, 1e-5, seed);
}

}  // namespace scr
