#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scr/checks.hpp"
#include "scr/encoder.hpp"

using namespace scr;

namespace {

EncoderConfig small_config(std::uint64_t seed = 3) {
  EncoderConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.max_len = 16;
  c.seed = seed;
  return c;
}

TokenSeq ids(std::initializer_list<TokenId> v) {
  TokenSeq t;
  t.ids = v;
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("scr_enc_" + std::to_string(::getpid()) + "_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Losses, RerankHandValues) {
  const double half[] = {0.5};
  EXPECT_NEAR(rerank_loss(0.5, half), 2.0 * std::log(2.0), 1e-6);
  EXPECT_NEAR(rerank_loss(0.5, half), 1.386294, 1e-6);
  const double eps = kScoreEpsilon;
  const double negs[] = {eps, eps, eps};
  EXPECT_LE(rerank_loss(1.0 - eps, negs), 1e-5);
  // Exact 0 and 1 are clamped rather than producing infinities.
  const double one[] = {1.0};
  EXPECT_TRUE(std::isfinite(rerank_loss(0.0, one)));
}

TEST(Losses, RerankLogitGradientMatchesFiniteDifference) {
  const double negs[] = {0.3, -1.2};
  const auto lg = rerank_loss_from_logits(0.7, negs);
  const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto f = [&](double p, double n0, double n1) {
    const double s[] = {sig(n0), sig(n1)};
    return rerank_loss(sig(p), s);
  };
  const double h = 1e-6;
  EXPECT_NEAR(lg.loss, f(0.7, 0.3, -1.2), 1e-12);
  EXPECT_NEAR(lg.d_pos, (f(0.7 + h, 0.3, -1.2) - f(0.7 - h, 0.3, -1.2)) / (2 * h), 1e-6);
  EXPECT_NEAR(lg.d_negs[0], (f(0.7, 0.3 + h, -1.2) - f(0.7, 0.3 - h, -1.2)) / (2 * h), 1e-6);
}

TEST(Losses, DrHandValues) {
  const double same[] = {1.7};
  EXPECT_NEAR(dr_loss(1.7, same), std::log(2.0), 1e-6);
  const double zeros[] = {0.0, 0.0};
  EXPECT_NEAR(dr_loss(2.0, zeros), std::log(1.0 + 2.0 * std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(dr_loss(2.0, zeros), 0.2395448, 1e-6);
}

TEST(Losses, DrShiftInvariance) {
  Rng rng(8);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> negs(20);
    for (auto& x : negs) x = rng.uniform() * 10 - 5;
    const double pos = rng.uniform() * 10 - 5;
    const double c = rng.uniform() * 200 - 100;
    std::vector<double> shifted = negs;
    for (auto& x : shifted) x += c;
    EXPECT_NEAR(dr_loss(pos, negs), dr_loss(pos + c, shifted), 1e-9);
  }
}

TEST(Losses, DrGradientSumsToZero) {
  const double negs[] = {0.5, -0.25, 3.0};
  const auto lg = dr_loss_grad(1.0, negs);
  double s = lg.d_pos;
  for (double d : lg.d_negs) s += d;
  EXPECT_NEAR(s, 0.0, 1e-12);
  EXPECT_LT(lg.d_pos, 0.0);
}

TEST(Embed, ZeroEmbeddingsAndDeterminism) {
  const auto p = EncoderParams<float>::zeros(small_config());
  const auto e = embed(p, frame_text(ids({5, 6, 7}), 16));
  EXPECT_EQ(e.x.rows(), 5);
  EXPECT_TRUE(e.x.isZero(0));
  const auto q = EncoderParams<float>::init(small_config());
  EXPECT_EQ(embed(q, frame_text(ids({5, 6, 7}), 16)).x, embed(q, frame_text(ids({5, 6, 7}), 16)).x);
}

TEST(Embed, OutOfRangeIdIsVocabularyError) {
  const auto p = EncoderParams<float>::init(small_config());
  EXPECT_THROW(embed(p, frame_text(ids({5, 99}), 16)), VocabularyError);
}

TEST(Embed, ColumnAveraging) {
  const auto p = EncoderParams<double>::init(small_config());
  SequenceInput in = frame_text(ids({5}), 16);
  in.columns[1] = {5, 9};
  const auto e = embed(p, in);
  const RowVec<double> expect = (p.token_embeddings.row(5) + p.token_embeddings.row(9)) / 2.0 +
                                p.position_embeddings.row(1) + p.segment_embeddings.row(0);
  EXPECT_LT((e.x.row(1) - expect).norm(), 1e-12);
}

TEST(Encoder, MaskedTailDoesNotMatter) {
  const auto p = EncoderParams<float>::init(small_config());
  SequenceInput a = frame_text(ids({5, 6, 7}), 16);
  SequenceInput b = a;
  for (auto* in : {&a, &b}) {
    in->columns.push_back({kPad});
    in->columns.push_back({kPad});
    in->segments.insert(in->segments.end(), {0, 0});
    in->mask.insert(in->mask.end(), {0, 0});
  }
  a.columns[a.size() - 2] = {11};
  a.columns[a.size() - 1] = {12};
  b.columns[b.size() - 2] = {12};
  b.columns[b.size() - 1] = {11};
  EXPECT_EQ(forward<float>(p, a), forward<float>(p, b));
  // Dropping the tail changes only summation lengths, so agreement is to rounding.
  EXPECT_LT((forward<float>(p, a) - forward<float>(p, frame_text(ids({5, 6, 7}), 16))).norm(), 1e-5);
}

TEST(Encoder, SingleTokenInput) {
  const auto p = EncoderParams<float>::init(small_config());
  SequenceInput in;
  in.columns = {{kCls}};
  in.segments = {0};
  in.mask = {1};
  const auto v = forward<float>(p, in);
  EXPECT_EQ(v.size(), 16);
  EXPECT_TRUE(v.allFinite());
}

TEST(Encoder, ZeroHeadScoresOneHalf) {
  auto p = EncoderParams<float>::init(small_config());
  p.head_w.setZero();
  p.head_b.setZero();
  EXPECT_DOUBLE_EQ(rerank_score(p, ids({5, 6}), ids({7, 8, 9})), 0.5);
  EXPECT_THROW(rerank_score(p, TokenSeq{}, ids({7})), InputError);
}

TEST(Encoder, SimilarityShapeError) {
  const float a[] = {1, 2, 3};
  const float b[] = {1, 2};
  EXPECT_THROW(similarity(std::span<const float>(a), std::span<const float>(b)), ShapeError);
  EXPECT_DOUBLE_EQ(similarity(std::span<const float>(a), std::span<const float>(a)), 14.0);
}

TEST(Encoder, FramePairSegments) {
  const auto in = frame_pair(ids({5, 6}), ids({7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}), 10);
  ASSERT_EQ(in.size(), 10u);
  EXPECT_EQ(in.columns[0][0], kCls);
  EXPECT_EQ(in.columns[3][0], kSep);
  EXPECT_EQ(in.columns[9][0], kSep);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(in.segments[i], 0);
  for (std::size_t i = 4; i < 10; ++i) EXPECT_EQ(in.segments[i], 1);
}

TEST(Optimizer, ZeroLearningRateAndDecayLeavesParameters) {
  auto p = EncoderParams<float>::init(small_config());
  const auto before = p;
  auto g = EncoderParams<float>::zeros(small_config());
  g.token_embeddings.setConstant(0.3f);
  auto st = OptimizerState<float>::create(p, 0.0, 0.0);
  adamw_step(p, g, st);
  bool same = true;
  auto& pc = p;
  const auto& bc = before;
  std::vector<const Mat<float>*> a, b;
  pc.visit([&](const std::string&, Mat<float>& m) { a.push_back(&m); });
  bc.visit([&](const std::string&, const Mat<float>& m) { b.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i) same &= *a[i] == *b[i];
  EXPECT_TRUE(same);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  auto p = EncoderParams<float>::init(small_config());
  auto g = EncoderParams<float>::zeros(small_config());
  g.head_b(0, 0) = std::numeric_limits<float>::quiet_NaN();
  auto st = OptimizerState<float>::create(p, 1e-3);
  try {
    adamw_step(p, g, st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head_b"), std::string::npos);
  }
}

TEST(Optimizer, DeterministicSteps) {
  auto run = [] {
    auto p = EncoderParams<float>::init(small_config(9));
    auto st = OptimizerState<float>::create(p, 1e-2);
    for (int s = 0; s < 3; ++s) {
      auto g = EncoderParams<float>::zeros(p.config);
      ForwardPass<float> pass;
      Rng drop(s);
      const auto v = forward<float>(p, frame_text(ids({5, 6, 7}), 16), &pass, &drop);
      backward<float>(p, pass, v, g);
      adamw_step(p, g, st);
    }
    return checkpoint_bytes(p, CheckpointMeta{});
  };
  EXPECT_EQ(run(), run());
}

class GradCheckPath : public ::testing::TestWithParam<std::string> {};

TEST_P(GradCheckPath, WithinTolerance) {
  for (bool dropout : {false, true}) {
    const auto r = check_training_gradients(GetParam(), 1e-4, 1, dropout);
    EXPECT_GE(r.coordinates, 200u);
    EXPECT_LE(r.max_relative_error, 1e-4);
    EXPECT_TRUE(r.passed);
    for (const auto& f : r.failures) ADD_FAILURE() << f;
  }
}

INSTANTIATE_TEST_SUITE_P(Paths, GradCheckPath, ::testing::Values("rerank", "dr", "fusion"));

TEST(GradCheck, DetectsWrongGradient) {
  auto p = EncoderParams<double>::init(small_config());
  DoubleLossFn bad = [](const EncoderParams<double>& P, EncoderParams<double>* g) {
    const double v = P.head_b(0, 0);
    if (g) g->head_b(0, 0) += 3.0 * v;  // true derivative of v^2 is 2v
    return v * v;
  };
  p.head_b(0, 0) = 0.7;
  const auto r = grad_check(p, bad, 1e-4, 10);
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.failures.empty());
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto p = EncoderParams<float>::init(small_config());
  CheckpointMeta meta;
  meta.model = "dr";
  meta.fusion = "early";
  meta.n = 5;
  meta.ance = true;
  meta.epoch = 3;
  meta.validation_metric = 0.25;
  const auto path = temp_path("a.ckpt");
  save_checkpoint(path, p, meta);
  CheckpointMeta back;
  const auto q = load_checkpoint(path, &back);
  EXPECT_EQ(back, meta);
  EXPECT_EQ(checkpoint_bytes(q, back), checkpoint_bytes(p, meta));

  std::string bytes = slurp(path);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x5a;
  std::ofstream(path, std::ios::binary) << flipped;
  EXPECT_THROW(load_checkpoint(path), CorruptionError);

  std::string versioned = bytes;
  versioned[8] = static_cast<char>(versioned[8] + 7);
  std::ofstream(path, std::ios::binary) << versioned;
  EXPECT_THROW(load_checkpoint(path), VersionError);

  std::ofstream(path, std::ios::binary) << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST(Optimizer, SeparableBatchLossStrictlyDecreases) {
  auto c = small_config(12);
  c.dropout_rate = 0.0;
  auto p = EncoderParams<float>::init(c);
  auto st = OptimizerState<float>::create(p, 1e-3);
  const auto q = frame_text(ids({5, 6}), c.max_len);
  std::vector<SequenceInput> docs{frame_text(ids({5, 6, 9, 10}), c.max_len)};
  for (TokenId t = 11; t < 31; t += 4) docs.push_back(frame_text(ids({t, TokenId(t + 1), TokenId(t + 2)}), c.max_len));
  double last = 1e300;
  for (int step = 0; step < 50; ++step) {
    auto g = EncoderParams<float>::zeros(c);
    ForwardPass<float> qp;
    const auto qv = forward<float>(p, q, &qp);
    std::vector<ForwardPass<float>> dp(docs.size());
    std::vector<RowVec<float>> dv;
    for (std::size_t i = 0; i < docs.size(); ++i) dv.push_back(forward<float>(p, docs[i], &dp[i]));
    std::vector<double> negs;
    for (std::size_t i = 1; i < dv.size(); ++i) negs.push_back(similarity(qv, dv[i]));
    const auto lg = dr_loss_grad(similarity(qv, dv[0]), negs);
    EXPECT_LT(lg.loss, last) << "step " << step;
    last = lg.loss;
    RowVec<float> dq = static_cast<float>(lg.d_pos) * dv[0];
    backward<float>(p, dp[0], static_cast<float>(lg.d_pos) * qv, g);
    for (std::size_t i = 1; i < dv.size(); ++i) {
      dq += static_cast<float>(lg.d_negs[i - 1]) * dv[i];
      backward<float>(p, dp[i], static_cast<float>(lg.d_negs[i - 1]) * qv, g);
    }
    backward<float>(p, qp, dq, g);
    adamw_step(p, g, st);
  }
}
