#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "scr/corpus.hpp"

using namespace scr;

namespace {

const CorpusBundle& default_bundle() {
  static const CorpusBundle b = generate_corpus(2000, 2000, 7);
  return b;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("scr_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Corpus, DefaultSizesAndDeterminism) {
  const auto& b = default_bundle();
  EXPECT_EQ(b.docs.size(), 2000u);
  EXPECT_EQ(b.split.eval.size(), 500u);
  EXPECT_EQ(b.split.validation.size(), 500u);
  EXPECT_EQ(b.split.train.size(), 1000u);
  EXPECT_EQ(generate_corpus(2000, 2000, 7), b);
}

TEST(Corpus, Invariants) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto b = generate_corpus(10, 100, seed);
    std::set<std::string> ids;
    for (const auto& d : b.docs) {
      EXPECT_FALSE(d.clean_tokens.empty());
      EXPECT_FALSE(d.title_tokens.empty());
      ids.insert(d.doc_id);
    }
    EXPECT_EQ(ids.size(), b.docs.size());
    EXPECT_TRUE(std::is_sorted(b.docs.begin(), b.docs.end(),
                               [](const auto& x, const auto& y) { return x.doc_id < y.doc_id; }));
    for (const auto& [q, d] : b.qrels) EXPECT_TRUE(ids.count(d)) << q;
    std::set<std::string> all(b.split.train.begin(), b.split.train.end());
    for (const auto& q : b.split.validation) EXPECT_TRUE(all.insert(q).second);
    for (const auto& q : b.split.eval) EXPECT_TRUE(all.insert(q).second);
    EXPECT_EQ(all.size(), b.queries.size());
  }
}

TEST(Corpus, InvalidSizes) {
  EXPECT_THROW(generate_corpus(0, 100, 1), ConfigError);
  EXPECT_THROW(generate_corpus(10, 0, 1), ConfigError);
}

TEST(Wer, HandExamples) {
  EXPECT_DOUBLE_EQ(wer({"a", "b", "c"}, {"a", "b", "c"}), 0.0);
  EXPECT_DOUBLE_EQ(wer({"a", "b", "c"}, {"a", "x", "c"}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(wer({"a", "b"}, {"a", "x", "y", "b"}), 1.0);
  EXPECT_THROW(wer({}, {"a"}), DomainError);
}

TEST(Wer, MatchesLevenshteinOracle) {
  Rng rng(4);
  for (int it = 0; it < 300; ++it) {
    Tokens a, b;
    const auto la = 1 + rng.below(8), lb = rng.below(8);
    for (std::size_t i = 0; i < la; ++i) a.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
    for (std::size_t i = 0; i < lb; ++i) b.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
    EXPECT_EQ(edit_distance(a, b), oracle::levenshtein(a, b));
    EXPECT_DOUBLE_EQ(wer(a, b), static_cast<double>(oracle::levenshtein(a, b)) / static_cast<double>(a.size()));
  }
}

TEST(NoiseChannel, ZeroNoiseIsIdentity) {
  const Tokens lexicon{"a", "b", "c", "x", "y"};
  const NoiseChannel ch(NoiseChannelSpec{}, lexicon);
  const Tokens t{"a", "b", "c", "a"};
  const auto d = ch.corrupt(t, 3);
  EXPECT_EQ(d.tokens, t);
  EXPECT_DOUBLE_EQ(d.log_likelihood, 0.0);
  const auto b = generate_corpus(20, 200, 2);
  const NoiseChannel ch2(NoiseChannelSpec{}, corpus_lexicon(b));
  const auto nb = generate_nbest(b.docs[0], ch2, 5);
  EXPECT_EQ(nb.oracle_index, 0u);
  for (const auto& h : nb.hypotheses) EXPECT_EQ(h, b.docs[0].clean_tokens);
}

TEST(NoiseChannel, SingleSubstitution) {
  NoiseChannelSpec spec;
  spec.sub_rate = 0.3;
  const NoiseChannel ch(spec, Tokens{"a", "b", "c", "x", "y"});
  const Tokens t{"a", "b", "c"};
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
    const auto d = ch.corrupt(t, seed);
    ASSERT_EQ(d.tokens.size(), 3u);  // no deletions or insertions at these rates
    std::size_t diff = 0;
    for (std::size_t i = 0; i < 3; ++i) diff += d.tokens[i] != t[i];
    if (diff != 1) continue;
    seen = true;
    EXPECT_EQ(oracle::levenshtein(t, d.tokens), 1u);
    EXPECT_NEAR(wer(t, d.tokens), 1.0 / 3.0, 1e-12);
    EXPECT_EQ(ch.corrupt(t, seed).tokens, d.tokens);
    EXPECT_LT(d.log_likelihood, 0.0);
  }
  EXPECT_TRUE(seen);
}

TEST(NoiseChannel, NBestProperties) {
  const auto& b = default_bundle();
  const NoiseChannel ch(preset_spec(kStandardWer, 9), corpus_lexicon(b));
  for (std::size_t i = 0; i < 10; ++i) {
    const auto nb = generate_nbest(b.docs[i], ch, 20);
    ASSERT_FALSE(nb.hypotheses.empty());
    EXPECT_LE(nb.wer_per_hyp[nb.oracle_index], nb.wer_per_hyp[0]);
    EXPECT_EQ(*std::min_element(nb.wer_per_hyp.begin(), nb.wer_per_hyp.end()), nb.wer_per_hyp[nb.oracle_index]);
    EXPECT_TRUE(std::is_sorted(nb.log_likelihoods.rbegin(), nb.log_likelihoods.rend()));
    std::set<Tokens> distinct(nb.hypotheses.begin(), nb.hypotheses.end());
    EXPECT_EQ(distinct.size(), nb.hypotheses.size());
    if (!nb.short_list) EXPECT_EQ(nb.hypotheses.size(), 20u);
    for (std::size_t r = 0; r < nb.hypotheses.size(); ++r)
      EXPECT_DOUBLE_EQ(nb.wer_per_hyp[r], wer(b.docs[i].clean_tokens, nb.hypotheses[r]));
    EXPECT_EQ(generate_nbest(b.docs[i], ch, 20), nb);
  }
}

TEST(Calibration, ZeroTarget) {
  const auto b = generate_corpus(50, 300, 3);
  NoiseChannelSpec spec = preset_spec(0.0, 1);
  const auto r = calibrate_channel(NoiseChannel(spec, corpus_lexicon(b)), b.docs);
  EXPECT_EQ(r.spec.sub_rate, 0.0);
  EXPECT_EQ(r.spec.del_rate, 0.0);
  EXPECT_EQ(r.spec.ins_rate, 0.0);
}

class CalibrationTarget : public ::testing::TestWithParam<double> {};

TEST_P(CalibrationTarget, WithinOnePoint) {
  const double target = GetParam();
  CorpusBundle b = default_bundle();
  const auto measure = target == kOracleWer ? WerMeasure::oracle : WerMeasure::one_best;
  const auto r = add_condition(b, "c", target, measure, measure == WerMeasure::oracle ? 1 : 5, 11, 100);
  EXPECT_NEAR(r.measured_wer, target, 0.01);
  // Independent re-measurement over the emitted transcripts of the first 500 docs.
  std::size_t edits = 0, ref = 0;
  const auto& cond = b.conditions.at("c");
  for (std::size_t i = 0; i < 500; ++i) {
    const auto& d = b.docs[i];
    edits += oracle::levenshtein(d.clean_tokens, cond.nbest.at(d.doc_id).hypotheses.front());
    ref += d.clean_tokens.size();
  }
  EXPECT_NEAR(static_cast<double>(edits) / static_cast<double>(ref), target, 0.01);
}

INSTANTIATE_TEST_SUITE_P(Targets, CalibrationTarget, ::testing::Values(kStandardWer, kSemiSupervisedWer, kOracleWer));

TEST(Bundle, RoundTripAndCanonicalBytes) {
  CorpusBundle b = generate_corpus(40, 300, 5);
  add_condition(b, "std", kStandardWer, WerMeasure::one_best, 3, 1, 50, 40);
  const auto p = temp_path("bundle.jsonl");
  export_bundle(b, p);
  const CorpusBundle back = import_bundle(p);
  EXPECT_EQ(back, b);
  EXPECT_EQ(export_bundle_string(back), export_bundle_string(b));
  std::filesystem::remove(p);
}

TEST(Bundle, TruncatedFileIsParseError) {
  const CorpusBundle b = generate_corpus(10, 100, 5);
  const std::string s = export_bundle_string(b);
  const auto p = temp_path("trunc.jsonl");
  std::ofstream(p) << s.substr(0, s.size() / 2);
  EXPECT_THROW(import_bundle(p), ParseError);
  std::ofstream(p) << "{\"kind\": \"doc\"\n";
  try {
    import_bundle(p);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  std::filesystem::remove(p);
}
