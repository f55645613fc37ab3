#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "scr/corpus.hpp"
#include "scr/text.hpp"

using namespace scr;

namespace {

Vocabulary letters() { return Vocabulary(Tokens{"a", "b", "c", "d", "i", "can", "paint", "x"}); }

TokenSeq seq(const std::string& s, const Vocabulary& v = letters()) { return tokenize(s, v, SourceKind::hyp); }

std::string ops_string(const std::vector<AlignOp>& ops) {
  std::string s;
  for (auto op : ops) s.push_back("MSDI"[static_cast<int>(op)]);
  return s;
}

// Preferred optimal alignment under the tie order M > S > D > I, left to right.
std::string preferred(const std::vector<std::string>& optimal) {
  auto rank = [](const std::string& s) {
    std::string r;
    for (char c : s) r.push_back(static_cast<char>('0' + std::string("MSDI").find(c)));
    return r;
  };
  std::string best = optimal.front();
  for (const auto& s : optimal)
    if (rank(s) < rank(best)) best = s;
  return best;
}

TokenSeq random_seq(Rng& rng, std::size_t max_len, std::size_t alphabet, std::size_t min_len = 0) {
  TokenSeq t;
  const auto n = min_len + rng.below(max_len - min_len + 1);
  for (std::size_t i = 0; i < n; ++i) t.ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(alphabet)));
  return t;
}

}  // namespace

TEST(Vocabulary, SpecialsAndBijection) {
  const auto v = letters();
  EXPECT_EQ(v.token(kPad), "[PAD]");
  EXPECT_EQ(v.token(kUnk), "[UNK]");
  EXPECT_EQ(v.token(kCls), "[CLS]");
  EXPECT_EQ(v.token(kSep), "[SEP]");
  EXPECT_EQ(v.token(kFiller), std::string(kFillerSurface));
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i)
    if (i >= kNumSpecials) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_EQ(v.id("zzz"), kUnk);
}

TEST(Vocabulary, BuildFromCorpus) {
  const auto b = generate_corpus(30, 200, 4);
  const auto v = build_vocab(b);
  for (const auto& d : b.docs) {
    for (const auto& t : d.clean_tokens) EXPECT_TRUE(v.contains(t));
    for (const auto& t : d.title_tokens) EXPECT_TRUE(v.contains(t));
  }
  EXPECT_EQ(build_vocab(b), v);
  const auto p = std::filesystem::temp_directory_path() / ("scr_vocab_" + std::to_string(::getpid()));
  v.save(p);
  EXPECT_EQ(Vocabulary::load(p), v);
  std::filesystem::remove(p);
}

TEST(Vocabulary, MinCountThreshold) {
  const auto b = generate_corpus(30, 200, 4);
  std::map<std::string, std::size_t> counts;
  for (const auto& d : b.docs) {
    for (const auto& t : d.clean_tokens) ++counts[t];
    for (const auto& t : d.title_tokens) ++counts[t];
  }
  const std::size_t m = 3;
  const auto v = build_vocab(b, m);
  for (const auto& [t, c] : counts) {
    if (c >= m) EXPECT_TRUE(v.contains(t)) << t;
    if (c == m - 1) EXPECT_EQ(tokenize(t, v).ids, std::vector<TokenId>{kUnk}) << t;
  }
}

TEST(Tokenize, Examples) {
  const auto v = letters();
  EXPECT_EQ(tokenize("I Can Paint", v).ids, (std::vector<TokenId>{v.id("i"), v.id("can"), v.id("paint")}));
  EXPECT_EQ(tokenize("i zebra", v).ids, (std::vector<TokenId>{v.id("i"), kUnk}));
  EXPECT_TRUE(tokenize("", v).ids.empty());
  // Specials typed as text are not specials.
  for (TokenId id : tokenize("[CLS] --- [SEP]", v).ids) EXPECT_EQ(id, kUnk);
}

TEST(AlignPair, HandExamples) {
  EXPECT_EQ(ops_string(align_pair(seq("a b c"), seq("a b c"))), "MMM");
  EXPECT_EQ(ops_string(align_pair(seq("a b c"), seq("a c"))), "MDM");
  EXPECT_EQ(ops_string(align_pair(seq("a c"), seq("a b c"))), "MIM");
}

TEST(AlignPair, HandExamplesMatchBruteForce) {
  for (auto [a, b] : std::vector<std::pair<std::string, std::string>>{
           {"a b c", "a b c"}, {"a b c", "a c"}, {"a c", "a b c"}}) {
    const auto A = seq(a).ids, B = seq(b).ids;
    EXPECT_EQ(ops_string(align_pair(seq(a), seq(b))), preferred(oracle::optimal_alignments(A, B)));
  }
}

TEST(AlignPair, RandomPairsMatchBruteForceOracle) {
  Rng rng(21);
  for (int it = 0; it < 200; ++it) {
    const auto a = random_seq(rng, 6, 3), b = random_seq(rng, 6, 3);
    const auto ops = ops_string(align_pair(a, b));
    const auto optimal = oracle::optimal_alignments(a.ids, b.ids);
    EXPECT_EQ(oracle::alignment_cost(ops), oracle::levenshtein(a.ids, b.ids));
    EXPECT_EQ(ops, preferred(optimal));
  }
}

TEST(AlignNbest, IdenticalHypotheses) {
  const auto h = seq("a b c d");
  const auto f = align_nbest({h, h, h});
  EXPECT_EQ(f.n(), 3u);
  EXPECT_EQ(f.columns(), 4u);
  for (const auto& row : f.rows) EXPECT_EQ(row, h.ids);
}

TEST(AlignNbest, CanPaintExample) {
  const auto v = letters();
  const auto f = align_nbest({seq("i can paint"), seq("i paint"), seq("i can paint")});
  EXPECT_EQ(render_frame(f, v), "i can paint\ni --- paint\ni can paint\n");
  for (const auto& row : f.rows) EXPECT_EQ(row[0], v.id("i"));
}

TEST(AlignNbest, InsertionOpensFillerColumn) {
  const auto f = align_nbest({seq("a c"), seq("a b c")});
  EXPECT_EQ(f.columns(), 3u);
  EXPECT_EQ(render_frame(f, letters()), "a --- c\na b c\n");
}

TEST(AlignNbest, EmptyHypothesisIsError) {
  EXPECT_THROW(align_nbest({seq("a"), TokenSeq{}}), AlignmentError);
}

TEST(AlignNbest, NonMatchCountEqualsLevenshtein) {
  Rng rng(5);
  for (int it = 0; it < 500; ++it) {
    const auto a = random_seq(rng, 8, 4, 1), b = random_seq(rng, 8, 4, 1);
    const auto f = align_nbest({a, b});
    std::size_t non_match = 0;
    for (std::size_t c = 0; c < f.columns(); ++c) non_match += f.rows[0][c] != f.rows[1][c];
    EXPECT_EQ(non_match, oracle::levenshtein(a.ids, b.ids));
  }
}

TEST(AlignNbest, RowRecoveryAndRectangular) {
  Rng rng(6);
  for (int it = 0; it < 500; ++it) {
    const auto n = 1 + rng.below(5);
    std::vector<TokenSeq> hyps;
    for (std::size_t i = 0; i < n; ++i) hyps.push_back(random_seq(rng, 8, 5, 1));
    const auto f = align_nbest(hyps);
    ASSERT_EQ(f.n(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(f.rows[i].size(), f.columns());
      EXPECT_EQ(strip_filler(f.rows[i]), hyps[i].ids);
    }
    for (std::size_t c = 0; c < f.columns(); ++c) {
      bool any = false;
      for (const auto& row : f.rows) any |= row[c] != kFiller;
      EXPECT_TRUE(any);
    }
  }
}

TEST(TruncateFrame, Boundary) {
  const auto f = align_nbest({seq("a b c d"), seq("a c d")});
  EXPECT_EQ(truncate_frame(f, f.columns()), f);
  const auto t = truncate_frame(f, f.columns() - 1);
  for (std::size_t i = 0; i < f.n(); ++i)
    EXPECT_EQ(t.rows[i], std::vector<TokenId>(f.rows[i].begin(), f.rows[i].end() - 1));
}
