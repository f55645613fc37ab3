#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "scr/index.hpp"

using namespace scr;

namespace {

TokenSeq ids(std::vector<TokenId> v) {
  TokenSeq t;
  t.ids = std::move(v);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("scr_idx_" + std::to_string(::getpid()) + "_" + name);
}

// Canonical order oracle: score descending, doc id ascending.
std::vector<RankedEntry> sort_all(std::vector<RankedEntry> v) {
  std::sort(v.begin(), v.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  return v;
}

}  // namespace

TEST(Bm25, HandExample) {
  // d1 "a b", d2 "b c", d3 "c d" with a=5, b=6, c=7, d=8.
  const auto idx = build_bm25({{"d1", ids({5, 6})}, {"d2", ids({6, 7})}, {"d3", ids({7, 8})}});
  EXPECT_DOUBLE_EQ(idx.avg_doc_len, 2.0);
  EXPECT_NEAR(idx.idf(5), std::log(1.0 + 2.5 / 1.5), 1e-12);
  EXPECT_NEAR(bm25_score(idx, ids({5}), "d1"), 0.9808, 1e-3);
  EXPECT_NEAR(bm25_score(idx, ids({5}), "d1"), std::log(1.0 + 2.5 / 1.5) * 2.2 / 2.2, 1e-12);
  EXPECT_EQ(bm25_score(idx, ids({5}), "d3"), 0.0);
  EXPECT_THROW(bm25_score(idx, ids({5}), "d9"), LookupError);
  EXPECT_TRUE(idx.postings.find(9) == idx.postings.end());
}

TEST(Bm25, AverageLengthAndEmptyDocument) {
  const auto idx = build_bm25({{"x", ids({5, 5, 6})}, {"y", ids({})}, {"z", ids({7})}});
  EXPECT_DOUBLE_EQ(idx.avg_doc_len, 4.0 / 3.0);
  EXPECT_EQ(idx.num_docs, 3u);
  EXPECT_EQ(idx.doc_len[idx.position("y")], 0u);
  EXPECT_EQ(build_bm25({{"x", ids({5, 5, 6})}, {"y", ids({})}, {"z", ids({7})}}), idx);
}

TEST(Bm25, SearchMatchesBruteForce) {
  Rng rng(12);
  std::vector<std::vector<int>> raw(50);
  std::map<std::string, TokenSeq> docs;
  for (std::size_t d = 0; d < raw.size(); ++d) {
    const auto len = 1 + rng.below(15);
    for (std::size_t i = 0; i < len; ++i) raw[d].push_back(static_cast<int>(kNumSpecials + rng.below(40)));
    char id[8];
    std::snprintf(id, sizeof id, "d%02zu", d);
    docs[id] = ids(std::vector<TokenId>(raw[d].begin(), raw[d].end()));
  }
  const auto idx = build_bm25(docs);
  for (int q = 0; q < 100; ++q) {
    std::vector<int> query;
    const auto ql = 1 + rng.below(4);
    for (std::size_t i = 0; i < ql; ++i) query.push_back(static_cast<int>(kNumSpecials + rng.below(45)));
    std::vector<RankedEntry> expect;
    for (std::size_t d = 0; d < raw.size(); ++d) {
      const double s = oracle::bm25(raw, query, d);
      char id[8];
      std::snprintf(id, sizeof id, "d%02zu", d);
      bool shares = false;
      for (int t : query) shares |= std::find(raw[d].begin(), raw[d].end(), t) != raw[d].end();
      if (shares) expect.push_back({id, s});
    }
    expect = sort_all(expect);
    const auto got = bm25_search(idx, ids(std::vector<TokenId>(query.begin(), query.end())), 1000);
    ASSERT_EQ(got.entries.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      EXPECT_NEAR(got.entries[i].score, expect[i].score, 1e-9);
      if (i + 1 < expect.size() && std::fabs(expect[i].score - expect[i + 1].score) > 1e-9)
        EXPECT_EQ(got.entries[i].doc_id, expect[i].doc_id);
    }
    const auto top3 = bm25_search(idx, ids(std::vector<TokenId>(query.begin(), query.end())), 3);
    EXPECT_LE(top3.entries.size(), 3u);
  }
}

TEST(NnSearch, HandMatrix) {
  VectorIndex idx;
  idx.doc_ids = {"a", "b", "c", "d", "e"};
  idx.vectors = Mat<float>(5, 4);
  idx.vectors << 1, 0, 0, 0,  //
      0, 2, 0, 0,             //
      0, 0, 3, 0,             //
      0, 0, 0, 4,             //
      1, 1, 1, 1;
  for (int i = 0; i < 4; ++i) {
    const RowVec<float> q = idx.vectors.row(i);
    const auto r = nn_search(idx, std::span<const float>(q.data(), q.size()), 5);
    EXPECT_EQ(r.entries[0].doc_id, idx.doc_ids[i]);
  }
  const float bad[] = {1, 2};
  EXPECT_THROW(nn_search(idx, bad, 3), ShapeError);
}

TEST(NnSearch, MatchesMatrixProductArgsort) {
  Rng rng(13);
  VectorIndex idx;
  idx.vectors = Mat<float>(1000, 16);
  for (int i = 0; i < 1000; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "d%04d", i);
    idx.doc_ids.push_back(id);
    for (int j = 0; j < 16; ++j) idx.vectors(i, j) = static_cast<float>(rng.uniform() * 2 - 1);
  }
  for (int q = 0; q < 100; ++q) {
    RowVec<float> v(16);
    for (int j = 0; j < 16; ++j) v(j) = static_cast<float>(rng.uniform() * 2 - 1);
    std::vector<RankedEntry> expect;
    for (int i = 0; i < 1000; ++i) {
      double s = 0;
      for (int j = 0; j < 16; ++j) s += static_cast<double>(idx.vectors(i, j)) * v(j);
      expect.push_back({idx.doc_ids[i], s});
    }
    expect = sort_all(expect);
    const auto got = nn_search(idx, std::span<const float>(v.data(), v.size()), 100);
    ASSERT_EQ(got.entries.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) {
      EXPECT_EQ(got.entries[i].doc_id, expect[i].doc_id);
      EXPECT_NEAR(got.entries[i].score, expect[i].score, 1e-9);
    }
  }
}

TEST(IndexFiles, RoundTripAndErrors) {
  const auto bm = build_bm25({{"d1", ids({5, 6})}, {"d2", ids({6, 7})}});
  VectorIndex vi;
  vi.doc_ids = {"d1", "d2"};
  vi.vectors = Mat<float>::Random(2, 4);
  vi.source_tag = "clean";
  const auto pb = temp_path("bm.idx"), pv = temp_path("v.idx");
  save_index(pb, bm);
  save_index(pv, vi);
  EXPECT_EQ(load_bm25_index(pb), bm);
  EXPECT_EQ(load_vector_index(pv), vi);
  EXPECT_EQ(peek_index_kind(pb), IndexKind::bm25);
  EXPECT_THROW(load_vector_index(pb), KindError);
  EXPECT_THROW(load_bm25_index(pv), KindError);

  std::ifstream in(pv, std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  in.close();
  std::string flipped = bytes;
  flipped[flipped.size() - 10] ^= 0x11;
  std::ofstream(pv, std::ios::binary) << flipped;
  EXPECT_THROW(load_vector_index(pv), CorruptionError);
  std::string versioned = bytes;
  versioned[8] = static_cast<char>(versioned[8] + 1);
  std::ofstream(pv, std::ios::binary) << versioned;
  EXPECT_THROW(load_vector_index(pv), VersionError);
  std::filesystem::remove(pb);
  std::filesystem::remove(pv);
}
