#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "scr/corpus.hpp"
#include "scr/eval.hpp"
#include "scr/pipeline.hpp"

using namespace scr;

namespace {

struct Fixture {
  CorpusBundle bundle;
  Vocabulary vocab;
  InvertedIndex bm25;
  TrainingData data() const { return {&bundle, &vocab, &bm25}; }
};

Fixture make_fixture(std::uint64_t seed = 5) {
  Fixture f;
  CorpusOptions o;
  o.num_docs = 80;
  o.vocab_size = 400;
  o.seed = seed;
  o.eval_queries = 20;
  o.validation_queries = 20;
  f.bundle = generate_corpus(o);
  add_condition(f.bundle, "std", kStandardWer, WerMeasure::one_best, 3, 2, 40, 80);
  f.vocab = build_vocab(f.bundle);
  f.bm25 = build_bm25(doc_texts(f.bundle, f.vocab, DocView{}));
  return f;
}

TrainConfig small_train(const std::string& model) {
  TrainConfig c;
  c.model = model;
  c.epochs = 2;
  c.batch_size = 8;
  c.negatives = 5;
  c.ance_pool = 20;
  c.validation_candidates = 10;
  c.encoder.d_model = 16;
  c.encoder.n_heads = 2;
  c.encoder.d_ff = 32;
  c.encoder.max_len = 64;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("scr_pipe_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(MineNegatives, RankOrderAndExclusion) {
  const auto f = make_fixture();
  const auto qs = query_seqs(f.bundle, f.vocab);
  const auto ex = mine_bm25_negatives(f.bundle, f.vocab, f.bm25, 5, 1, f.bundle.split.train);
  ASSERT_EQ(ex.size(), f.bundle.split.train.size());
  for (const auto& e : ex) {
    EXPECT_EQ(e.negative_doc_ids.size(), 5u);
    EXPECT_EQ(std::count(e.negative_doc_ids.begin(), e.negative_doc_ids.end(), e.positive_doc_id), 0);
    EXPECT_EQ(std::set<std::string>(e.negative_doc_ids.begin(), e.negative_doc_ids.end()).size(), 5u);
    const auto ranked = bm25_search(f.bm25, qs.at(e.query_id), 1000);
    std::vector<std::string> expect;
    for (const auto& r : ranked.entries)
      if (r.doc_id != e.positive_doc_id && expect.size() < 5) expect.push_back(r.doc_id);
    // The first negatives follow BM25 rank order with the positive skipped.
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(e.negative_doc_ids[i], expect[i]);
  }
}

TEST(MineNegatives, UnmatchedQueryGetsRandomNegatives) {
  auto f = make_fixture();
  const std::string q = f.bundle.split.train.front();
  f.bundle.queries[q] = {"qqqqzzzz"};
  f.vocab = build_vocab(f.bundle);
  f.bm25 = build_bm25(doc_texts(f.bundle, f.vocab, DocView{}));
  const auto ex = mine_bm25_negatives(f.bundle, f.vocab, f.bm25, 7, 3, {q});
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].negative_doc_ids.size(), 7u);
  EXPECT_EQ(std::count(ex[0].negative_doc_ids.begin(), ex[0].negative_doc_ids.end(), ex[0].positive_doc_id), 0);
}

TEST(MineNegatives, CorpusTooSmall) {
  const auto f = make_fixture();
  EXPECT_THROW(mine_bm25_negatives(f.bundle, f.vocab, f.bm25, 80, 1, f.bundle.split.train), ConfigError);
}

TEST(Training, RerankDeterministicAndEpochCount) {
  const auto f = make_fixture();
  const auto dir = temp_dir("rr");
  auto c = small_train("rerank");
  c.checkpoint_path = dir / "a.ckpt";
  const auto a = train_reranker(f.data(), c);
  c.checkpoint_path = dir / "b.ckpt";
  const auto b = train_reranker(f.data(), c);
  EXPECT_EQ(a.epoch, 2u);
  EXPECT_EQ(a.log.size(), 2u);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(checkpoint_bytes(a.params, a.meta), checkpoint_bytes(b.params, b.meta));
  // The best checkpoint is the one with the recorded metric (validation loss, lower is better).
  double best = 1e300;
  for (const auto& e : a.log) best = std::min(best, e.validation_metric);
  EXPECT_EQ(a.best_validation_metric, best);
  CheckpointMeta meta;
  load_checkpoint(dir / "a.ckpt", &meta);
  EXPECT_EQ(meta.model, "rerank");
  std::filesystem::remove_all(dir);
}

TEST(Training, DrRecordsFusionAndIsDeterministic) {
  const auto f = make_fixture();
  const auto dir = temp_dir("dr");
  auto c = small_train("dr");
  c.view = DocView{.condition = "std", .mode = FusionMode::early, .n = 3};
  c.checkpoint_path = dir / "a.ckpt";
  const auto a = train_dr(f.data(), c);
  c.checkpoint_path = dir / "b.ckpt";
  const auto b = train_dr(f.data(), c);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  CheckpointMeta meta;
  load_checkpoint(dir / "a.ckpt", &meta);
  EXPECT_EQ(meta.fusion, "early");
  EXPECT_EQ(meta.n, 3u);
  double best = -1;
  for (const auto& e : a.log) best = std::max(best, e.validation_metric);
  EXPECT_EQ(a.best_validation_metric, best);
  EXPECT_EQ(a.log.size(), 2u);
  std::filesystem::remove_all(dir);
}

TEST(Training, ValidationCandidatesMintedOnce) {
  const auto f = make_fixture();
  const auto a = mint_dr_validation(f.data(), 10, 1);
  const auto b = mint_dr_validation(f.data(), 10, 1);
  EXPECT_EQ(a.candidates, b.candidates);
  EXPECT_EQ(a.query_ids, f.bundle.split.validation);
  for (std::size_t i = 0; i < a.query_ids.size(); ++i) {
    EXPECT_EQ(a.candidates[i].size(), 10u);
    EXPECT_EQ(a.candidates[i][0], f.bundle.qrels.at(a.query_ids[i]));
  }
  const auto r = mint_rerank_validation(f.data());
  EXPECT_EQ(r.query_ids.size(), f.bundle.split.validation.size());
  for (std::size_t i = 0; i < r.query_ids.size(); ++i) EXPECT_NE(r.positives[i], r.negatives[i]);
}

TEST(Training, AnceProvenanceAndRefresh) {
  const auto f = make_fixture();
  auto c = small_train("dr");
  c.ance = true;
  const auto st = train_dr(f.data(), c);
  ASSERT_EQ(st.log.size(), 2u);
  EXPECT_EQ(st.log[0].provenance, "bm25");
  EXPECT_EQ(st.log[1].provenance, "ance@1");
  for (const auto& e : st.examples) {
    EXPECT_EQ(e.negative_doc_ids.size(), 5u);
    EXPECT_EQ(std::count(e.negative_doc_ids.begin(), e.negative_doc_ids.end(), e.positive_doc_id), 0);
  }
  const auto fallback = mine_bm25_negatives(f.bundle, f.vocab, f.bm25, 5, 1, f.bundle.split.train);
  const auto r1 = ance_refresh(st.params, f.data(), DocView{}, fallback, 2, 5, 20, 9);
  const auto r2 = ance_refresh(st.params, f.data(), DocView{}, fallback, 2, 5, 20, 9);
  EXPECT_EQ(r1, r2);
  for (const auto& e : r1) {
    EXPECT_EQ(e.epoch_minted, 2u);
    EXPECT_EQ(std::count(e.negative_doc_ids.begin(), e.negative_doc_ids.end(), e.positive_doc_id), 0);
  }
  // A pool of one document cannot supply five negatives; the rest come from BM25.
  const auto topped = ance_refresh(st.params, f.data(), DocView{}, fallback, 2, 5, 1, 9);
  for (const auto& e : topped) EXPECT_EQ(e.negative_doc_ids.size(), 5u);
}

TEST(Search, RerankContracts) {
  const auto f = make_fixture();
  auto c = small_train("rerank");
  c.epochs = 1;
  const auto st = train_reranker(f.data(), c);
  const auto qs = query_seqs(f.bundle, f.vocab);
  const auto docs = doc_texts(f.bundle, f.vocab, DocView{});
  for (const auto& q : f.bundle.split.eval) {
    const auto top1 = search_rerank(qs.at(q), f.bm25, st.params, docs, 1);
    const auto bm = bm25_search(f.bm25, qs.at(q), 1);
    ASSERT_LE(top1.entries.size(), 1u);
    if (!bm.entries.empty()) {
      EXPECT_EQ(top1.entries[0].doc_id, bm.entries[0].doc_id);
      EXPECT_NEAR(top1.entries[0].score, rerank_score(st.params, qs.at(q), docs.at(bm.entries[0].doc_id)), 1e-6);
    }
    const auto top5 = search_rerank(qs.at(q), f.bm25, st.params, docs, 5);
    const auto bm5 = bm25_search(f.bm25, qs.at(q), 5);
    std::set<std::string> a, b;
    for (const auto& e : top5.entries) a.insert(e.doc_id);
    for (const auto& e : bm5.entries) b.insert(e.doc_id);
    EXPECT_EQ(a, b);
  }
}

TEST(Search, DrLateNeedsOneIndexPerHypothesis) {
  const auto f = make_fixture();
  EncoderConfig ec = small_train("dr").encoder;
  ec.vocab_size = f.vocab.size();
  const auto p = EncoderParams<float>::init(ec);
  const auto idx = build_vector_index(doc_inputs(f.bundle, f.vocab, DocView{}, ec.max_len), p, "clean");
  FusionConfig fc;
  fc.mode = FusionMode::late;
  fc.n = 3;
  const auto q = query_seqs(f.bundle, f.vocab).begin()->second;
  EXPECT_THROW(search_dr(q, {&idx}, p, fc, 10), ConfigError);
  const auto plain = search_dr(q, {&idx}, p, FusionConfig{}, 10);
  const auto v = encode_query(p, q);
  EXPECT_EQ(plain, [&] {
    auto r = nn_search(idx, std::span<const float>(v.data(), v.size()), 10);
    r.query_id = plain.query_id;
    return r;
  }());
}

TEST(EndToEnd, ByteIdenticalRunFiles) {
  const auto dir = temp_dir("e2e");
  auto once = [&](const std::string& name) {
    const auto f = make_fixture(11);
    auto c = small_train("dr");
    c.epochs = 1;
    const auto st = train_dr(f.data(), c);
    const auto idx =
        build_vector_index(doc_inputs(f.bundle, f.vocab, DocView{}, c.encoder.max_len), st.params, "clean");
    const auto qs = query_seqs(f.bundle, f.vocab);
    RunFile run;
    run.system_tag = "dr";
    for (const auto& q : f.bundle.split.eval) {
      auto l = search_dr(qs.at(q), {&idx}, st.params, FusionConfig{}, 1000);
      l.query_id = q;
      run.rankings[q] = l;
    }
    write_run(dir / name, run);
    return mrr(read_run(dir / name), f.bundle.qrels, &f.bundle.split.eval);
  };
  EXPECT_EQ(once("a.run"), once("b.run"));
  EXPECT_EQ(slurp(dir / "a.run"), slurp(dir / "b.run"));
  EXPECT_FALSE(slurp(dir / "a.run").empty());
  std::filesystem::remove_all(dir);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.model = "bert";
  EXPECT_THROW(c.validate(), ConfigError);
  c.model = "dr";
  c.warmup_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.warmup_fraction = 0.1;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 5e-4);
  c.model = "rerank";
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 1e-3);
  c.learning_rate = 3e-4;
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 3e-4);
}
