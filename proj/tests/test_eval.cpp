#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "scr/eval.hpp"
#include "scr/grid.hpp"

using namespace scr;

namespace {

RankedList list(const std::string& q, std::vector<std::string> docs) {
  RankedList l;
  l.query_id = q;
  double s = 10.0;
  for (auto& d : docs) l.entries.push_back({d, s--});
  return l;
}

// Run where query qi ranks its relevant doc at ranks[i] (0: absent).
RunFile run_with_ranks(const std::vector<int>& ranks, std::map<std::string, std::string>& qrels) {
  RunFile run;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const std::string q = "q" + std::to_string(i);
    qrels[q] = "rel";
    std::vector<std::string> docs;
    for (int r = 1; r <= 5; ++r) docs.push_back(r == ranks[i] ? "rel" : "x" + std::to_string(r));
    run.rankings[q] = list(q, docs);
  }
  return run;
}

}  // namespace

TEST(Mrr, HandExamples) {
  std::map<std::string, std::string> qrels;
  const auto run = run_with_ranks({1, 2, 4}, qrels);
  EXPECT_NEAR(mrr(run, qrels), (1.0 + 0.5 + 0.25) / 3.0, 1e-12);
  EXPECT_NEAR(mrr(run, qrels), 0.583333, 1e-6);
  const auto rr = reciprocal_ranks(run, qrels);
  EXPECT_EQ(rr.at("q2"), 0.25);
  std::map<std::string, std::string> q2;
  EXPECT_EQ(mrr(run_with_ranks({1, 1, 1, 1}, q2), q2), 1.0);
  std::map<std::string, std::string> q3;
  EXPECT_EQ(reciprocal_ranks(run_with_ranks({0}, q3), q3).at("q0"), 0.0);
}

TEST(Mrr, MissingQueryIsProtocolError) {
  std::map<std::string, std::string> qrels;
  const auto run = run_with_ranks({1, 2}, qrels);
  const std::vector<std::string> queries{"q0", "q1", "q7"};
  EXPECT_THROW(mrr(run, qrels, &queries), ProtocolError);
}

TEST(RunFiles, RoundTrip) {
  RunFile run;
  run.system_tag = "dr";
  run.rankings["q1"] = list("q1", {"a", "b", "c"});
  run.rankings["q1"].entries[1].score = 0.1 + 0.2;
  run.rankings["q2"] = list("q2", {"c"});
  const std::string text = format_run(run);
  EXPECT_EQ(text.substr(0, text.find('\n')), "q1 Q0 a 1 10 dr");
  const auto back = parse_run(text);
  EXPECT_EQ(back.rankings, run.rankings);
  EXPECT_EQ(format_run(back), text);
  EXPECT_THROW(parse_run("q1 Q0 a one 1 dr\n"), ParseError);
}

TEST(Qrels, RoundTrip) {
  const auto p = std::filesystem::temp_directory_path() / ("scr_qrels_" + std::to_string(::getpid()));
  const std::map<std::string, std::string> q{{"q1", "d3"}, {"q2", "d1"}};
  write_qrels(p, q);
  EXPECT_EQ(read_qrels(p), q);
  std::filesystem::remove(p);
}

TEST(TTest, HandExample) {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4}, b{0, 0, 0, 0};
  const auto r = paired_ttest(a, b);
  // mean 0.25, sd sqrt(0.05/3) = 0.1291, t = 0.25 / (0.1291 / 2).
  EXPECT_NEAR(r.t, 0.25 / (std::sqrt(0.05 / 3.0) / 2.0), 1e-12);
  EXPECT_NEAR(r.t, 3.873, 1e-3);
  EXPECT_EQ(r.df, 3u);
  EXPECT_NEAR(r.p, 0.0305, 1e-3);
  EXPECT_NEAR(r.p, oracle::t_two_tailed_p(r.t, 3), 1e-6);
}

TEST(TTest, ZeroVariance) {
  const std::vector<double> a{0.5, 0.25, 1.0};
  const auto same = paired_ttest(a, a);
  EXPECT_TRUE(std::isnan(same.t));
  EXPECT_EQ(same.p, 1.0);
  EXPECT_FALSE(same.degenerate);
  const std::vector<double> b{0.25, 0.0, 0.75};
  const auto shifted = paired_ttest(a, b);
  EXPECT_TRUE(shifted.degenerate);
}

TEST(TTest, MatchesQuadratureOracle) {
  Rng rng(17);
  for (int it = 0; it < 100; ++it) {
    const std::size_t n = 3 + rng.below(40);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform() * 0.9;
    }
    const auto r = paired_ttest(a, b);
    EXPECT_NEAR(r.p, oracle::t_two_tailed_p(r.t, static_cast<double>(n - 1)), 1e-6) << "n=" << n << " t=" << r.t;
  }
}

TEST(Compare, Counts) {
  std::map<std::string, std::string> qrels;
  const auto a = run_with_ranks({1, 3, 2}, qrels);
  const auto same = compare_runs(a, a, qrels, {"q0", "q1", "q2"});
  EXPECT_EQ(same.improved, 0u);
  EXPECT_EQ(same.regressed, 0u);
  EXPECT_EQ(same.unchanged, 3u);
  std::map<std::string, std::string> q2;
  const auto b = run_with_ranks({1, 3, 1}, q2);
  const auto c = compare_runs(b, a, qrels, {"q0", "q1", "q2"});
  EXPECT_EQ(c.improved, 1u);
  EXPECT_NEAR(c.mean_improvement, 0.5, 1e-12);
  EXPECT_EQ(c.regressed, 0u);
  RunFile partial = b;
  partial.rankings.erase("q2");
  EXPECT_THROW(compare_runs(partial, a, qrels, {"q0", "q1", "q2"}), ProtocolError);
}

TEST(Timing, Harness) {
  std::size_t calls = 0;
  const auto t = timing_harness([&](std::size_t) { ++calls; }, 50, 2);
  EXPECT_EQ(t.queries, 50u);
  EXPECT_GE(calls, 50u);
  EXPECT_GE(t.mean_seconds, 0.0);
}

TEST(Grid, PercentChangeFormula) {
  // Baseline 34.81, fused 38.20 gives +9.74 %.
  EXPECT_NEAR(percent_change(0.3481, 0.3820), 9.74, 0.005);
  EXPECT_NEAR(percent_change(34.81, 38.20), 9.74, 0.005);
  GridCell c;
  c.present = true;
  c.baseline = "x";
  c.p = 0.03;
  EXPECT_EQ(c.mark(), "*");
  c.p = 0.009;
  EXPECT_EQ(c.mark(), "**");
  c.p = 0.2;
  EXPECT_EQ(c.mark(), "");
  EXPECT_EQ(table2_key("late", 20), "late:20");
}

TEST(Grid, MissingConditionCellsAreAbsent) {
  GridConfig cfg;
  cfg.corpus_options.num_docs = 60;
  cfg.corpus_options.vocab_size = 300;
  cfg.corpus_options.eval_queries = 15;
  cfg.corpus_options.validation_queries = 15;
  cfg.seeds = {1};
  cfg.systems = {"bm25"};
  cfg.conditions = {"clean", "std"};
  cfg.fusion_models = {};
  const CorpusBundle b = generate_corpus(cfg.corpus_options);  // no noise conditions
  const auto r = run_experiment_grid(cfg, b);
  EXPECT_TRUE(r.table1.at("bm25").at("clean").present);
  EXPECT_FALSE(r.table1.at("bm25").at("std").present);
  EXPECT_NE(r.text().find("absent"), std::string::npos);
  EXPECT_FALSE(r.json().at("table1").at("bm25").at("std").at("present").get<bool>());
}
