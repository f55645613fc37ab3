#pragma once

// Run files, MRR, paired significance tests and latency measurement.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scr/index.hpp"

namespace scr {

struct RunFile {
  std::string system_tag = "run";
  std::map<std::string, RankedList> rankings;  // query_id -> list
  std::map<std::string, std::string> metadata;
  bool operator==(const RunFile&) const = default;
};

// TREC format: "query_id Q0 doc_id rank score system_tag", rank from 1.
// Scores are written with 17 significant digits so they read back exactly.
std::string format_run(const RunFile& run);
void write_run(const std::filesystem::path& path, const RunFile& run);
RunFile parse_run(const std::string& text);
RunFile read_run(const std::filesystem::path& path);

// Qrels files: "query_id 0 doc_id 1".
void write_qrels(const std::filesystem::path& path, const std::map<std::string, std::string>& qrels);
std::map<std::string, std::string> read_qrels(const std::filesystem::path& path);

// 1/rank of the relevant document, 0 when it is not in the list. With
// `queries` given, every listed query must be present in the run.
std::map<std::string, double> reciprocal_ranks(const RunFile& run, const std::map<std::string, std::string>& qrels,
                                               const std::vector<std::string>* queries = nullptr);
double mrr(const RunFile& run, const std::map<std::string, std::string>& qrels,
           const std::vector<std::string>* queries = nullptr);
double mean(const std::vector<double>& xs);

struct TTestResult {
  double t = 0.0;  // NaN when undefined
  double p = 1.0;
  std::size_t df = 0;
  bool degenerate = false;  // zero variance with nonzero mean difference
};

// Two-tailed paired t-test on a_i - b_i.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);
// Two-tailed p for a t statistic with df degrees of freedom.
double student_t_two_tailed_p(double t, double df);

struct Comparison {
  std::size_t improved = 0;
  std::size_t regressed = 0;
  std::size_t unchanged = 0;
  double mean_improvement = 0.0;  // among improved queries
  double mean_regression = 0.0;   // among regressed queries (positive number)
  double mrr_a = 0.0;
  double mrr_b = 0.0;
  TTestResult ttest;
};

// Per-query comparison of run a against baseline b over the query set.
Comparison compare_runs(const RunFile& a, const RunFile& b, const std::map<std::string, std::string>& qrels,
                        const std::vector<std::string>& queries);

struct TimingResult {
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double coefficient_of_variation = 0.0;
  std::size_t queries = 0;
};

// Calls search(i) once per query index after `warmup` untimed calls.
TimingResult timing_harness(const std::function<void(std::size_t)>& search, std::size_t num_queries,
                            std::size_t warmup = 5);

}  // namespace scr
