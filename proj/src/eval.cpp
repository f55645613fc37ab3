#include "scr/eval.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "scr/binio.hpp"

namespace scr {

std::string format_run(const RunFile& run) {
  std::string out;
  char score[64];
  for (const auto& [qid, list] : run.rankings) {
    std::size_t rank = 1;
    for (const auto& e : list.entries) {
      std::snprintf(score, sizeof score, "%.17g", e.score);
      out += qid + " Q0 " + e.doc_id + " " + std::to_string(rank++) + " " + score + " " + run.system_tag + "\n";
    }
  }
  return out;
}

void write_run(const std::filesystem::path& path, const RunFile& run) { write_file(path, format_run(run)); }

RunFile parse_run(const std::string& text) {
  RunFile run;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> last_rank;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string qid, q0, doc, score_text, tag;
    std::size_t rank = 0;
    if (!(ls >> qid >> q0 >> doc >> rank >> score_text >> tag))
      throw ParseError("run file line " + std::to_string(lineno) + ": expected 6 fields");
    char* end = nullptr;
    const double score = std::strtod(score_text.c_str(), &end);
    if (end == score_text.c_str() || *end != '\0')
      throw ParseError("run file line " + std::to_string(lineno) + ": bad score '" + score_text + "'");
    if (rank != ++last_rank[qid])
      throw ParseError("run file line " + std::to_string(lineno) + ": ranks of " + qid + " must be 1, 2, ...");
    run.system_tag = tag;
    auto& list = run.rankings[qid];
    list.query_id = qid;
    list.entries.push_back({doc, score});
  }
  return run;
}

RunFile read_run(const std::filesystem::path& path) { return parse_run(read_file(path)); }

void write_qrels(const std::filesystem::path& path, const std::map<std::string, std::string>& qrels) {
  std::string out;
  for (const auto& [q, d] : qrels) out += q + " 0 " + d + " 1\n";
  write_file(path, out);
}

std::map<std::string, std::string> read_qrels(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string q, zero, d;
    int rel = 0;
    if (!(ls >> q >> zero >> d >> rel)) throw ParseError("qrels line " + std::to_string(lineno));
    if (rel <= 0) continue;
    if (!out.emplace(q, d).second) throw ProtocolError("qrels: more than one relevant document for " + q);
  }
  return out;
}

std::map<std::string, double> reciprocal_ranks(const RunFile& run, const std::map<std::string, std::string>& qrels,
                                               const std::vector<std::string>* queries) {
  std::vector<std::string> qs;
  if (queries) {
    qs = *queries;
  } else {
    for (const auto& [q, list] : run.rankings) qs.push_back(q);
  }
  std::map<std::string, double> out;
  for (const auto& q : qs) {
    auto rel = qrels.find(q);
    if (rel == qrels.end()) throw ProtocolError("no relevance judgement for query " + q);
    auto it = run.rankings.find(q);
    if (it == run.rankings.end()) throw ProtocolError("query " + q + " missing from run");
    double rr = 0.0;
    const auto& entries = it->second.entries;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].doc_id == rel->second) {
        rr = 1.0 / static_cast<double>(i + 1);
        break;
      }
    out[q] = rr;
  }
  return out;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double mrr(const RunFile& run, const std::map<std::string, std::string>& qrels,
           const std::vector<std::string>* queries) {
  const auto rr = reciprocal_ranks(run, qrels, queries);
  if (rr.empty()) throw ProtocolError("mrr: no queries");
  std::vector<double> v;
  for (const auto& [q, r] : rr) v.push_back(r);
  return mean(v);
}

double student_t_two_tailed_p(double t, double df) {
  if (!(df > 0)) throw DomainError("student_t_two_tailed_p: df must be positive");
  if (std::isinf(t)) return 0.0;
  return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ProtocolError("paired_ttest: samples differ in length");
  if (a.size() < 2) throw DomainError("paired_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    r.t = std::numeric_limits<double>::quiet_NaN();
    const bool all_zero = std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; });
    r.p = all_zero ? 1.0 : 0.0;
    r.degenerate = !all_zero;
    return r;
  }
  r.t = m / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_tailed_p(r.t, static_cast<double>(r.df));
  return r;
}

Comparison compare_runs(const RunFile& a, const RunFile& b, const std::map<std::string, std::string>& qrels,
                        const std::vector<std::string>& queries) {
  const std::set<std::string> split(queries.begin(), queries.end());
  for (const auto* run : {&a, &b})
    for (const auto& [q, list] : run->rankings)
      if (!split.count(q))
        throw ProtocolError("compare_runs: run contains query " + q + " outside the evaluated split");
  const auto ra = reciprocal_ranks(a, qrels, &queries);
  const auto rb = reciprocal_ranks(b, qrels, &queries);
  Comparison c;
  std::vector<double> va, vb;
  double up = 0.0, down = 0.0;
  for (const auto& q : queries) {
    const double x = ra.at(q), y = rb.at(q);
    va.push_back(x);
    vb.push_back(y);
    if (x > y) {
      ++c.improved;
      up += x - y;
    } else if (x < y) {
      ++c.regressed;
      down += y - x;
    } else {
      ++c.unchanged;
    }
  }
  c.mean_improvement = c.improved ? up / static_cast<double>(c.improved) : 0.0;
  c.mean_regression = c.regressed ? down / static_cast<double>(c.regressed) : 0.0;
  c.mrr_a = mean(va);
  c.mrr_b = mean(vb);
  if (queries.size() >= 2) c.ttest = paired_ttest(va, vb);
  return c;
}

TimingResult timing_harness(const std::function<void(std::size_t)>& search, std::size_t num_queries,
                            std::size_t warmup) {
  if (num_queries == 0) throw ConfigError("timing_harness: no queries");
  for (std::size_t i = 0; i < std::min(warmup, num_queries); ++i) search(i);
  std::vector<double> secs(num_queries);
  for (std::size_t i = 0; i < num_queries; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    search(i);
    secs[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  TimingResult r;
  r.queries = num_queries;
  r.mean_seconds = mean(secs);
  double ss = 0.0;
  for (double s : secs) ss += (s - r.mean_seconds) * (s - r.mean_seconds);
  r.stddev_seconds = num_queries > 1 ? std::sqrt(ss / static_cast<double>(num_queries - 1)) : 0.0;
  r.coefficient_of_variation = r.mean_seconds > 0 ? r.stddev_seconds / r.mean_seconds : 0.0;
  return r;
}

}  // namespace scr
