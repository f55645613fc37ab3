#pragma once

// The comparison grid: transcript quality per system and
// N-best fusion for the dual encoders, pooled over seeds.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "scr/corpus.hpp"
#include "scr/pipeline.hpp"

namespace scr {

// Adds "std" and "semi" (1-best calibrated, N-best depth kMaxNBest) and
// "oracle" (oracle-transcript calibrated) conditions to a bundle.
void add_default_conditions(CorpusBundle& bundle, std::uint64_t seed, std::size_t samples = kDefaultSamples);

struct GridConfig {
  std::filesystem::path corpus;  // exported bundle; empty: generate one
  CorpusOptions corpus_options;
  std::size_t condition_samples = kDefaultSamples;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  TrainConfig train;  // model, ance, epochs, learning rate are set per system
  std::size_t dr_epochs = 10;
  std::size_t rerank_epochs = 20;
  std::vector<std::string> systems{"bm25", "rerank", "dr", "dr-ance"};
  std::vector<std::string> conditions{"clean", "oracle", "semi", "std"};
  std::vector<std::string> fusion_models{"dr", "dr-ance"};
  std::vector<std::string> fusion_conditions{"std", "semi"};
  std::vector<std::size_t> n_values{1, 2, 5, 10, 20};
  std::vector<std::string> fusion_modes{"early", "late"};
  std::size_t rerank_depth = 100;  // BM25 candidates re-scored per query
  std::size_t depth = 1000;        // run depth
  // Checkpoints are cached here and run files written here when set.
  std::filesystem::path work_dir;

  static GridConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct GridCell {
  bool present = false;
  std::string absent_reason;
  double mrr = 0.0;                  // mean over seeds
  std::vector<double> seed_mrr;
  std::vector<double> rr;            // per (seed, eval query), seed-major
  std::string baseline;              // label of the compared cell; empty when none
  double t = 0.0;
  double p = 1.0;
  double percent_change = 0.0;       // vs baseline, fusion table only
  std::string mark() const;          // "", "*" or "**"
};

struct GapClosure {
  std::string model;
  std::string condition;
  double clean = 0.0;
  double one_best = 0.0;
  double best_fused = 0.0;
  std::string best_fused_cell;
  double gap = 0.0;          // clean - one_best
  double fused_gap = 0.0;    // clean - best_fused
  double ratio = 0.0;        // fused_gap / gap
  double reduction = 0.0;    // 1 - ratio
};

struct GridReport {
  GridConfig config;
  std::vector<std::string> eval_queries;
  // table1: system -> condition -> cell.
  std::map<std::string, std::map<std::string, GridCell>> table1;
  // table2: "model/condition" -> "mode:N" -> cell (N=1 is the 1-best row).
  std::map<std::string, std::map<std::string, GridCell>> table2;
  std::vector<GapClosure> gaps;
  double seconds = 0.0;

  std::string text() const;
  nlohmann::json json() const;
};

std::string table2_key(const std::string& mode, std::size_t n);

// Relative change of `value` over `baseline` in percent (0 when baseline is 0).
double percent_change(double baseline, double value);

using ProgressFn = std::function<void(const std::string&)>;

// Runs every cell. A cell whose inputs are missing (for example a condition
// the bundle lacks) is reported absent and the grid carries on.
GridReport run_experiment_grid(const GridConfig& config, const ProgressFn& progress = {});
GridReport run_experiment_grid(const GridConfig& config, const CorpusBundle& bundle, const ProgressFn& progress = {});

}  // namespace scr
