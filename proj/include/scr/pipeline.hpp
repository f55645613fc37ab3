#pragma once

// Training of the re-ranker and the dual encoder (optionally with ANCE
// negative refresh) and the end-to-end search paths.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scr/corpus.hpp"
#include "scr/encoder.hpp"
#include "scr/fusion.hpp"
#include "scr/index.hpp"
#include "scr/text.hpp"

namespace scr {

struct TrainExample {
  std::string query_id;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;
  std::size_t epoch_minted = 0;
  bool operator==(const TrainExample&) const = default;
};

// Query token sequences keyed by query id.
std::map<std::string, TokenSeq> query_seqs(const CorpusBundle& bundle, const Vocabulary& vocab);

// For each query: BM25 ranking minus the positive, first J in rank order,
// padded with uniformly drawn non-positive documents.
std::vector<TrainExample> mine_bm25_negatives(const CorpusBundle& bundle, const Vocabulary& vocab,
                                              const InvertedIndex& bm25, std::size_t J, std::uint64_t seed,
                                              const std::vector<std::string>& query_ids);

struct TrainConfig {
  std::string model = "dr";  // "rerank" | "dr"
  bool ance = false;
  DocView view;  // transcripts the documents are read from
  EncoderConfig encoder;
  std::size_t epochs = 10;
  // 0 selects the per-model preset: 1e-3 for the re-ranker, 5e-4 for DR.
  double learning_rate = 0.0;
  double weight_decay = 5e-5;
  // Fraction of all steps spent warming up linearly to learning_rate.
  double warmup_fraction = 0.1;
  bool linear_decay = true;
  std::size_t batch_size = 16;
  std::size_t negatives = 20;
  std::size_t ance_pool = 200;
  std::size_t validation_candidates = 100;
  std::uint64_t seed = 1;
  // Optional artefacts: best checkpoint and one JSON line per epoch.
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  bool verbose = false;

  void validate() const;
  double effective_learning_rate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double validation_metric = 0.0;
  std::string provenance;
  double seconds = 0.0;
};

struct TrainState {
  EncoderParams<float> params;       // best checkpoint
  EncoderParams<float> last_params;  // after the final epoch
  std::size_t epoch = 0;             // epochs completed
  std::size_t best_epoch = 0;
  double best_validation_metric = 0.0;
  std::filesystem::path best_checkpoint_path;
  std::uint64_t seed = 0;
  std::string provenance = "bm25";
  std::vector<TrainExample> examples;  // the pool used in the last epoch
  std::vector<EpochLog> log;
  CheckpointMeta meta;
};

// Shared inputs of one training run.
struct TrainingData {
  const CorpusBundle* bundle = nullptr;
  const Vocabulary* vocab = nullptr;
  const InvertedIndex* bm25 = nullptr;  // over the view's document text
};

TrainState train_reranker(const TrainingData& data, const TrainConfig& config);
TrainState train_dr(const TrainingData& data, const TrainConfig& config);

// Re-encodes every document with `params`, retrieves the top `pool` per
// training query and samples J negatives uniformly from it (positive
// excluded, topped up from `fallback` when short). Deterministic in
// (params, seed, epoch).
std::vector<TrainExample> ance_refresh(const EncoderParams<float>& params, const TrainingData& data,
                                       const DocView& view, const std::vector<TrainExample>& fallback,
                                       std::size_t epoch, std::size_t J, std::size_t pool, std::uint64_t seed);

// Validation metrics (the quantities that select checkpoints).
struct RerankValidation {
  std::vector<std::string> query_ids;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};
struct DrValidation {
  std::vector<std::string> query_ids;
  std::vector<std::vector<std::string>> candidates;  // positive first
};
RerankValidation mint_rerank_validation(const TrainingData& data);
DrValidation mint_dr_validation(const TrainingData& data, std::size_t candidates, std::uint64_t seed);
double rerank_validation_loss(const EncoderParams<float>& params, const TrainingData& data,
                              const std::map<std::string, TokenSeq>& docs, const RerankValidation& v);
double dr_validation_mrr(const EncoderParams<float>& params, const TrainingData& data,
                         const std::map<std::string, SequenceInput>& docs, const DrValidation& v);

// BM25 top-k re-scored by the cross-encoder. Result scores are re-rank scores.
RankedList search_rerank(const TokenSeq& query, const InvertedIndex& bm25, const EncoderParams<float>& params,
                         const std::map<std::string, TokenSeq>& docs, std::size_t k = 1000);

// Encodes the query once, then nn_search (none/early: one index) or
// late_fuse_search (late: one index per hypothesis rank).
RankedList search_dr(const TokenSeq& query, const std::vector<const VectorIndex*>& indexes,
                     const EncoderParams<float>& params, const FusionConfig& fusion, std::size_t k);

RowVec<float> encode_query(const EncoderParams<float>& params, const TokenSeq& query);

}  // namespace scr
