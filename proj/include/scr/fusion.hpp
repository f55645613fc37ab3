#pragma once

// N-best fusion: early fusion averages aligned token embeddings into one
// document input, late fusion sums scores across per-rank indexes.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "scr/corpus.hpp"
#include "scr/encoder.hpp"
#include "scr/index.hpp"
#include "scr/text.hpp"

namespace scr {

enum class FusionMode { none, early, late };
enum class LateScope { exhaustive, topk_union };

std::string to_string(FusionMode mode);
std::string to_string(LateScope scope);
FusionMode parse_fusion_mode(const std::string& s);
LateScope parse_late_scope(const std::string& s);

struct FusionConfig {
  FusionMode mode = FusionMode::none;
  std::size_t n = 1;
  LateScope scope = LateScope::exhaustive;
  std::size_t topk_per_index = 1000;

  void validate() const;
};

// Embedding-layer fusion of an aligned frame: "[CLS] columns [SEP]" with each
// column the mean of its rows' token embeddings. The frame is truncated to
// max_len - 2 columns.
template <typename T>
EmbeddedSeq<T> early_fuse(const AlignedFrame& frame, const EncoderParams<T>& params);

// The encoder input early_fuse embeds, for callers that need a forward tape.
SequenceInput early_fused_input(const AlignedFrame& frame, std::size_t max_len);

// Sums inner products over the N indexes. Per document the N scores are
// added in ascending order, so the result does not depend on index order.
RankedList late_fuse_search(const std::vector<const VectorIndex*>& indexes, std::span<const float> q, std::size_t k,
                            LateScope scope = LateScope::exhaustive, std::size_t topk_per_index = 1000);

// Which transcript of each document an encoder sees.
struct DocView {
  std::string condition = "clean";  // "clean" or a condition name
  FusionMode mode = FusionMode::none;
  std::size_t n = 1;         // hypotheses fused (early)
  std::size_t hyp_rank = 0;  // hypothesis used when mode is none or late

  std::string tag() const;
};

// Token sequence of hypothesis `rank`; lists shorter than rank + 1 repeat
// their last hypothesis.
TokenSeq hypothesis_seq(const NBestSet& set, std::size_t rank, const Vocabulary& vocab);

// Plain text of one document under a view (mode none/late).
std::map<std::string, TokenSeq> doc_texts(const CorpusBundle& bundle, const Vocabulary& vocab, const DocView& view);

// Framed encoder inputs for every document under a view. A document without
// an N-best set falls back to its clean text and is reported in `warnings`.
std::map<std::string, SequenceInput> doc_inputs(const CorpusBundle& bundle, const Vocabulary& vocab,
                                                const DocView& view, std::size_t max_len,
                                                std::vector<std::string>* warnings = nullptr);

// Training inputs of one example, encoded the same way the index encodes
// documents of the view.
struct FusedBatch {
  SequenceInput positive;
  std::vector<SequenceInput> negatives;
};
FusedBatch fuse_training_batch(const std::map<std::string, SequenceInput>& inputs, const std::string& positive,
                               const std::vector<std::string>& negatives);

}  // namespace scr
