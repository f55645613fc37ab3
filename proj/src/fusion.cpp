#include "scr/fusion.hpp"

#include <algorithm>
#include <iostream>

namespace scr {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::none: return "none";
    case FusionMode::early: return "early";
    case FusionMode::late: return "late";
  }
  return "none";
}

std::string to_string(LateScope scope) { return scope == LateScope::exhaustive ? "exhaustive" : "topk_union"; }

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "early") return FusionMode::early;
  if (s == "late") return FusionMode::late;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

LateScope parse_late_scope(const std::string& s) {
  if (s == "exhaustive") return LateScope::exhaustive;
  if (s == "topk_union") return LateScope::topk_union;
  throw ConfigError("unknown late-fusion scope '" + s + "'");
}

void FusionConfig::validate() const {
  if (n < 1 || n > kMaxNBest) throw ConfigError("fusion: n must lie in [1, 20]");
  if (topk_per_index < 1) throw ConfigError("fusion: topk_per_index must be >= 1");
}

SequenceInput early_fused_input(const AlignedFrame& frame, std::size_t max_len) {
  if (frame.rows.empty()) throw AlignmentError("early_fuse: empty frame");
  for (const auto& row : frame.rows)
    if (row.size() != frame.columns()) throw AlignmentError("early_fuse: ragged frame");
  return frame_columns(truncate_frame(frame, max_len - 2), max_len);
}

template <typename T>
EmbeddedSeq<T> early_fuse(const AlignedFrame& frame, const EncoderParams<T>& params) {
  return embed(params, early_fused_input(frame, params.config.max_len));
}

template EmbeddedSeq<float> early_fuse(const AlignedFrame&, const EncoderParams<float>&);
template EmbeddedSeq<double> early_fuse(const AlignedFrame&, const EncoderParams<double>&);

RankedList late_fuse_search(const std::vector<const VectorIndex*>& indexes, std::span<const float> q, std::size_t k,
                            LateScope scope, std::size_t topk_per_index) {
  if (indexes.empty()) throw ConfigError("late_fuse_search: no indexes");
  if (k < 1 || topk_per_index < 1) throw ConfigError("late_fuse_search: k and topk_per_index must be >= 1");
  const VectorIndex& first = *indexes.front();

  // Row of each candidate document in every index.
  std::vector<std::string> candidates;
  std::vector<std::vector<std::size_t>> rows(indexes.size());
  if (scope == LateScope::exhaustive) {
    for (const auto* idx : indexes)
      if (idx->doc_ids != first.doc_ids) throw CoverageError("late_fuse_search: indexes cover different documents");
    candidates = first.doc_ids;
    for (auto& r : rows) {
      r.resize(candidates.size());
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
    }
  } else {
    for (const auto* idx : indexes)
      for (const auto& e : nn_search(*idx, q, topk_per_index).entries) candidates.push_back(e.doc_id);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (std::size_t n = 0; n < indexes.size(); ++n) {
      const auto& ids = indexes[n]->doc_ids;
      for (const auto& c : candidates) {
        auto it = std::lower_bound(ids.begin(), ids.end(), c);
        if (it == ids.end() || *it != c)
          throw CoverageError("late_fuse_search: " + c + " missing from index " + std::to_string(n));
        rows[n].push_back(static_cast<std::size_t>(it - ids.begin()));
      }
    }
  }

  std::vector<std::vector<double>> per_index(indexes.size());
  parallel_for(indexes.size(), [&](std::size_t n) {
    const auto& idx = *indexes[n];
    if (q.size() != static_cast<std::size_t>(idx.vectors.cols()))
      throw ShapeError("late_fuse_search: query dimension mismatch with index " + std::to_string(n));
    per_index[n].resize(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c)
      per_index[n][c] = similarity(
          q, std::span<const float>(idx.vectors.row(static_cast<Eigen::Index>(rows[n][c])).data(), q.size()));
  });

  RankedList out;
  out.entries.reserve(candidates.size());
  std::vector<double> parts(indexes.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (std::size_t n = 0; n < indexes.size(); ++n) parts[n] = per_index[n][c];
    std::sort(parts.begin(), parts.end());
    double total = 0.0;
    for (double p : parts) total += p;
    out.entries.push_back({candidates[c], total});
  }
  rank_top_k(out.entries, k);
  return out;
}

std::string DocView::tag() const {
  if (condition == "clean") return "clean";
  switch (mode) {
    case FusionMode::none: return condition + (hyp_rank == 0 ? "" : "_hyp" + std::to_string(hyp_rank));
    case FusionMode::early: return condition + "_early" + std::to_string(n);
    case FusionMode::late: return condition + "_hyp" + std::to_string(hyp_rank);
  }
  return condition;
}

TokenSeq hypothesis_seq(const NBestSet& set, std::size_t rank, const Vocabulary& vocab) {
  if (set.hypotheses.empty()) throw LookupError("hypothesis_seq: empty N-best set for " + set.doc_id);
  const std::size_t r = std::min(rank, set.hypotheses.size() - 1);
  TokenSeq seq = tokenize(set.hypotheses[r], vocab, SourceKind::hyp);
  seq.hyp_rank = static_cast<int>(r);
  return seq;
}

namespace {

const Condition* find_condition(const CorpusBundle& bundle, const DocView& view) {
  if (view.condition == "clean") return nullptr;
  auto it = bundle.conditions.find(view.condition);
  if (it == bundle.conditions.end()) throw LookupError("unknown transcript condition '" + view.condition + "'");
  return &it->second;
}

}  // namespace

std::map<std::string, TokenSeq> doc_texts(const CorpusBundle& bundle, const Vocabulary& vocab, const DocView& view) {
  const Condition* cond = find_condition(bundle, view);
  std::map<std::string, TokenSeq> out;
  for (const auto& d : bundle.docs) {
    if (!cond) {
      out.emplace(d.doc_id, tokenize(d.clean_tokens, vocab));
      continue;
    }
    auto it = cond->nbest.find(d.doc_id);
    out.emplace(d.doc_id, it == cond->nbest.end() ? tokenize(d.clean_tokens, vocab)
                                                  : hypothesis_seq(it->second, view.hyp_rank, vocab));
  }
  return out;
}

std::map<std::string, SequenceInput> doc_inputs(const CorpusBundle& bundle, const Vocabulary& vocab,
                                                const DocView& view, std::size_t max_len,
                                                std::vector<std::string>* warnings) {
  const Condition* cond = find_condition(bundle, view);
  std::map<std::string, SequenceInput> out;
  for (const auto& d : bundle.docs) {
    const NBestSet* set = nullptr;
    if (cond) {
      auto it = cond->nbest.find(d.doc_id);
      if (it != cond->nbest.end() && !it->second.hypotheses.empty()) set = &it->second;
      else if (warnings) warnings->push_back(d.doc_id + ": no N-best set in " + view.condition + ", using clean text");
    }
    if (!set) {
      out.emplace(d.doc_id, frame_text(tokenize(d.clean_tokens, vocab), max_len));
    } else if (view.mode == FusionMode::early) {
      std::vector<TokenSeq> hyps;
      const std::size_t n = std::min(view.n, set->hypotheses.size());
      for (std::size_t r = 0; r < n; ++r) hyps.push_back(hypothesis_seq(*set, r, vocab));
      out.emplace(d.doc_id, early_fused_input(align_nbest(hyps), max_len));
    } else {
      out.emplace(d.doc_id, frame_text(hypothesis_seq(*set, view.hyp_rank, vocab), max_len));
    }
  }
  return out;
}

FusedBatch fuse_training_batch(const std::map<std::string, SequenceInput>& inputs, const std::string& positive,
                               const std::vector<std::string>& negatives) {
  auto get = [&](const std::string& id) -> const SequenceInput& {
    auto it = inputs.find(id);
    if (it == inputs.end()) throw LookupError("fuse_training_batch: no input for " + id);
    return it->second;
  };
  FusedBatch b;
  b.positive = get(positive);
  for (const auto& n : negatives) b.negatives.push_back(get(n));
  return b;
}

}  // namespace scr
