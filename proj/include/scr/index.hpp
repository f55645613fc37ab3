#pragma once

// BM25 inverted index and exact dense vector index.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scr/encoder.hpp"
#include "scr/text.hpp"

namespace scr {

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

// Entries ordered by score descending, ties by doc_id ascending.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
  bool operator==(const RankedList&) const = default;
};

bool canonical_before(const RankedEntry& a, const RankedEntry& b);
// Sorts into canonical order and keeps the first k.
void rank_top_k(std::vector<RankedEntry>& entries, std::size_t k);

struct Posting {
  std::uint32_t doc = 0;  // position in InvertedIndex::doc_ids
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct InvertedIndex {
  std::map<TokenId, std::vector<Posting>> postings;
  std::vector<std::string> doc_ids;  // ascending
  std::vector<std::uint32_t> doc_len;
  double avg_doc_len = 0.0;
  std::size_t num_docs = 0;
  double k1 = 1.2;
  double b = 0.75;

  std::size_t position(const std::string& doc_id) const;  // LookupError if absent
  double idf(TokenId term) const;
  bool operator==(const InvertedIndex&) const = default;
};

// Specials (including [UNK]) are never indexed or matched.
InvertedIndex build_bm25(const std::map<std::string, TokenSeq>& docs);
// Repeated query terms contribute once per occurrence.
double bm25_score(const InvertedIndex& index, const TokenSeq& query, const std::string& doc_id);
// Candidates are the documents sharing at least one term with the query.
RankedList bm25_search(const InvertedIndex& index, const TokenSeq& query, std::size_t k);

struct VectorIndex {
  std::vector<std::string> doc_ids;  // ascending, unique
  Mat<float> vectors;                // one row per doc
  std::string source_tag;
  bool operator==(const VectorIndex&) const = default;
};

// Encodes one framed input per document (rows follow the map's ascending
// order). Documents are encoded in parallel.
VectorIndex build_vector_index(const std::map<std::string, SequenceInput>& inputs, const EncoderParams<float>& params,
                               const std::string& source_tag);

// Exact inner-product top-k.
RankedList nn_search(const VectorIndex& index, std::span<const float> q, std::size_t k);
// Inner products of q with every row, in row order.
std::vector<double> all_scores(const VectorIndex& index, std::span<const float> q);

inline constexpr std::uint32_t kIndexVersion = 1;
enum class IndexKind : std::uint8_t { bm25 = 1, dense = 2 };

void save_index(const std::filesystem::path& path, const InvertedIndex& index);
void save_index(const std::filesystem::path& path, const VectorIndex& index);
IndexKind peek_index_kind(const std::filesystem::path& path);
InvertedIndex load_bm25_index(const std::filesystem::path& path);
VectorIndex load_vector_index(const std::filesystem::path& path);

}  // namespace scr
