#include "scr/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "scr/binio.hpp"

namespace scr {

bool canonical_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

void rank_top_k(std::vector<RankedEntry>& entries, std::size_t k) {
  if (k < entries.size()) {
    std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k), entries.end(),
                      canonical_before);
    entries.resize(k);
  } else {
    std::sort(entries.begin(), entries.end(), canonical_before);
  }
}

// ---------------------------------------------------------------------------
// BM25

std::size_t InvertedIndex::position(const std::string& doc_id) const {
  auto it = std::lower_bound(doc_ids.begin(), doc_ids.end(), doc_id);
  if (it == doc_ids.end() || *it != doc_id) throw LookupError("unknown doc_id '" + doc_id + "'");
  return static_cast<std::size_t>(it - doc_ids.begin());
}

double InvertedIndex::idf(TokenId term) const {
  auto it = postings.find(term);
  const double df = it == postings.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(num_docs);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

InvertedIndex build_bm25(const std::map<std::string, TokenSeq>& docs) {
  if (docs.empty()) throw ConfigError("build_bm25: no documents");
  InvertedIndex idx;
  idx.num_docs = docs.size();
  double total = 0.0;
  std::uint32_t pos = 0;
  for (const auto& [id, seq] : docs) {
    idx.doc_ids.push_back(id);
    idx.doc_len.push_back(static_cast<std::uint32_t>(seq.ids.size()));
    total += static_cast<double>(seq.ids.size());
    std::map<TokenId, std::uint32_t> tf;
    for (TokenId t : seq.ids)
      if (t >= kNumSpecials) ++tf[t];
    for (auto [t, n] : tf) idx.postings[t].push_back({pos, n});
    ++pos;
  }
  idx.avg_doc_len = total / static_cast<double>(idx.num_docs);
  return idx;
}

namespace {

double term_weight(const InvertedIndex& idx, double idf, std::uint32_t tf, std::uint32_t dl) {
  const double f = static_cast<double>(tf);
  const double norm = idx.avg_doc_len > 0 ? static_cast<double>(dl) / idx.avg_doc_len : 0.0;
  return idf * f * (idx.k1 + 1.0) / (f + idx.k1 * (1.0 - idx.b + idx.b * norm));
}

}  // namespace

double bm25_score(const InvertedIndex& idx, const TokenSeq& query, const std::string& doc_id) {
  const auto doc = static_cast<std::uint32_t>(idx.position(doc_id));
  double score = 0.0;
  for (TokenId t : query.ids) {
    if (t < kNumSpecials) continue;
    auto it = idx.postings.find(t);
    if (it == idx.postings.end()) continue;
    auto p = std::lower_bound(it->second.begin(), it->second.end(), doc,
                              [](const Posting& a, std::uint32_t d) { return a.doc < d; });
    if (p == it->second.end() || p->doc != doc) continue;
    score += term_weight(idx, idx.idf(t), p->tf, idx.doc_len[doc]);
  }
  return score;
}

RankedList bm25_search(const InvertedIndex& idx, const TokenSeq& query, std::size_t k) {
  if (k < 1) throw ConfigError("bm25_search: k must be >= 1");
  std::vector<double> acc(idx.num_docs, 0.0);
  std::vector<std::uint8_t> hit(idx.num_docs, 0);
  for (TokenId t : query.ids) {
    if (t < kNumSpecials) continue;
    auto it = idx.postings.find(t);
    if (it == idx.postings.end()) continue;
    const double idf = idx.idf(t);
    for (const Posting& p : it->second) {
      acc[p.doc] += term_weight(idx, idf, p.tf, idx.doc_len[p.doc]);
      hit[p.doc] = 1;
    }
  }
  RankedList out;
  for (std::size_t d = 0; d < idx.num_docs; ++d)
    if (hit[d]) out.entries.push_back({idx.doc_ids[d], acc[d]});
  rank_top_k(out.entries, k);
  return out;
}

// ---------------------------------------------------------------------------
// Dense

VectorIndex build_vector_index(const std::map<std::string, SequenceInput>& inputs, const EncoderParams<float>& params,
                               const std::string& source_tag) {
  if (inputs.empty()) throw ConfigError("build_vector_index: no documents");
  VectorIndex idx;
  idx.source_tag = source_tag;
  std::vector<const SequenceInput*> ordered;
  for (const auto& [id, in] : inputs) {
    idx.doc_ids.push_back(id);
    ordered.push_back(&in);
  }
  idx.vectors.resize(static_cast<Eigen::Index>(ordered.size()), static_cast<Eigen::Index>(params.config.d_model));
  parallel_for(ordered.size(), [&](std::size_t i) {
    try {
      idx.vectors.row(static_cast<Eigen::Index>(i)) = forward<float>(params, *ordered[i]);
    } catch (const Error& e) {
      throw Error("build_vector_index: encoding " + idx.doc_ids[i] + " failed: " + e.what());
    }
  });
  return idx;
}

std::vector<double> all_scores(const VectorIndex& idx, std::span<const float> q) {
  if (q.size() != static_cast<std::size_t>(idx.vectors.cols()))
    throw ShapeError("nn_search: query dimension " + std::to_string(q.size()) + " vs index dimension " +
                     std::to_string(idx.vectors.cols()));
  std::vector<double> out(idx.doc_ids.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = similarity(q, std::span<const float>(idx.vectors.row(static_cast<Eigen::Index>(i)).data(), q.size()));
  return out;
}

RankedList nn_search(const VectorIndex& idx, std::span<const float> q, std::size_t k) {
  if (k < 1) throw ConfigError("nn_search: k must be >= 1");
  const auto scores = all_scores(idx, q);
  RankedList out;
  out.entries.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.entries.push_back({idx.doc_ids[i], scores[i]});
  rank_top_k(out.entries, k);
  return out;
}

// ---------------------------------------------------------------------------
// Files: magic | u32 version | u8 kind | payload | u32 crc32

namespace {

constexpr char kMagic[8] = {'S', 'C', 'R', 'I', 'N', 'D', 'X', '\0'};

ByteWriter header(IndexKind kind) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kIndexVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  return w;
}

void finish(const std::filesystem::path& path, ByteWriter& w) {
  w.u32(crc32_of(w.bytes()));
  write_file(path, w.take());
}

struct Opened {
  std::string bytes;
  IndexKind kind;
  std::size_t payload_offset;
};

Opened open_index(const std::filesystem::path& path) {
  Opened o{read_file(path), IndexKind::bm25, 0};
  if (o.bytes.size() < sizeof kMagic + 9) throw CorruptionError(path.string() + ": truncated index file");
  if (std::memcmp(o.bytes.data(), kMagic, sizeof kMagic) != 0) throw KindError(path.string() + ": not an index file");
  ByteReader r(o.bytes.data() + sizeof kMagic, 5);
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion)
    throw VersionError(path.string() + ": index version " + std::to_string(version) + " unsupported");
  verify_crc32(o.bytes, path.string());
  const std::uint8_t kind = r.u8();
  if (kind != static_cast<std::uint8_t>(IndexKind::bm25) && kind != static_cast<std::uint8_t>(IndexKind::dense))
    throw KindError(path.string() + ": unknown index kind " + std::to_string(kind));
  o.kind = static_cast<IndexKind>(kind);
  o.payload_offset = sizeof kMagic + 5;
  return o;
}

}  // namespace

void save_index(const std::filesystem::path& path, const InvertedIndex& idx) {
  ByteWriter w = header(IndexKind::bm25);
  w.f64(idx.k1);
  w.f64(idx.b);
  w.f64(idx.avg_doc_len);
  w.u64(idx.num_docs);
  for (std::size_t i = 0; i < idx.num_docs; ++i) {
    w.str(idx.doc_ids[i]);
    w.u32(idx.doc_len[i]);
  }
  w.u64(idx.postings.size());
  for (const auto& [term, list] : idx.postings) {
    w.u32(static_cast<std::uint32_t>(term));
    w.u64(list.size());
    for (const Posting& p : list) {
      w.u32(p.doc);
      w.u32(p.tf);
    }
  }
  finish(path, w);
}

void save_index(const std::filesystem::path& path, const VectorIndex& idx) {
  ByteWriter w = header(IndexKind::dense);
  w.str(idx.source_tag);
  w.u64(idx.doc_ids.size());
  w.u64(static_cast<std::uint64_t>(idx.vectors.cols()));
  for (const auto& id : idx.doc_ids) w.str(id);
  w.raw(idx.vectors.data(), sizeof(float) * static_cast<std::size_t>(idx.vectors.size()));
  finish(path, w);
}

IndexKind peek_index_kind(const std::filesystem::path& path) { return open_index(path).kind; }

InvertedIndex load_bm25_index(const std::filesystem::path& path) {
  const Opened o = open_index(path);
  if (o.kind != IndexKind::bm25) throw KindError(path.string() + ": expected a bm25 index, found a dense index");
  ByteReader r(o.bytes.data() + o.payload_offset, o.bytes.size() - o.payload_offset - 4);
  InvertedIndex idx;
  idx.k1 = r.f64();
  idx.b = r.f64();
  idx.avg_doc_len = r.f64();
  idx.num_docs = r.u64();
  for (std::size_t i = 0; i < idx.num_docs; ++i) {
    idx.doc_ids.push_back(r.str());
    idx.doc_len.push_back(r.u32());
  }
  const std::uint64_t terms = r.u64();
  for (std::uint64_t t = 0; t < terms; ++t) {
    const auto term = static_cast<TokenId>(r.u32());
    const std::uint64_t n = r.u64();
    auto& list = idx.postings[term];
    for (std::uint64_t j = 0; j < n; ++j) {
      Posting p;
      p.doc = r.u32();
      p.tf = r.u32();
      list.push_back(p);
    }
  }
  if (!r.done()) throw CorruptionError(path.string() + ": trailing bytes in index");
  return idx;
}

VectorIndex load_vector_index(const std::filesystem::path& path) {
  const Opened o = open_index(path);
  if (o.kind != IndexKind::dense) throw KindError(path.string() + ": expected a dense index, found a bm25 index");
  ByteReader r(o.bytes.data() + o.payload_offset, o.bytes.size() - o.payload_offset - 4);
  VectorIndex idx;
  idx.source_tag = r.str();
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  for (std::uint64_t i = 0; i < rows; ++i) idx.doc_ids.push_back(r.str());
  idx.vectors.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.raw(idx.vectors.data(), sizeof(float) * rows * cols);
  if (!r.done()) throw CorruptionError(path.string() + ": trailing bytes in index");
  return idx;
}

}  // namespace scr
