#pragma once

// Vocabulary, tokenisation and N-best alignment.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scr/common.hpp"

namespace scr {

struct CorpusBundle;

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kFiller = 4;
inline constexpr TokenId kNumSpecials = 5;
inline constexpr std::string_view kFillerSurface = "---";

class Vocabulary {
 public:
  // Specials only.
  Vocabulary();
  // Specials followed by `tokens` in the given order.
  explicit Vocabulary(const Tokens& tokens);

  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  Tokens tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Counts clean text, titles and every stored hypothesis. Tokens seen at
// least `min_count` times get ids ordered by (frequency desc, token asc).
Vocabulary build_vocab(const CorpusBundle& corpus, std::size_t min_count = 1);

enum class SourceKind { clean, hyp, query };

struct TokenSeq {
  std::vector<TokenId> ids;
  SourceKind source = SourceKind::clean;
  int hyp_rank = 0;  // meaningful when source == hyp

  bool operator==(const TokenSeq&) const = default;
};

// Whitespace split + ASCII lowercase; never emits specials.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, SourceKind source = SourceKind::clean);
TokenSeq tokenize(const Tokens& words, const Vocabulary& vocab, SourceKind source = SourceKind::clean);

enum class AlignOp : std::uint8_t { match, substitute, delete_in_hyp, insert_in_hyp };

// Minimum-edit global alignment, ties broken match > substitute >
// delete_in_hyp > insert_in_hyp from left to right.
std::vector<AlignOp> align_pair(const TokenSeq& anchor, const TokenSeq& hyp);

struct AlignedFrame {
  std::vector<std::vector<TokenId>> rows;  // rows[0] is the anchor

  std::size_t n() const { return rows.size(); }
  std::size_t columns() const { return rows.empty() ? 0 : rows.front().size(); }
  bool operator==(const AlignedFrame&) const = default;
};

AlignedFrame align_nbest(const std::vector<TokenSeq>& hyps);
AlignedFrame truncate_frame(const AlignedFrame& frame, std::size_t max_len);

// Row with fillers removed.
std::vector<TokenId> strip_filler(const std::vector<TokenId>& row);

std::string render_frame(const AlignedFrame& frame, const Vocabulary& vocab);

}  // namespace scr
