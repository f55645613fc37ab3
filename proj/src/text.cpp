#include "scr/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "scr/corpus.hpp"

namespace scr {

namespace {

const Tokens& special_surfaces() {
  static const Tokens kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", std::string(kFillerSurface)};
  return kSpecials;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(Tokens{}) {}

Vocabulary::Vocabulary(const Tokens& tokens) : tokens_(special_surfaces()) {
  for (TokenId i = 0; i < static_cast<TokenId>(tokens_.size()); ++i) ids_.emplace(tokens_[i], i);
  for (const auto& t : tokens) {
    if (ids_.count(t)) throw VocabularyError("duplicate vocabulary entry '" + t + "'");
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw VocabularyError("token id out of range: " + std::to_string(id));
  return tokens_[id];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("Vocabulary::save: cannot open " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Vocabulary::load: cannot open " + path.string());
  Tokens words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("vocabulary line " + std::to_string(lineno + 1));
    const std::string tok = line.substr(0, tab);
    if (std::stoul(line.substr(tab + 1)) != lineno)
      throw ParseError("vocabulary ids must be contiguous (line " + std::to_string(lineno + 1) + ")");
    if (lineno < static_cast<std::size_t>(kNumSpecials)) {
      if (tok != special_surfaces()[lineno]) throw ParseError("vocabulary specials out of place");
    } else {
      words.push_back(tok);
    }
    ++lineno;
  }
  return Vocabulary(words);
}

Vocabulary build_vocab(const CorpusBundle& corpus, std::size_t min_count) {
  if (corpus.docs.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  auto add = [&](const Tokens& ts) {
    for (const auto& t : ts) ++counts[lowercase(t)];
  };
  for (const auto& d : corpus.docs) {
    add(d.clean_tokens);
    add(d.title_tokens);
  }
  for (const auto& [name, cond] : corpus.conditions)
    for (const auto& [id, set] : cond.nbest)
      for (const auto& h : set.hypotheses) add(h);

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count && !std::count(special_surfaces().begin(), special_surfaces().end(), tok))
      kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokens words;
  words.reserve(kept.size());
  for (auto& [tok, n] : kept) words.push_back(tok);
  return Vocabulary(words);
}

TokenSeq tokenize(const Tokens& words, const Vocabulary& vocab, SourceKind source) {
  TokenSeq out;
  out.source = source;
  out.ids.reserve(words.size());
  for (const auto& w : words) {
    TokenId id = vocab.id(lowercase(w));
    if (id < kNumSpecials) id = kUnk;
    out.ids.push_back(id);
  }
  return out;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, SourceKind source) {
  return tokenize(split_ws(text), vocab, source);
}

std::vector<AlignOp> align_pair(const TokenSeq& anchor, const TokenSeq& hyp) {
  const auto& a = anchor.ids;
  const auto& h = hyp.ids;
  const std::size_t n = a.size(), m = h.size();
  // suffix[i][j]: edit distance between a[i:] and h[j:].
  std::vector<std::uint32_t> suffix((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return suffix[i * (m + 1) + j]; };
  for (std::size_t i = n + 1; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      if (i == n) at(i, j) = static_cast<std::uint32_t>(m - j);
      else if (j == m) at(i, j) = static_cast<std::uint32_t>(n - i);
      else
        at(i, j) = std::min({at(i + 1, j + 1) + (a[i] == h[j] ? 0u : 1u), at(i + 1, j) + 1, at(i, j + 1) + 1});
    }
  }
  std::vector<AlignOp> ops;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    const std::uint32_t cur = at(i, j);
    if (i < n && j < m && a[i] == h[j] && at(i + 1, j + 1) == cur) {
      ops.push_back(AlignOp::match);
      ++i, ++j;
    } else if (i < n && j < m && a[i] != h[j] && at(i + 1, j + 1) + 1 == cur) {
      ops.push_back(AlignOp::substitute);
      ++i, ++j;
    } else if (i < n && at(i + 1, j) + 1 == cur) {
      ops.push_back(AlignOp::delete_in_hyp);
      ++i;
    } else {
      ops.push_back(AlignOp::insert_in_hyp);
      ++j;
    }
  }
  return ops;
}

AlignedFrame align_nbest(const std::vector<TokenSeq>& hyps) {
  if (hyps.empty()) throw AlignmentError("align_nbest: no hypotheses");
  for (const auto& h : hyps)
    if (h.ids.empty()) throw AlignmentError("align_nbest: empty hypothesis");
  const auto& anchor = hyps[0].ids;
  const std::size_t n_anchor = anchor.size();
  if (hyps.size() == 1) return AlignedFrame{{anchor}};

  // Per hypothesis: token (or filler) at each anchor position, and the
  // tokens it inserts into each of the n_anchor + 1 gaps.
  struct Placed {
    std::vector<TokenId> at_anchor;
    std::vector<std::vector<TokenId>> gaps;
  };
  std::vector<Placed> placed(hyps.size());
  std::vector<std::size_t> gap_width(n_anchor + 1, 0);
  for (std::size_t r = 1; r < hyps.size(); ++r) {
    auto& p = placed[r];
    p.at_anchor.assign(n_anchor, kFiller);
    p.gaps.assign(n_anchor + 1, {});
    std::size_t i = 0, j = 0;
    for (AlignOp op : align_pair(hyps[0], hyps[r])) {
      switch (op) {
        case AlignOp::match:
        case AlignOp::substitute:
          p.at_anchor[i++] = hyps[r].ids[j++];
          break;
        case AlignOp::delete_in_hyp:
          ++i;
          break;
        case AlignOp::insert_in_hyp:
          p.gaps[i].push_back(hyps[r].ids[j++]);
          break;
      }
    }
    for (std::size_t g = 0; g <= n_anchor; ++g) gap_width[g] = std::max(gap_width[g], p.gaps[g].size());
  }
  placed[0].at_anchor = anchor;
  placed[0].gaps.assign(n_anchor + 1, {});

  AlignedFrame frame;
  frame.rows.resize(hyps.size());
  for (std::size_t r = 0; r < hyps.size(); ++r) {
    auto& row = frame.rows[r];
    for (std::size_t g = 0; g <= n_anchor; ++g) {
      const auto& ins = placed[r].gaps[g];
      for (std::size_t k = 0; k < gap_width[g]; ++k) row.push_back(k < ins.size() ? ins[k] : kFiller);
      if (g < n_anchor) row.push_back(placed[r].at_anchor[g]);
    }
  }
  return frame;
}

AlignedFrame truncate_frame(const AlignedFrame& frame, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("truncate_frame: max_len must be >= 1");
  AlignedFrame out = frame;
  for (auto& row : out.rows)
    if (row.size() > max_len) row.resize(max_len);
  return out;
}

std::vector<TokenId> strip_filler(const std::vector<TokenId>& row) {
  std::vector<TokenId> out;
  for (TokenId t : row)
    if (t != kFiller) out.push_back(t);
  return out;
}

std::string render_frame(const AlignedFrame& frame, const Vocabulary& vocab) {
  std::string out;
  for (const auto& row : frame.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ' ';
      out += vocab.token(row[c]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace scr
