#include "scr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace scr {

namespace {

using WordSeq = std::vector<std::uint32_t>;

constexpr std::size_t kConfusionSetSize = 8;

std::string make_word(Rng& rng) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string w;
  const std::size_t syllables = 2 + rng.below(2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  if (rng.uniform() < 0.3) w += kConsonants[rng.below(kConsonants.size())];
  return w;
}

std::size_t char_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string numbered(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
  return buf;
}

}  // namespace

const SyntheticDoc& CorpusBundle::doc(const std::string& doc_id) const {
  auto it = std::lower_bound(docs.begin(), docs.end(), doc_id,
                             [](const SyntheticDoc& d, const std::string& id) { return d.doc_id < id; });
  if (it == docs.end() || it->doc_id != doc_id) throw LookupError("unknown doc_id " + doc_id);
  return *it;
}

NoiseChannelSpec preset_spec(double target_wer, std::uint64_t seed) {
  NoiseChannelSpec s;
  s.target_wer = target_wer;
  s.seed = seed;
  s.confusion_temperature = 1.0;
  if (target_wer > 0.0) {
    s.sub_rate = 0.20;
    s.del_rate = 0.08;
    s.ins_rate = 0.04;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Corpus generation

CorpusBundle generate_corpus(std::size_t num_docs, std::size_t vocab_size, std::uint64_t seed) {
  CorpusOptions o;
  o.num_docs = num_docs;
  o.vocab_size = vocab_size;
  o.seed = seed;
  if (num_docs < 2000) {
    o.eval_queries = std::min<std::size_t>(500, std::max<std::size_t>(1, num_docs / 4));
    o.validation_queries = o.eval_queries;
  }
  return generate_corpus(o);
}

CorpusBundle generate_corpus(const CorpusOptions& o) {
  if (o.num_docs < 10) throw ConfigError("generate_corpus: num_docs must be >= 10");
  if (o.vocab_size < 100) throw ConfigError("generate_corpus: vocab_size must be >= 100");
  if (o.doc_len_min < 30 || o.doc_len_max > 400 || o.doc_len_min > o.doc_len_max)
    throw ConfigError("generate_corpus: document length range must lie within [30, 400]");
  if (o.eval_queries + o.validation_queries >= o.num_docs)
    throw ConfigError("generate_corpus: eval + validation queries must leave training queries");
  if (o.keywords_per_doc < 1 || o.title_keywords < 1 || o.title_keywords > o.keywords_per_doc)
    throw ConfigError("generate_corpus: titles need between 1 and keywords_per_doc keywords");
  if (o.topic_words < 1 || o.keyword_share < 0 || o.topic_share < 0 || o.keyword_share + o.topic_share > 1)
    throw ConfigError("generate_corpus: bad token-mixture shares");

  Rng rng(derive_seed(o.seed, 0x636f72707573ULL));

  std::set<std::string> seen;
  Tokens words;
  while (words.size() < o.vocab_size) {
    std::string w = make_word(rng);
    if (seen.insert(w).second) words.push_back(std::move(w));
  }

  // Partitions: function words, title boilerplate, topics (document and
  // title registers), and the keyword pool that takes the rest.
  const std::size_t num_function = std::max<std::size_t>(5, o.vocab_size / 20);
  // Small vocabularies shrink the boilerplate and topic registers.
  const std::size_t num_boilerplate = std::min(o.boilerplate_words, std::max<std::size_t>(1, o.vocab_size / 20));
  const std::size_t rest = o.vocab_size - num_function;
  const std::size_t topic_budget = std::max<std::size_t>(2, rest / 8);
  const std::size_t topic_title_words = std::min(o.topic_title_words, std::max<std::size_t>(1, topic_budget / 5));
  const std::size_t topic_words = std::min(o.topic_words, topic_budget - topic_title_words);
  const std::size_t topic_size = topic_words + topic_title_words;
  const std::size_t num_topics = std::max<std::size_t>(2, rest / 4 / topic_size);
  if (num_function + num_boilerplate + num_topics * topic_size + o.keywords_per_doc * 4 > o.vocab_size)
    throw ConfigError("generate_corpus: vocabulary too small for the requested partitions");
  auto cursor = words.begin();
  auto take_words = [&](std::size_t n) {
    Tokens out(cursor, cursor + static_cast<std::ptrdiff_t>(n));
    cursor += static_cast<std::ptrdiff_t>(n);
    return out;
  };
  const Tokens function_words = take_words(num_function);
  const Tokens boilerplate = take_words(num_boilerplate);
  std::vector<Tokens> topic_doc(num_topics), topic_title(num_topics);
  for (std::size_t t = 0; t < num_topics; ++t) {
    topic_doc[t] = take_words(topic_words);
    topic_title[t] = take_words(topic_title_words);
  }
  const Tokens keywords(cursor, words.end());

  // Zipf weights over the keyword pool.
  std::vector<double> zipf_cdf(keywords.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < keywords.size(); ++i)
    zipf_cdf[i] = acc += std::pow(static_cast<double>(i + 1), -o.keyword_zipf);
  auto draw_keyword = [&]() -> const std::string& {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(zipf_cdf.begin(), zipf_cdf.end(), u);
    return keywords[std::min<std::size_t>(static_cast<std::size_t>(it - zipf_cdf.begin()), keywords.size() - 1)];
  };
  auto pick = [&](const Tokens& pool) -> const std::string& { return pool[rng.below(pool.size())]; };

  CorpusBundle bundle;
  bundle.docs.reserve(o.num_docs);
  std::vector<std::string> query_ids;
  for (std::size_t d = 0; d < o.num_docs; ++d) {
    SyntheticDoc doc;
    doc.doc_id = numbered('d', d);
    const std::size_t topic = rng.below(num_topics);
    Tokens own;
    while (own.size() < o.keywords_per_doc) {
      const std::string& w = draw_keyword();
      if (std::find(own.begin(), own.end(), w) == own.end()) own.push_back(w);
    }

    const std::size_t len = o.doc_len_min + rng.below(o.doc_len_max - o.doc_len_min + 1);
    doc.clean_tokens = own;
    while (doc.clean_tokens.size() < len) {
      const double u = rng.uniform();
      if (u < o.keyword_share) doc.clean_tokens.push_back(pick(own));
      else if (u < o.keyword_share + o.topic_share) doc.clean_tokens.push_back(pick(topic_doc[topic]));
      else if (!boilerplate.empty() && rng.uniform() < o.boilerplate_doc_rate) doc.clean_tokens.push_back(pick(boilerplate));
      else doc.clean_tokens.push_back(pick(function_words));
    }
    rng.shuffle(doc.clean_tokens);

    // Title keywords are drawn in proportion to their count in the document.
    Tokens title;
    std::vector<std::string> pool = doc.clean_tokens;
    std::erase_if(pool, [&](const std::string& w) { return std::find(own.begin(), own.end(), w) == own.end(); });
    while (title.size() < o.title_keywords) {
      const std::string w = pick(pool);
      if (std::find(title.begin(), title.end(), w) == title.end()) title.push_back(w);
    }
    if (rng.uniform() < o.title_topic_rate && !topic_title[topic].empty()) title.push_back(pick(topic_title[topic]));
    if (!boilerplate.empty()) {
      double expected = o.title_boilerplate;
      while (expected > 0 && rng.uniform() < std::min(1.0, expected)) {
        title.push_back(pick(boilerplate));
        expected -= 1.0;
      }
    }
    rng.shuffle(title);
    doc.title_tokens = std::move(title);

    const std::string qid = numbered('q', d);
    bundle.queries[qid] = doc.title_tokens;
    bundle.qrels[qid] = doc.doc_id;
    query_ids.push_back(qid);
    bundle.docs.push_back(std::move(doc));
  }

  rng.shuffle(query_ids);
  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::string> out(query_ids.begin() + from, query_ids.begin() + from + count);
    std::sort(out.begin(), out.end());
    return out;
  };
  bundle.split.eval = take(0, o.eval_queries);
  bundle.split.validation = take(o.eval_queries, o.validation_queries);
  bundle.split.train = take(o.eval_queries + o.validation_queries,
                            o.num_docs - o.eval_queries - o.validation_queries);
  return bundle;
}

// ---------------------------------------------------------------------------
// WER

std::size_t edit_distance(const Tokens& a, const Tokens& b) { return levenshtein(a, b); }

double wer(const Tokens& reference, const Tokens& hypothesis) {
  if (reference.empty()) throw DomainError("wer: empty reference");
  return static_cast<double>(levenshtein(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

// ---------------------------------------------------------------------------
// Noise channel

NoiseChannel::NoiseChannel(NoiseChannelSpec spec, Tokens lexicon) : spec_(spec) {
  if (spec.sub_rate < 0 || spec.del_rate < 0 || spec.ins_rate < 0 || spec.sub_rate >= 1 ||
      spec.del_rate >= 1 || spec.ins_rate >= 1 || spec.sub_rate + spec.del_rate >= 1)
    throw ConfigError("NoiseChannel: rates must lie in [0,1) with sub + del < 1");
  if (!(spec.confusion_temperature > 0)) throw ConfigError("NoiseChannel: temperature must be > 0");
  if (lexicon.empty()) throw ConfigError("NoiseChannel: empty lexicon");

  auto shared = std::make_shared<Shared>();
  std::sort(lexicon.begin(), lexicon.end());
  lexicon.erase(std::unique(lexicon.begin(), lexicon.end()), lexicon.end());
  shared->lexicon = std::move(lexicon);
  const auto& lex = shared->lexicon;
  for (std::uint32_t i = 0; i < lex.size(); ++i) shared->index.emplace(lex[i], i);

  shared->difficulty.resize(lex.size());
  shared->confusion.resize(lex.size());
  std::vector<std::pair<std::size_t, std::uint32_t>> dist(lex.size());
  for (std::uint32_t i = 0; i < lex.size(); ++i) {
    // Exponential(1) difficulty keyed on the word itself.
    const double u = (static_cast<double>(mix64(hash_string(lex[i])) >> 11) + 0.5) * 0x1.0p-53;
    shared->difficulty[i] = -std::log(u);

    dist.clear();
    for (std::uint32_t j = 0; j < lex.size(); ++j)
      if (j != i) dist.emplace_back(char_distance(lex[i], lex[j]), j);
    const std::size_t k = std::min(kConfusionSetSize, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    auto& cands = shared->confusion[i];
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double w = std::exp(-static_cast<double>(dist[c].first) / spec.confusion_temperature);
      cands.push_back({dist[c].second, w});
      total += w;
    }
    for (auto& c : cands) c.prob /= total;
  }
  shared_ = std::move(shared);
}

NoiseChannel::NoiseChannel(NoiseChannelSpec spec, std::shared_ptr<const Shared> shared)
    : spec_(spec), shared_(std::move(shared)) {}

NoiseChannel NoiseChannel::scaled(double multiplier) const {
  NoiseChannelSpec s = spec_;
  s.sub_rate = std::min(spec_.sub_rate * multiplier, 0.9);
  s.del_rate = std::min(spec_.del_rate * multiplier, 0.45);
  s.ins_rate = std::min(spec_.ins_rate * multiplier, 0.5);
  if (s.sub_rate + s.del_rate >= 1.0) s.sub_rate = 0.99 - s.del_rate;
  return NoiseChannel(s, shared_);
}

double NoiseChannel::substitution_probability(const std::string& word) const {
  auto it = shared_->index.find(word);
  if (it == shared_->index.end() || shared_->confusion[it->second].empty()) return 0.0;
  return std::min(spec_.sub_rate * shared_->difficulty[it->second], 0.9 * (1.0 - spec_.del_rate));
}

const std::vector<NoiseChannel::Candidate>& NoiseChannel::confusions(const std::string& word) const {
  static const std::vector<Candidate> kNone;
  auto it = shared_->index.find(word);
  return it == shared_->index.end() ? kNone : shared_->confusion[it->second];
}

namespace {

// Word-index view of a channel draw. Out-of-lexicon words get indices past
// the lexicon and can only be kept or deleted.
struct IndexedDoc {
  WordSeq words;
  Tokens extra;
};

}  // namespace

// Implementation shared by corrupt() and sample_pool().
static NoiseChannel::Draw draw_tokens(const NoiseChannel& ch, const Tokens& tokens,
                                      std::uint64_t draw_seed) {
  const auto& spec = ch.spec();
  Rng rng(draw_seed);
  NoiseChannel::Draw out;
  const double log_no_ins = std::log1p(-spec.ins_rate);
  const double log_ins = spec.ins_rate > 0
                             ? std::log(spec.ins_rate) - std::log(static_cast<double>(ch.lexicon().size()))
                             : -std::numeric_limits<double>::infinity();
  auto gap = [&] {
    if (spec.ins_rate > 0 && rng.uniform() < spec.ins_rate) {
      out.tokens.push_back(ch.lexicon()[rng.below(ch.lexicon().size())]);
      out.log_likelihood += log_ins;
    } else {
      out.log_likelihood += log_no_ins;
    }
  };
  gap();
  for (const auto& tok : tokens) {
    const double s = ch.substitution_probability(tok);
    const double d = spec.del_rate;
    const double u = rng.uniform();
    if (u < s) {
      const auto& cands = ch.confusions(tok);
      double v = rng.uniform();
      std::size_t pick = cands.size() - 1;
      for (std::size_t c = 0; c < cands.size(); ++c) {
        if (v < cands[c].prob) {
          pick = c;
          break;
        }
        v -= cands[c].prob;
      }
      out.tokens.push_back(ch.lexicon()[cands[pick].word]);
      out.log_likelihood += std::log(s * cands[pick].prob);
    } else if (u < s + d) {
      out.log_likelihood += std::log(d);
    } else {
      out.tokens.push_back(tok);
      out.log_likelihood += std::log1p(-(s + d));
    }
    gap();
  }
  return out;
}

NoiseChannel::Draw NoiseChannel::corrupt(const Tokens& tokens, std::uint64_t draw_seed) const {
  if (tokens.empty()) throw DomainError("corrupt: empty token sequence");
  return draw_tokens(*this, tokens, draw_seed);
}

NoiseChannel::Draw corrupt(const Tokens& tokens, const NoiseChannel& channel, std::uint64_t draw_seed) {
  return channel.corrupt(tokens, draw_seed);
}

std::vector<NoiseChannel::Draw> NoiseChannel::sample_pool(const SyntheticDoc& doc, std::size_t samples,
                                                          std::size_t min_distinct) const {
  if (doc.clean_tokens.empty()) throw DomainError("sample_pool: empty document");
  std::map<Tokens, double> distinct;
  const std::uint64_t doc_key = hash_string(doc.doc_id);
  constexpr int kTopUpRounds = 3;
  for (int round = 0; round <= kTopUpRounds; ++round) {
    for (std::size_t i = 0; i < samples; ++i) {
      const std::uint64_t seed = derive_seed(spec_.seed, doc_key, round * samples + i);
      Draw d = draw_tokens(*this, doc.clean_tokens, seed);
      auto [it, inserted] = distinct.emplace(std::move(d.tokens), d.log_likelihood);
      if (!inserted) it->second = std::max(it->second, d.log_likelihood);
    }
    if (distinct.size() >= min_distinct) break;
    // A noiseless channel can never yield more than one hypothesis.
    if (spec_.sub_rate == 0 && spec_.del_rate == 0 && spec_.ins_rate == 0) break;
  }
  std::vector<Draw> pool;
  pool.reserve(distinct.size());
  for (auto& [tokens, ll] : distinct) pool.push_back({tokens, ll});
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Draw& a, const Draw& b) { return a.log_likelihood > b.log_likelihood; });
  return pool;
}

NBestSet generate_nbest(const SyntheticDoc& doc, const NoiseChannel& channel, std::size_t n,
                        std::size_t samples) {
  if (n < 1 || n > kMaxNBest) throw ConfigError("generate_nbest: n must lie in [1, 20]");
  if (n > samples) throw ConfigError("generate_nbest: n must not exceed samples");
  auto pool = channel.sample_pool(doc, samples, n);
  NBestSet out;
  out.doc_id = doc.doc_id;
  const std::size_t keep = std::min(n, pool.size());
  out.short_list = keep < n;
  for (std::size_t i = 0; i < keep; ++i) {
    out.wer_per_hyp.push_back(wer(doc.clean_tokens, pool[i].tokens));
    out.log_likelihoods.push_back(pool[i].log_likelihood);
    out.hypotheses.push_back(std::move(pool[i].tokens));
  }
  out.oracle_index = static_cast<std::size_t>(
      std::min_element(out.wer_per_hyp.begin(), out.wer_per_hyp.end()) - out.wer_per_hyp.begin());
  return out;
}

Tokens oracle_transcript(const SyntheticDoc& doc, const NoiseChannel& channel, std::size_t samples) {
  auto pool = channel.sample_pool(doc, samples, 1);
  std::size_t best = 0;
  std::size_t best_dist = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const std::size_t dist = edit_distance(doc.clean_tokens, pool[i].tokens);
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return pool[best].tokens;
}

double measure_wer(const NoiseChannel& channel, const std::vector<SyntheticDoc>& docs, WerMeasure measure,
                   std::size_t samples) {
  if (docs.empty()) throw ConfigError("measure_wer: no documents");
  std::vector<std::size_t> edits(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    const Tokens hyp = measure == WerMeasure::oracle
                           ? oracle_transcript(docs[i], channel, samples)
                           : channel.sample_pool(docs[i], samples, 1).front().tokens;
    edits[i] = edit_distance(docs[i].clean_tokens, hyp);
  });
  std::size_t total_edits = 0, total_ref = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    total_edits += edits[i];
    total_ref += docs[i].clean_tokens.size();
  }
  return static_cast<double>(total_edits) / static_cast<double>(total_ref);
}

CalibrationResult calibrate_channel(const NoiseChannel& channel, const std::vector<SyntheticDoc>& sample_docs,
                                    WerMeasure measure, std::size_t samples, double tolerance) {
  if (sample_docs.empty()) throw ConfigError("calibrate_channel: no sample documents");
  const double target = channel.spec().target_wer;
  CalibrationResult result;
  if (target <= 0.0) {
    result.spec = channel.scaled(0.0).spec();
    result.measured_wer = 0.0;
    return result;
  }
  if (channel.spec().sub_rate + channel.spec().del_rate + channel.spec().ins_rate <= 0.0)
    throw ConfigError("calibrate_channel: base spec has all rates zero");

  // Aim tighter than the acceptance band so held-out documents stay inside it.
  const double aim = tolerance / 4.0;
  constexpr int kMaxIterations = 50;
  double lo = 0.0, hi = 1.0;
  double best_gap = std::numeric_limits<double>::infinity();
  auto evaluate = [&](double m) {
    const NoiseChannel c = channel.scaled(m);
    const double w = measure_wer(c, sample_docs, measure, samples);
    ++result.iterations;
    if (std::abs(w - target) < best_gap) {
      best_gap = std::abs(w - target);
      result.spec = c.spec();
      result.measured_wer = w;
    }
    return w;
  };

  double w = evaluate(hi);
  while (w < target && result.iterations < kMaxIterations) {
    lo = hi;
    hi *= 2.0;
    w = evaluate(hi);
    if (hi > 1e3) break;
  }
  while (best_gap > aim && result.iterations < kMaxIterations) {
    const double mid = 0.5 * (lo + hi);
    w = evaluate(mid);
    if (w < target) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-9) break;
  }
  if (best_gap > tolerance)
    throw CalibrationError("calibrate_channel: did not converge to target " + std::to_string(target),
                           result.measured_wer);
  return result;
}

Tokens corpus_lexicon(const CorpusBundle& bundle) {
  std::set<std::string> words;
  for (const auto& d : bundle.docs) words.insert(d.clean_tokens.begin(), d.clean_tokens.end());
  return Tokens(words.begin(), words.end());
}

Condition make_condition(const CorpusBundle& bundle, const NoiseChannel& channel, WerMeasure measure,
                         std::size_t n, std::size_t samples) {
  Condition cond;
  cond.spec = channel.spec();
  cond.measure = measure == WerMeasure::oracle ? "oracle" : "one_best";
  cond.n = measure == WerMeasure::oracle ? 1 : n;
  cond.samples = samples;
  std::vector<NBestSet> sets(bundle.docs.size());
  parallel_for(bundle.docs.size(), [&](std::size_t i) {
    const auto& doc = bundle.docs[i];
    if (measure == WerMeasure::oracle) {
      NBestSet s;
      s.doc_id = doc.doc_id;
      s.hypotheses.push_back(oracle_transcript(doc, channel, samples));
      s.log_likelihoods.push_back(0.0);
      s.wer_per_hyp.push_back(wer(doc.clean_tokens, s.hypotheses[0]));
      sets[i] = std::move(s);
    } else {
      sets[i] = generate_nbest(doc, channel, n, samples);
    }
  });
  for (auto& s : sets) cond.nbest.emplace(s.doc_id, std::move(s));
  return cond;
}

CalibrationResult add_condition(CorpusBundle& bundle, const std::string& name, double target_wer,
                                WerMeasure measure, std::size_t n, std::uint64_t seed, std::size_t samples,
                                std::size_t calibration_docs) {
  NoiseChannel base(preset_spec(target_wer, seed), corpus_lexicon(bundle));
  std::vector<SyntheticDoc> sample(bundle.docs.begin(),
                                   bundle.docs.begin() + std::min(calibration_docs, bundle.docs.size()));
  CalibrationResult cal = calibrate_channel(base, sample, measure, samples);
  NoiseChannel calibrated(cal.spec, corpus_lexicon(bundle));
  bundle.conditions[name] = make_condition(bundle, calibrated, measure, n, samples);
  return cal;
}

// ---------------------------------------------------------------------------
// JSONL serialisation

namespace {

using nlohmann::json;

json spec_json(const NoiseChannelSpec& s) {
  return json{{"confusion_temperature", s.confusion_temperature}, {"del_rate", s.del_rate},
              {"ins_rate", s.ins_rate},
              {"seed", s.seed},
              {"sub_rate", s.sub_rate},
              {"target_wer", s.target_wer}};
}

NoiseChannelSpec spec_from(const json& j) {
  NoiseChannelSpec s;
  s.confusion_temperature = j.at("confusion_temperature").get<double>();
  s.del_rate = j.at("del_rate").get<double>();
  s.ins_rate = j.at("ins_rate").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.sub_rate = j.at("sub_rate").get<double>();
  s.target_wer = j.at("target_wer").get<double>();
  return s;
}

void write_records(const CorpusBundle& b, std::ostream& out) {
  auto emit = [&](const json& j) { out << j.dump() << '\n'; };
  for (const auto& d : b.docs)
    emit(json{{"kind", "doc"}, {"doc_id", d.doc_id}, {"clean", d.clean_tokens}, {"title", d.title_tokens}});
  for (const auto& [name, c] : b.conditions) {
    emit(json{{"kind", "condition"}, {"name", name}, {"spec", spec_json(c.spec)}, {"measure", c.measure},
              {"n", c.n}, {"samples", c.samples}});
    for (const auto& [doc_id, s] : c.nbest) {
      emit(json{{"kind", "nbest"},
                {"condition", name},
                {"doc_id", doc_id},
                {"hypotheses", s.hypotheses},
                {"log_likelihoods", s.log_likelihoods},
                {"wer", s.wer_per_hyp},
                {"oracle_index", s.oracle_index},
                {"short", s.short_list}});
    }
  }
  for (const auto& [qid, toks] : b.queries) emit(json{{"kind", "query"}, {"query_id", qid}, {"tokens", toks}});
  for (const auto& [qid, did] : b.qrels) emit(json{{"kind", "qrel"}, {"query_id", qid}, {"doc_id", did}});
  emit(json{{"kind", "split"},
            {"train", b.split.train},
            {"validation", b.split.validation},
            {"eval", b.split.eval}});
}

}  // namespace

std::string export_bundle_string(const CorpusBundle& bundle) {
  std::ostringstream out;
  write_records(bundle, out);
  return out.str();
}

void export_bundle(const CorpusBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("export_bundle: cannot open " + path.string());
  write_records(bundle, out);
  if (!out) throw Error("export_bundle: write failed for " + path.string());
}

CorpusBundle import_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("import_bundle: cannot open " + path.string());
  CorpusBundle b;
  bool have_split = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "doc") {
        b.docs.push_back({j.at("doc_id").get<std::string>(), j.at("clean").get<Tokens>(),
                          j.at("title").get<Tokens>()});
      } else if (kind == "condition") {
        auto& c = b.conditions[j.at("name").get<std::string>()];
        c.spec = spec_from(j.at("spec"));
        c.measure = j.at("measure").get<std::string>();
        c.n = j.at("n").get<std::size_t>();
        c.samples = j.at("samples").get<std::size_t>();
      } else if (kind == "nbest") {
        NBestSet s;
        s.doc_id = j.at("doc_id").get<std::string>();
        s.hypotheses = j.at("hypotheses").get<std::vector<Tokens>>();
        s.log_likelihoods = j.at("log_likelihoods").get<std::vector<double>>();
        s.wer_per_hyp = j.at("wer").get<std::vector<double>>();
        s.oracle_index = j.at("oracle_index").get<std::size_t>();
        s.short_list = j.at("short").get<bool>();
        if (s.hypotheses.empty() || s.hypotheses.size() != s.log_likelihoods.size() ||
            s.hypotheses.size() != s.wer_per_hyp.size() || s.oracle_index >= s.hypotheses.size())
          throw ParseError("inconsistent nbest record");
        b.conditions[j.at("condition").get<std::string>()].nbest[s.doc_id] = std::move(s);
      } else if (kind == "query") {
        b.queries[j.at("query_id").get<std::string>()] = j.at("tokens").get<Tokens>();
      } else if (kind == "qrel") {
        b.qrels[j.at("query_id").get<std::string>()] = j.at("doc_id").get<std::string>();
      } else if (kind == "split") {
        b.split.train = j.at("train").get<std::vector<std::string>>();
        b.split.validation = j.at("validation").get<std::vector<std::string>>();
        b.split.eval = j.at("eval").get<std::vector<std::string>>();
        have_split = true;
      } else {
        throw ParseError("unknown record kind '" + kind + "'");
      }
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_split) throw ParseError(path.string() + ": missing split record (truncated file?)");
  std::sort(b.docs.begin(), b.docs.end(),
            [](const SyntheticDoc& x, const SyntheticDoc& y) { return x.doc_id < y.doc_id; });
  for (const auto& [qid, did] : b.qrels) (void)b.doc(did);
  return b;
}

}  // namespace scr
