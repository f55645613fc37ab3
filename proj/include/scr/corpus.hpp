#pragma once

// Synthetic known-item collection and the ASR noise channel.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "scr/common.hpp"

namespace scr {

struct SyntheticDoc {
  std::string doc_id;
  Tokens clean_tokens;
  Tokens title_tokens;

  bool operator==(const SyntheticDoc&) const = default;
};

struct NoiseChannelSpec {
  double sub_rate = 0.0;
  double del_rate = 0.0;
  double ins_rate = 0.0;
  double confusion_temperature = 1.0;
  double target_wer = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const NoiseChannelSpec&) const = default;
};

// WER targets of the three transcript conditions.
inline constexpr double kStandardWer = 0.311;
inline constexpr double kSemiSupervisedWer = 0.2395;
inline constexpr double kOracleWer = 0.1118;

// Uncalibrated starting point for a target; calibrate_channel scales it.
NoiseChannelSpec preset_spec(double target_wer, std::uint64_t seed);

struct NBestSet {
  std::string doc_id;
  std::vector<Tokens> hypotheses;  // descending log-likelihood
  std::vector<double> log_likelihoods;
  std::vector<double> wer_per_hyp;
  std::size_t oracle_index = 0;
  // Set when fewer distinct hypotheses than requested could be drawn.
  bool short_list = false;

  bool operator==(const NBestSet&) const = default;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> eval;

  bool operator==(const Split&) const = default;
};

// One noise condition: the channel that produced it and its per-doc N-best.
struct Condition {
  NoiseChannelSpec spec;
  std::string measure;  // "one_best" or "oracle"
  std::size_t n = 0;
  std::size_t samples = 0;
  std::map<std::string, NBestSet> nbest;

  bool operator==(const Condition&) const = default;
};

struct CorpusBundle {
  std::vector<SyntheticDoc> docs;  // doc_id ascending
  std::map<std::string, Condition> conditions;
  std::map<std::string, Tokens> queries;
  std::map<std::string, std::string> qrels;
  Split split;

  const SyntheticDoc& doc(const std::string& doc_id) const;
  bool operator==(const CorpusBundle&) const = default;
};

struct CorpusOptions {
  std::size_t num_docs = 2000;
  std::size_t vocab_size = 2000;
  std::uint64_t seed = 7;
  std::size_t doc_len_min = 30;
  std::size_t doc_len_max = 60;
  std::size_t eval_queries = 500;
  std::size_t validation_queries = 500;
  // Each document owns a handful of keywords drawn from a Zipf-shaped pool;
  // titles repeat some of them verbatim.
  std::size_t keywords_per_doc = 6;
  double keyword_zipf = 1.25;
  std::size_t title_keywords = 2;
  // Topics have a document register and a smaller title register that
  // documents never use.
  std::size_t topic_words = 20;
  std::size_t topic_title_words = 5;
  double title_topic_rate = 0.8;
  // Words typical of titles ("how", "to", "video") that documents rarely say.
  std::size_t boilerplate_words = 30;
  double title_boilerplate = 1.0;  // expected count per title
  double boilerplate_doc_rate = 0.01;
  // Token mixture of a document; the remainder are function words.
  double keyword_share = 0.3;
  double topic_share = 0.35;
};

CorpusBundle generate_corpus(std::size_t num_docs, std::size_t vocab_size, std::uint64_t seed);
CorpusBundle generate_corpus(const CorpusOptions& options);

// Word error rate with r as denominator under unit-cost Levenshtein alignment.
double wer(const Tokens& reference, const Tokens& hypothesis);
std::size_t edit_distance(const Tokens& a, const Tokens& b);

// Memoryless token edit channel. Per token: keep, substitute with a
// character-level neighbour, or delete; per gap: optionally insert one word.
class NoiseChannel {
 public:
  struct Draw {
    Tokens tokens;
    double log_likelihood = 0.0;
  };

  NoiseChannel(NoiseChannelSpec spec, Tokens lexicon);

  const NoiseChannelSpec& spec() const { return spec_; }
  const Tokens& lexicon() const { return shared_->lexicon; }
  // Same lexicon and confusion sets, rates scaled by `multiplier`.
  NoiseChannel scaled(double multiplier) const;

  Draw corrupt(const Tokens& tokens, std::uint64_t draw_seed) const;

  // Per-token substitution probability (word-dependent difficulty).
  double substitution_probability(const std::string& word) const;
  struct Candidate {
    std::uint32_t word;
    double prob;
  };
  const std::vector<Candidate>& confusions(const std::string& word) const;

  // Samples `samples` draws (plus top-up rounds), deduplicated and sorted by
  // descending log-likelihood, ties lexicographic.
  std::vector<Draw> sample_pool(const SyntheticDoc& doc, std::size_t samples,
                                std::size_t min_distinct) const;

 private:
  struct Shared {
    Tokens lexicon;
    std::unordered_map<std::string, std::uint32_t> index;
    std::vector<std::vector<Candidate>> confusion;
    std::vector<double> difficulty;
  };
  NoiseChannel(NoiseChannelSpec spec, std::shared_ptr<const Shared> shared);

  NoiseChannelSpec spec_;
  std::shared_ptr<const Shared> shared_;
};

NoiseChannel::Draw corrupt(const Tokens& tokens, const NoiseChannel& channel,
                           std::uint64_t draw_seed);

inline constexpr std::size_t kDefaultSamples = 200;
inline constexpr std::size_t kMaxNBest = 20;

NBestSet generate_nbest(const SyntheticDoc& doc, const NoiseChannel& channel, std::size_t n,
                        std::size_t samples = kDefaultSamples);

// Lowest-WER hypothesis among all sampled draws (ties: higher likelihood).
Tokens oracle_transcript(const SyntheticDoc& doc, const NoiseChannel& channel,
                         std::size_t samples = kDefaultSamples);

enum class WerMeasure { one_best, oracle };

// Corpus-level WER (total edits / total reference tokens) of the transcript
// that a condition emits for each doc.
double measure_wer(const NoiseChannel& channel, const std::vector<SyntheticDoc>& docs,
                   WerMeasure measure, std::size_t samples = kDefaultSamples);

struct CalibrationResult {
  NoiseChannelSpec spec;
  double measured_wer = 0.0;
  int iterations = 0;
};

// Binary search over a global rate multiplier until the measured WER is
// within `tolerance` of spec.target_wer.
CalibrationResult calibrate_channel(const NoiseChannel& channel,
                                    const std::vector<SyntheticDoc>& sample_docs,
                                    WerMeasure measure = WerMeasure::one_best,
                                    std::size_t samples = kDefaultSamples,
                                    double tolerance = 0.01);

// Lexicon shared by all channels over a bundle: sorted unique clean tokens.
Tokens corpus_lexicon(const CorpusBundle& bundle);

// Generates the N-best sets of one condition for every document.
Condition make_condition(const CorpusBundle& bundle, const NoiseChannel& channel,
                         WerMeasure measure, std::size_t n,
                         std::size_t samples = kDefaultSamples);

// Convenience: calibrate a preset on the first `calibration_docs` docs and
// attach the resulting condition to the bundle under `name`.
CalibrationResult add_condition(CorpusBundle& bundle, const std::string& name, double target_wer,
                                WerMeasure measure, std::size_t n, std::uint64_t seed,
                                std::size_t samples = kDefaultSamples,
                                std::size_t calibration_docs = 500);

void export_bundle(const CorpusBundle& bundle, const std::filesystem::path& path);
std::string export_bundle_string(const CorpusBundle& bundle);
CorpusBundle import_bundle(const std::filesystem::path& path);

}  // namespace scr
