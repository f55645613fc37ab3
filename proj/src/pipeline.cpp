#include "scr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

#include "json.hpp"

namespace scr {

std::map<std::string, TokenSeq> query_seqs(const CorpusBundle& bundle, const Vocabulary& vocab) {
  std::map<std::string, TokenSeq> out;
  for (const auto& [qid, toks] : bundle.queries) out.emplace(qid, tokenize(toks, vocab, SourceKind::query));
  return out;
}

std::vector<TrainExample> mine_bm25_negatives(const CorpusBundle& bundle, const Vocabulary& vocab,
                                              const InvertedIndex& bm25, std::size_t J, std::uint64_t seed,
                                              const std::vector<std::string>& query_ids) {
  if (J < 1) throw ConfigError("mine_bm25_negatives: J must be >= 1");
  if (bm25.num_docs < J + 1) throw ConfigError("mine_bm25_negatives: corpus smaller than J + 1 documents");
  std::vector<TrainExample> out(query_ids.size());
  parallel_for(query_ids.size(), [&](std::size_t i) {
    const std::string& qid = query_ids[i];
    TrainExample ex;
    ex.query_id = qid;
    ex.positive_doc_id = bundle.qrels.at(qid);
    const TokenSeq q = tokenize(bundle.queries.at(qid), vocab, SourceKind::query);
    for (const auto& e : bm25_search(bm25, q, J + 1).entries) {
      if (e.doc_id == ex.positive_doc_id) continue;
      if (ex.negative_doc_ids.size() < J) ex.negative_doc_ids.push_back(e.doc_id);
    }
    std::set<std::string> taken(ex.negative_doc_ids.begin(), ex.negative_doc_ids.end());
    Rng rng(derive_seed(seed, hash_string(qid), 0x6e6567));
    while (ex.negative_doc_ids.size() < J) {
      const std::string& d = bm25.doc_ids[rng.below(bm25.num_docs)];
      if (d == ex.positive_doc_id || !taken.insert(d).second) continue;
      ex.negative_doc_ids.push_back(d);
    }
    out[i] = std::move(ex);
  });
  return out;
}

double TrainConfig::effective_learning_rate() const {
  if (learning_rate > 0) return learning_rate;
  return model == "rerank" ? 1e-3 : 5e-4;
}

void TrainConfig::validate() const {
  if (model != "rerank" && model != "dr") throw ConfigError("train: model must be rerank or dr");
  if (ance && model != "dr") throw ConfigError("train: ANCE applies to the dual encoder only");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (negatives < 1) throw ConfigError("train: negatives must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("train: learning rate must not be negative");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("train: warmup fraction must lie in [0, 1)");
  if (ance_pool < 1) throw ConfigError("train: ANCE pool must be >= 1");
  if (validation_candidates < 2) throw ConfigError("train: validation needs at least 2 candidates");
  if (view.mode == FusionMode::late) throw ConfigError("train: late fusion is a search-time method");
  EncoderConfig e = encoder;
  e.vocab_size = std::max<std::size_t>(e.vocab_size, kNumSpecials);
  e.validate();
}

// ---------------------------------------------------------------------------
// Validation

RerankValidation mint_rerank_validation(const TrainingData& data) {
  const auto& split = data.bundle->split.validation;
  RerankValidation v;
  for (const auto& qid : split) {
    const std::string& pos = data.bundle->qrels.at(qid);
    const TokenSeq q = tokenize(data.bundle->queries.at(qid), *data.vocab, SourceKind::query);
    std::string neg;
    for (const auto& e : bm25_search(*data.bm25, q, 2).entries)
      if (e.doc_id != pos) {
        neg = e.doc_id;
        break;
      }
    if (neg.empty()) {
      // Nothing retrieved: take the first document that is not the positive.
      neg = data.bm25->doc_ids[0] == pos ? data.bm25->doc_ids[1] : data.bm25->doc_ids[0];
    }
    v.query_ids.push_back(qid);
    v.positives.push_back(pos);
    v.negatives.push_back(neg);
  }
  return v;
}

DrValidation mint_dr_validation(const TrainingData& data, std::size_t candidates, std::uint64_t seed) {
  const auto& split = data.bundle->split.validation;
  const auto mined = mine_bm25_negatives(*data.bundle, *data.vocab, *data.bm25,
                                         std::min(candidates - 1, data.bm25->num_docs - 1), seed, split);
  DrValidation v;
  for (const auto& ex : mined) {
    v.query_ids.push_back(ex.query_id);
    std::vector<std::string> c{ex.positive_doc_id};
    c.insert(c.end(), ex.negative_doc_ids.begin(), ex.negative_doc_ids.end());
    v.candidates.push_back(std::move(c));
  }
  return v;
}

double rerank_validation_loss(const EncoderParams<float>& params, const TrainingData& data,
                              const std::map<std::string, TokenSeq>& docs, const RerankValidation& v) {
  if (v.query_ids.empty()) return 0.0;
  std::vector<double> losses(v.query_ids.size());
  parallel_for(v.query_ids.size(), [&](std::size_t i) {
    const TokenSeq q = tokenize(data.bundle->queries.at(v.query_ids[i]), *data.vocab, SourceKind::query);
    const double sp = rerank_score(params, q, docs.at(v.positives[i]));
    const double sn = rerank_score(params, q, docs.at(v.negatives[i]));
    losses[i] = rerank_loss(sp, std::span<const double>(&sn, 1));
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

double dr_validation_mrr(const EncoderParams<float>& params, const TrainingData& data,
                         const std::map<std::string, SequenceInput>& docs, const DrValidation& v) {
  if (v.query_ids.empty()) return 0.0;
  std::set<std::string> needed;
  for (const auto& c : v.candidates) needed.insert(c.begin(), c.end());
  std::map<std::string, SequenceInput> subset;
  for (const auto& id : needed) subset.emplace(id, docs.at(id));
  const VectorIndex idx = build_vector_index(subset, params, "validation");

  std::vector<double> rr(v.query_ids.size());
  parallel_for(v.query_ids.size(), [&](std::size_t i) {
    const TokenSeq q = tokenize(data.bundle->queries.at(v.query_ids[i]), *data.vocab, SourceKind::query);
    const RowVec<float> qv = encode_query(params, q);
    const std::span<const float> qs(qv.data(), static_cast<std::size_t>(qv.size()));
    auto score = [&](const std::string& id) {
      const auto row = static_cast<std::size_t>(std::lower_bound(idx.doc_ids.begin(), idx.doc_ids.end(), id) -
                                                idx.doc_ids.begin());
      return similarity(qs, std::span<const float>(idx.vectors.row(static_cast<Eigen::Index>(row)).data(), qs.size()));
    };
    const auto& cands = v.candidates[i];
    const RankedEntry pos{cands[0], score(cands[0])};
    std::size_t rank = 1;
    for (std::size_t c = 1; c < cands.size(); ++c)
      if (canonical_before(RankedEntry{cands[c], score(cands[c])}, pos)) ++rank;
    rr[i] = 1.0 / static_cast<double>(rank);
  });
  double total = 0.0;
  for (double r : rr) total += r;
  return total / static_cast<double>(rr.size());
}

// ---------------------------------------------------------------------------
// ANCE

std::vector<TrainExample> ance_refresh(const EncoderParams<float>& params, const TrainingData& data,
                                       const DocView& view, const std::vector<TrainExample>& fallback,
                                       std::size_t epoch, std::size_t J, std::size_t pool, std::uint64_t seed) {
  const auto inputs = doc_inputs(*data.bundle, *data.vocab, view, params.config.max_len);
  const VectorIndex idx = build_vector_index(inputs, params, view.tag());
  std::vector<TrainExample> out(fallback.size());
  parallel_for(fallback.size(), [&](std::size_t i) {
    const TrainExample& old = fallback[i];
    const TokenSeq q = tokenize(data.bundle->queries.at(old.query_id), *data.vocab, SourceKind::query);
    const RowVec<float> qv = encode_query(params, q);
    const auto hits = nn_search(idx, std::span<const float>(qv.data(), static_cast<std::size_t>(qv.size())), pool + 1);
    std::vector<std::string> candidates;
    for (const auto& e : hits.entries)
      if (e.doc_id != old.positive_doc_id && candidates.size() < pool) candidates.push_back(e.doc_id);

    // Uniform sample of J positions without replacement, kept in rank order.
    std::vector<std::size_t> positions(candidates.size());
    for (std::size_t p = 0; p < positions.size(); ++p) positions[p] = p;
    Rng rng(derive_seed(seed, epoch, hash_string(old.query_id)));
    rng.shuffle(positions);
    positions.resize(std::min(J, positions.size()));
    std::sort(positions.begin(), positions.end());

    TrainExample ex;
    ex.query_id = old.query_id;
    ex.positive_doc_id = old.positive_doc_id;
    ex.epoch_minted = epoch;
    for (std::size_t p : positions) ex.negative_doc_ids.push_back(candidates[p]);
    for (const auto& d : old.negative_doc_ids) {
      if (ex.negative_doc_ids.size() >= J) break;
      if (std::find(ex.negative_doc_ids.begin(), ex.negative_doc_ids.end(), d) == ex.negative_doc_ids.end())
        ex.negative_doc_ids.push_back(d);
    }
    out[i] = std::move(ex);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using Clock = std::chrono::steady_clock;

struct ExampleResult {
  double loss = 0.0;
};

// Loss and gradient of one re-ranker example (pairwise cross-entropy over 1 + J pairs).
double rerank_example(const EncoderParams<float>& params, const TokenSeq& q, const std::vector<const TokenSeq*>& docs,
                      Rng& rng, EncoderParams<float>& grads) {
  std::vector<ForwardPass<float>> passes(docs.size());
  std::vector<double> logits(docs.size());
  std::vector<RowVec<float>> cls(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    cls[i] = forward<float>(params, frame_pair(q, *docs[i], params.config.max_len), &passes[i], &rng);
    logits[i] = static_cast<double>(rerank_logit<float>(params, cls[i]));
  }
  const LossGrad lg =
      rerank_loss_from_logits(logits[0], std::span<const double>(logits.data() + 1, logits.size() - 1));
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const float g = static_cast<float>(i == 0 ? lg.d_pos : lg.d_negs[i - 1]);
    grads.head_w.row(0) += g * cls[i];
    grads.head_b(0, 0) += g;
    const RowVec<float> d_cls = g * params.head_w.row(0);
    backward<float>(params, passes[i], d_cls, grads);
  }
  return lg.loss;
}

// Loss and gradient of one dual-encoder example (softmax over 1 + J docs).
double dr_example(const EncoderParams<float>& params, const SequenceInput& q,
                  const std::vector<const SequenceInput*>& docs, Rng& rng, EncoderParams<float>& grads) {
  ForwardPass<float> qpass;
  const RowVec<float> qv = forward<float>(params, q, &qpass, &rng);
  std::vector<ForwardPass<float>> passes(docs.size());
  std::vector<RowVec<float>> dv(docs.size());
  std::vector<double> sims(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    dv[i] = forward<float>(params, *docs[i], &passes[i], &rng);
    sims[i] = similarity<float>(qv, dv[i]);
  }
  const LossGrad lg = dr_loss_grad(sims[0], std::span<const double>(sims.data() + 1, sims.size() - 1));
  RowVec<float> dq = RowVec<float>::Zero(qv.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const float g = static_cast<float>(i == 0 ? lg.d_pos : lg.d_negs[i - 1]);
    dq += g * dv[i];
    const RowVec<float> dd = g * qv;
    backward<float>(params, passes[i], dd, grads);
  }
  backward<float>(params, qpass, dq, grads);
  return lg.loss;
}

void append_log(const std::filesystem::path& path, const EpochLog& e) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append training log " + path.string());
  out << nlohmann::json{{"epoch", e.epoch},
                        {"loss", e.loss},
                        {"validation_metric", e.validation_metric},
                        {"provenance", e.provenance},
                        {"seconds", e.seconds}}
             .dump()
      << '\n';
}

// The shared epoch loop. `step` computes one example's loss and gradient,
// `validate` the checkpoint-selection metric, `refresh` (optional) a new
// negative pool before epoch e >= 1.
template <typename Step, typename Validate, typename Refresh>
TrainState run_training(const TrainingData& data, const TrainConfig& cfg, bool higher_is_better, Step&& step,
                        Validate&& validate, Refresh&& refresh) {
  EncoderConfig ec = cfg.encoder;
  ec.vocab_size = data.vocab->size();
  ec.seed = derive_seed(cfg.seed, 0x696e6974);
  ec.validate();

  TrainState st;
  st.seed = cfg.seed;
  auto params = EncoderParams<float>::init(ec);
  auto opt = OptimizerState<float>::create(params, cfg.effective_learning_rate(), cfg.weight_decay);
  st.examples = mine_bm25_negatives(*data.bundle, *data.vocab, *data.bm25, cfg.negatives,
                                    derive_seed(cfg.seed, 0x626d3235), data.bundle->split.train);
  const std::vector<TrainExample> bm25_pool = st.examples;
  st.best_validation_metric = higher_is_better ? -1.0 : std::numeric_limits<double>::infinity();
  st.params = params;

  const std::size_t B = cfg.batch_size;
  std::vector<EncoderParams<float>> grads(B, EncoderParams<float>::zeros(ec));
  auto total = EncoderParams<float>::zeros(ec);
  std::vector<double> losses(B);

  // Linear warmup, then linear decay to zero over the remaining steps.
  const std::size_t steps_per_epoch = (st.examples.size() + B - 1) / B;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const auto warmup = static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(total_steps));
  std::size_t step_no = 0;
  const double peak = cfg.effective_learning_rate();
  auto learning_rate = [&](std::size_t s) {
    if (s < warmup) return peak * static_cast<double>(s + 1) / static_cast<double>(warmup);
    if (!cfg.linear_decay) return peak;
    return peak * static_cast<double>(total_steps - s) / static_cast<double>(total_steps - warmup);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    if (epoch > 0 && cfg.ance) {
      st.examples = refresh(params, bm25_pool, epoch);
      st.provenance = "ance@" + std::to_string(epoch);
    }
    std::vector<std::size_t> order(st.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(cfg.seed, 0x73687566, epoch));
    shuffler.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t count = std::min(B, order.size() - start);
      parallel_for(count, [&](std::size_t j) {
        grads[j].set_zero();
        Rng drop(derive_seed(cfg.seed, epoch, start + j));
        losses[j] = step(params, st.examples[order[start + j]], drop, grads[j]);
      });
      total.set_zero();
      std::vector<Mat<float>*> dst;
      total.visit([&](const std::string&, Mat<float>& m) { dst.push_back(&m); });
      const float scale = 1.0f / static_cast<float>(count);
      for (std::size_t j = 0; j < count; ++j) {
        if (!std::isfinite(losses[j])) {
          if (!cfg.checkpoint_path.empty()) {
            CheckpointMeta dump = st.meta;
            dump.epoch = epoch;
            save_checkpoint(cfg.checkpoint_path.string() + ".diverged", params, dump);
          }
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        }
        epoch_loss += losses[j];
        std::size_t k = 0;
        grads[j].visit([&](const std::string&, const Mat<float>& m) { *dst[k++] += m; });
      }
      for (auto* m : dst) *m *= scale;
      opt.learning_rate = learning_rate(step_no++);
      adamw_step(params, total, opt);
    }

    const double metric = validate(params);
    EpochLog log;
    log.epoch = epoch + 1;
    log.loss = epoch_loss / static_cast<double>(std::max<std::size_t>(1, order.size()));
    log.validation_metric = metric;
    log.provenance = st.provenance;
    log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    st.log.push_back(log);
    append_log(cfg.log_path, log);
    if (cfg.verbose)
      std::cerr << cfg.model << (cfg.ance ? "+ance" : "") << " epoch " << log.epoch << " loss " << log.loss
                << " validation " << metric << " (" << log.seconds << " s)\n";

    const bool better = higher_is_better ? metric > st.best_validation_metric : metric < st.best_validation_metric;
    if (better) {
      st.best_validation_metric = metric;
      st.best_epoch = epoch + 1;
      st.params = params;
      st.meta.model = cfg.model;
      st.meta.fusion = to_string(cfg.view.mode);
      st.meta.n = cfg.view.mode == FusionMode::early ? cfg.view.n : 1;
      st.meta.ance = cfg.ance;
      st.meta.epoch = epoch + 1;
      st.meta.validation_metric = metric;
      st.meta.negative_provenance = st.provenance;
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(cfg.checkpoint_path, params, st.meta);
        st.best_checkpoint_path = cfg.checkpoint_path;
      }
    }
    st.epoch = epoch + 1;
  }
  st.last_params = std::move(params);
  return st;
}

}  // namespace

TrainState train_reranker(const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.model != "rerank") throw ConfigError("train_reranker: config.model must be rerank");
  const auto docs = doc_texts(*data.bundle, *data.vocab, cfg.view);
  const auto queries = query_seqs(*data.bundle, *data.vocab);
  const RerankValidation val = mint_rerank_validation(data);
  auto step = [&](const EncoderParams<float>& p, const TrainExample& ex, Rng& rng, EncoderParams<float>& g) {
    std::vector<const TokenSeq*> ds{&docs.at(ex.positive_doc_id)};
    for (const auto& n : ex.negative_doc_ids) ds.push_back(&docs.at(n));
    return rerank_example(p, queries.at(ex.query_id), ds, rng, g);
  };
  auto validate = [&](const EncoderParams<float>& p) { return rerank_validation_loss(p, data, docs, val); };
  auto no_refresh = [](const EncoderParams<float>&, const std::vector<TrainExample>& pool, std::size_t) {
    return pool;
  };
  return run_training(data, cfg, false, step, validate, no_refresh);
}

TrainState train_dr(const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.model != "dr") throw ConfigError("train_dr: config.model must be dr");
  const auto inputs = doc_inputs(*data.bundle, *data.vocab, cfg.view, cfg.encoder.max_len);
  std::map<std::string, SequenceInput> qinputs;
  for (const auto& [qid, seq] : query_seqs(*data.bundle, *data.vocab))
    qinputs.emplace(qid, frame_text(seq, cfg.encoder.max_len));
  const DrValidation val = mint_dr_validation(data, cfg.validation_candidates, derive_seed(cfg.seed, 0x76616c));
  auto step = [&](const EncoderParams<float>& p, const TrainExample& ex, Rng& rng, EncoderParams<float>& g) {
    const FusedBatch b = fuse_training_batch(inputs, ex.positive_doc_id, ex.negative_doc_ids);
    std::vector<const SequenceInput*> ds{&b.positive};
    for (const auto& n : b.negatives) ds.push_back(&n);
    return dr_example(p, qinputs.at(ex.query_id), ds, rng, g);
  };
  auto validate = [&](const EncoderParams<float>& p) { return dr_validation_mrr(p, data, inputs, val); };
  auto refresh = [&](const EncoderParams<float>& p, const std::vector<TrainExample>& pool, std::size_t epoch) {
    return ance_refresh(p, data, cfg.view, pool, epoch, cfg.negatives, cfg.ance_pool,
                        derive_seed(cfg.seed, 0x616e6365));
  };
  return run_training(data, cfg, true, step, validate, refresh);
}

// ---------------------------------------------------------------------------
// Search

RowVec<float> encode_query(const EncoderParams<float>& params, const TokenSeq& query) {
  return forward<float>(params, frame_text(query, params.config.max_len));
}

RankedList search_rerank(const TokenSeq& query, const InvertedIndex& bm25, const EncoderParams<float>& params,
                         const std::map<std::string, TokenSeq>& docs, std::size_t k) {
  RankedList out = bm25_search(bm25, query, k);
  if (query.ids.empty()) return out;
  parallel_for(out.entries.size(), [&](std::size_t i) {
    auto& e = out.entries[i];
    auto it = docs.find(e.doc_id);
    if (it == docs.end()) throw LookupError("search_rerank: no text for " + e.doc_id);
    e.score = rerank_score(params, query, it->second);
  });
  std::sort(out.entries.begin(), out.entries.end(), canonical_before);
  return out;
}

RankedList search_dr(const TokenSeq& query, const std::vector<const VectorIndex*>& indexes,
                     const EncoderParams<float>& params, const FusionConfig& fusion, std::size_t k) {
  fusion.validate();
  if (indexes.empty()) throw ConfigError("search_dr: no index");
  if (fusion.mode == FusionMode::late) {
    if (indexes.size() != fusion.n)
      throw ConfigError("search_dr: late fusion with n=" + std::to_string(fusion.n) + " needs " +
                        std::to_string(fusion.n) + " indexes, got " + std::to_string(indexes.size()));
  } else if (indexes.size() != 1) {
    throw ConfigError("search_dr: fusion mode " + to_string(fusion.mode) + " takes exactly one index");
  }
  const RowVec<float> q = encode_query(params, query);
  const std::span<const float> qs(q.data(), static_cast<std::size_t>(q.size()));
  if (fusion.mode == FusionMode::late) return late_fuse_search(indexes, qs, k, fusion.scope, fusion.topk_per_index);
  return nn_search(*indexes.front(), qs, k);
}

}  // namespace scr
