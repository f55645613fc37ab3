#include "scr/grid.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "scr/eval.hpp"
#include "scr/fusion.hpp"
#include "scr/index.hpp"

namespace scr {

void add_default_conditions(CorpusBundle& bundle, std::uint64_t seed, std::size_t samples) {
  add_condition(bundle, "std", kStandardWer, WerMeasure::one_best, kMaxNBest, derive_seed(seed, 0x737464), samples);
  add_condition(bundle, "semi", kSemiSupervisedWer, WerMeasure::one_best, kMaxNBest, derive_seed(seed, 0x73656d69), samples);
  add_condition(bundle, "oracle", kOracleWer, WerMeasure::oracle, 1, derive_seed(seed, 0x6f7261), samples);
}

std::string table2_key(const std::string& mode, std::size_t n) { return mode + ":" + std::to_string(n); }

double percent_change(double baseline, double value) {
  return baseline > 0 ? (value - baseline) / baseline * 100.0 : 0.0;
}

std::string GridCell::mark() const {
  if (!present || baseline.empty()) return "";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

// ---------------------------------------------------------------------------
// Config

namespace {
double preset_lr(const std::string& model) {
  TrainConfig t;
  t.model = model;
  return t.effective_learning_rate();
}
}  // namespace

GridConfig GridConfig::from_json(const nlohmann::json& j) {
  GridConfig c;
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<std::string>();
  if (j.contains("corpus_options")) {
    const auto& o = j.at("corpus_options");
    auto& co = c.corpus_options;
    co.num_docs = o.value("num_docs", co.num_docs);
    co.vocab_size = o.value("vocab_size", co.vocab_size);
    co.seed = o.value("seed", co.seed);
    co.eval_queries = o.value("eval_queries", co.eval_queries);
    co.validation_queries = o.value("validation_queries", co.validation_queries);
  }
  c.condition_samples = j.value("condition_samples", c.condition_samples);
  c.seeds = j.value("seeds", c.seeds);
  c.dr_epochs = j.value("dr_epochs", c.dr_epochs);
  c.rerank_epochs = j.value("rerank_epochs", c.rerank_epochs);
  c.systems = j.value("systems", c.systems);
  c.conditions = j.value("conditions", c.conditions);
  c.fusion_models = j.value("fusion_models", c.fusion_models);
  c.fusion_conditions = j.value("fusion_conditions", c.fusion_conditions);
  c.n_values = j.value("n_values", c.n_values);
  c.fusion_modes = j.value("fusion_modes", c.fusion_modes);
  c.rerank_depth = j.value("rerank_depth", c.rerank_depth);
  c.depth = j.value("depth", c.depth);
  if (j.contains("work_dir")) c.work_dir = j.at("work_dir").get<std::string>();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.negatives = t.value("negatives", c.train.negatives);
    c.train.ance_pool = t.value("ance_pool", c.train.ance_pool);
    c.train.validation_candidates = t.value("validation_candidates", c.train.validation_candidates);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.warmup_fraction = t.value("warmup_fraction", c.train.warmup_fraction);
    c.train.encoder.d_model = t.value("d_model", c.train.encoder.d_model);
    c.train.encoder.n_layers = t.value("n_layers", c.train.encoder.n_layers);
    c.train.encoder.n_heads = t.value("n_heads", c.train.encoder.n_heads);
    c.train.encoder.d_ff = t.value("d_ff", c.train.encoder.d_ff);
    c.train.encoder.max_len = t.value("max_len", c.train.encoder.max_len);
    c.train.encoder.dropout_rate = t.value("dropout_rate", c.train.encoder.dropout_rate);
  }
  for (std::size_t n : c.n_values)
    if (n < 1 || n > kMaxNBest) throw ConfigError("grid: n_values must lie in [1, 20]");
  for (const auto& m : c.fusion_modes)
    if (m != "early" && m != "late") throw ConfigError("grid: fusion mode must be early or late");
  if (c.seeds.empty()) throw ConfigError("grid: at least one seed is required");
  return c;
}

nlohmann::json GridConfig::to_json() const {
  return nlohmann::json{
      {"corpus", corpus.string()},
      {"corpus_options",
       {{"num_docs", corpus_options.num_docs},
        {"vocab_size", corpus_options.vocab_size},
        {"seed", corpus_options.seed},
        {"eval_queries", corpus_options.eval_queries},
        {"validation_queries", corpus_options.validation_queries}}},
      {"condition_samples", condition_samples},
      {"seeds", seeds},
      {"dr_epochs", dr_epochs},
      {"rerank_epochs", rerank_epochs},
      {"systems", systems},
      {"conditions", conditions},
      {"fusion_models", fusion_models},
      {"fusion_conditions", fusion_conditions},
      {"n_values", n_values},
      {"fusion_modes", fusion_modes},
      {"rerank_depth", rerank_depth},
      {"depth", depth},
      {"work_dir", work_dir.string()},
      {"train",
       {{"batch_size", train.batch_size},
        {"negatives", train.negatives},
        {"ance_pool", train.ance_pool},
        {"validation_candidates", train.validation_candidates},
        {"weight_decay", train.weight_decay},
        {"warmup_fraction", train.warmup_fraction},
        {"learning_rate_rerank", preset_lr("rerank")},
        {"learning_rate_dr", preset_lr("dr")},
        {"d_model", train.encoder.d_model},
        {"n_layers", train.encoder.n_layers},
        {"n_heads", train.encoder.n_heads},
        {"d_ff", train.encoder.d_ff},
        {"max_len", train.encoder.max_len},
        {"dropout_rate", train.encoder.dropout_rate}}}};
}

// ---------------------------------------------------------------------------
// Running

namespace {

// Per-seed reciprocal ranks of one cell, later pooled.
struct Accumulator {
  std::vector<std::vector<double>> per_seed;
  std::string absent_reason;
};

GridCell finish(const Accumulator& acc) {
  GridCell c;
  if (!acc.absent_reason.empty() || acc.per_seed.empty()) {
    c.absent_reason = acc.absent_reason.empty() ? "not run" : acc.absent_reason;
    return c;
  }
  c.present = true;
  for (const auto& rr : acc.per_seed) {
    c.seed_mrr.push_back(mean(rr));
    c.rr.insert(c.rr.end(), rr.begin(), rr.end());
  }
  c.mrr = mean(c.seed_mrr);
  return c;
}

void compare_to(GridCell& cell, const GridCell& base, const std::string& label, bool percent) {
  if (!cell.present || !base.present || cell.rr.size() != base.rr.size()) return;
  cell.baseline = label;
  if (cell.rr.size() >= 2) {
    const auto tt = paired_ttest(cell.rr, base.rr);
    cell.t = tt.t;
    cell.p = tt.p;
  }
  if (percent) cell.percent_change = percent_change(base.mrr, cell.mrr);
}

class GridRunner {
 public:
  GridRunner(const GridConfig& cfg, const CorpusBundle& bundle, const ProgressFn& progress)
      : cfg_(cfg), bundle_(bundle), progress_(progress), vocab_(build_vocab(bundle)) {
    queries_ = query_seqs(bundle_, vocab_);
    eval_ = bundle_.split.eval;
    if (eval_.empty()) throw ProtocolError("grid: the corpus has no eval queries");
  }

  GridReport run() {
    const auto t0 = std::chrono::steady_clock::now();
    GridReport report;
    report.config = cfg_;
    report.eval_queries = eval_;

    std::map<std::string, std::map<std::string, Accumulator>> t1;
    std::map<std::string, std::map<std::string, Accumulator>> t2;

    for (const auto& cond : cfg_.conditions)
      if (!available(cond))
        for (const auto& sys : cfg_.systems) t1[sys][cond].absent_reason = "corpus lacks condition " + cond;

    for (std::uint64_t seed : cfg_.seeds) {
      say("seed " + std::to_string(seed));
      std::map<std::string, EncoderParams<float>> models;
      for (const auto& sys : needed_models()) {
        try {
          models.emplace(sys, model(sys, seed));
        } catch (const std::exception& e) {
          say("  " + sys + " unavailable: " + e.what());
        }
      }

      for (const auto& cond : cfg_.conditions) {
        if (!available(cond)) continue;
        for (const auto& sys : cfg_.systems) {
          auto& acc = t1[sys][cond];
          if (!acc.absent_reason.empty()) continue;
          if (sys != "bm25" && !models.count(sys)) {
            acc.absent_reason = "no trained " + sys + " model";
            continue;
          }
          say("  " + sys + " on " + cond);
          acc.per_seed.push_back(one_best_rr(sys, cond, seed, models));
        }
      }

      for (const auto& m : cfg_.fusion_models) {
        for (const auto& cond : cfg_.fusion_conditions) {
          auto& row = t2[m + "/" + cond];
          const bool ok = available(cond) && cond != "clean" && models.count(m);
          for (const auto& mode : cfg_.fusion_modes) {
            for (std::size_t n : cfg_.n_values) {
              auto& acc = row[table2_key(mode, n)];
              if (!ok) {
                acc.absent_reason = models.count(m) ? "corpus lacks N-best condition " + cond : "no trained " + m + " model";
                continue;
              }
              say("  " + m + " " + mode + " N=" + std::to_string(n) + " on " + cond);
              acc.per_seed.push_back(fused_rr(m, cond, mode, n, seed, models.at(m)));
            }
          }
        }
      }
      dense_cache_.clear();
    }

    for (const auto& [sys, row] : t1)
      for (const auto& [cond, acc] : row) report.table1[sys][cond] = finish(acc);
    for (const auto& [sys, row] : report.table1) {
      if (sys == "bm25") continue;
      for (auto& [cond, cell] : report.table1[sys]) {
        auto it = report.table1.find("bm25");
        if (it != report.table1.end() && it->second.count(cond))
          compare_to(cell, it->second.at(cond), "bm25/" + cond, true);
      }
    }
    for (const auto& [key, row] : t2)
      for (const auto& [cell_key, acc] : row) report.table2[key][cell_key] = finish(acc);
    for (auto& [key, row] : report.table2) {
      for (auto& [cell_key, cell] : row) {
        const std::string mode = cell_key.substr(0, cell_key.find(':'));
        const std::string base_key = table2_key(mode, 1);
        if (cell_key == base_key || !row.count(base_key)) continue;
        compare_to(cell, row.at(base_key), key + " 1-best", true);
      }
    }
    report.gaps = gaps(report);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }

 private:
  bool available(const std::string& cond) const { return cond == "clean" || bundle_.conditions.count(cond); }

  std::vector<std::string> needed_models() const {
    std::set<std::string> s;
    for (const auto& sys : cfg_.systems)
      if (sys != "bm25") s.insert(sys);
    for (const auto& m : cfg_.fusion_models) s.insert(m);
    return {s.begin(), s.end()};
  }

  void say(const std::string& msg) const {
    if (progress_) progress_(msg);
  }

  const InvertedIndex& bm25(const std::string& cond) {
    auto it = bm25_.find(cond);
    if (it == bm25_.end()) {
      texts_[cond] = doc_texts(bundle_, vocab_, DocView{.condition = cond});
      it = bm25_.emplace(cond, build_bm25(texts_.at(cond))).first;
    }
    return it->second;
  }

  // Trains (or loads from the work directory) one system for one seed.
  // Every model trains on clean document text.
  EncoderParams<float> model(const std::string& sys, std::uint64_t seed) {
    if (sys != "rerank" && sys != "dr" && sys != "dr-ance") throw ConfigError("grid: unknown system " + sys);
    TrainConfig tc = cfg_.train;
    tc.model = sys == "rerank" ? "rerank" : "dr";
    tc.ance = sys == "dr-ance";
    tc.epochs = sys == "rerank" ? cfg_.rerank_epochs : cfg_.dr_epochs;
    tc.seed = seed;
    tc.view = DocView{};
    std::filesystem::path ckpt;
    if (!cfg_.work_dir.empty()) {
      const auto dir = cfg_.work_dir / ("seed" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      ckpt = dir / (sys + ".ckpt");
      if (std::filesystem::exists(ckpt)) {
        CheckpointMeta meta;
        auto params = load_checkpoint(ckpt, &meta);
        if (meta.model == tc.model && meta.ance == tc.ance) {
          say("  loaded " + ckpt.string());
          return params;
        }
      }
      tc.checkpoint_path = ckpt;
      tc.log_path = dir / (sys + ".log.jsonl");
      std::filesystem::remove(tc.log_path);
    }
    say("  training " + sys);
    const TrainingData data{&bundle_, &vocab_, &bm25("clean")};
    TrainState st = tc.model == "rerank" ? train_reranker(data, tc) : train_dr(data, tc);
    return st.params;
  }

  std::vector<double> score_run(const std::string& tag, std::uint64_t seed,
                                const std::function<RankedList(const std::string&)>& search) {
    RunFile run;
    run.system_tag = tag;
    std::vector<RankedList> lists(eval_.size());
    for (std::size_t i = 0; i < eval_.size(); ++i) {
      lists[i] = search(eval_[i]);
      lists[i].query_id = eval_[i];
    }
    for (auto& l : lists) run.rankings.emplace(l.query_id, std::move(l));
    if (!cfg_.work_dir.empty()) {
      const auto dir = cfg_.work_dir / ("seed" + std::to_string(seed)) / "runs";
      std::filesystem::create_directories(dir);
      write_run(dir / (tag + ".run"), run);
    }
    const auto rr = reciprocal_ranks(run, bundle_.qrels, &eval_);
    std::vector<double> out;
    out.reserve(eval_.size());
    for (const auto& q : eval_) out.push_back(rr.at(q));
    return out;
  }

  const VectorIndex& dense(const std::string& sys, const DocView& view, const EncoderParams<float>& params) {
    const std::string key = sys + "|" + view.tag();
    auto it = dense_cache_.find(key);
    if (it == dense_cache_.end())
      it = dense_cache_
               .emplace(key, build_vector_index(doc_inputs(bundle_, vocab_, view, params.config.max_len), params,
                                                view.tag()))
               .first;
    return it->second;
  }

  std::vector<double> one_best_rr(const std::string& sys, const std::string& cond, std::uint64_t seed,
                                  const std::map<std::string, EncoderParams<float>>& models) {
    const std::string tag = sys + "_" + cond;
    if (sys == "bm25") {
      const auto& idx = bm25(cond);
      return score_run(tag, seed, [&](const std::string& q) { return bm25_search(idx, queries_.at(q), cfg_.depth); });
    }
    const auto& params = models.at(sys);
    if (sys == "rerank") {
      const auto& idx = bm25(cond);
      const auto& docs = texts_.at(cond);
      return score_run(tag, seed, [&](const std::string& q) {
        return search_rerank(queries_.at(q), idx, params, docs, cfg_.rerank_depth);
      });
    }
    const VectorIndex& idx = dense(sys, DocView{.condition = cond}, params);
    return score_run(tag, seed, [&](const std::string& q) {
      return search_dr(queries_.at(q), {&idx}, params, FusionConfig{}, cfg_.depth);
    });
  }

  std::vector<double> fused_rr(const std::string& sys, const std::string& cond, const std::string& mode,
                               std::size_t n, std::uint64_t seed, const EncoderParams<float>& params) {
    const std::string tag = sys + "_" + cond + "_" + mode + std::to_string(n);
    FusionConfig fc;
    std::vector<const VectorIndex*> indexes;
    if (n == 1) {
      indexes.push_back(&dense(sys, DocView{.condition = cond}, params));
    } else if (mode == "early") {
      indexes.push_back(&dense(sys, DocView{.condition = cond, .mode = FusionMode::early, .n = n}, params));
    } else {
      fc.mode = FusionMode::late;
      fc.n = n;
      for (std::size_t r = 0; r < n; ++r)
        indexes.push_back(&dense(sys, DocView{.condition = cond, .hyp_rank = r}, params));
    }
    return score_run(tag, seed, [&](const std::string& q) {
      return search_dr(queries_.at(q), indexes, params, fc, cfg_.depth);
    });
  }

  std::vector<GapClosure> gaps(const GridReport& r) const {
    std::vector<GapClosure> out;
    for (const auto& m : cfg_.fusion_models) {
      auto t1 = r.table1.find(m);
      if (t1 == r.table1.end() || !t1->second.count("clean") || !t1->second.at("clean").present) continue;
      for (const auto& cond : cfg_.fusion_conditions) {
        auto row = r.table2.find(m + "/" + cond);
        if (row == r.table2.end()) continue;
        GapClosure g;
        g.model = m;
        g.condition = cond;
        g.clean = t1->second.at("clean").mrr;
        const GridCell* one = nullptr;
        g.best_fused = -1.0;
        for (const auto& [key, cell] : row->second) {
          if (!cell.present) continue;
          if (key.ends_with(":1")) {
            one = &cell;
            continue;
          }
          if (cell.mrr > g.best_fused) {
            g.best_fused = cell.mrr;
            g.best_fused_cell = key;
          }
        }
        if (!one || g.best_fused < 0) continue;
        g.one_best = one->mrr;
        g.gap = g.clean - g.one_best;
        g.fused_gap = g.clean - g.best_fused;
        g.ratio = g.gap != 0.0 ? g.fused_gap / g.gap : std::numeric_limits<double>::quiet_NaN();
        g.reduction = 1.0 - g.ratio;
        out.push_back(g);
      }
    }
    return out;
  }

  const GridConfig& cfg_;
  const CorpusBundle& bundle_;
  ProgressFn progress_;
  Vocabulary vocab_;
  std::map<std::string, TokenSeq> queries_;
  std::vector<std::string> eval_;
  std::map<std::string, InvertedIndex> bm25_;
  std::map<std::string, std::map<std::string, TokenSeq>> texts_;
  std::map<std::string, VectorIndex> dense_cache_;
};

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x * 100.0);
  return buf;
}

std::string signed_pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", x);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

nlohmann::json cell_json(const GridCell& c) {
  if (!c.present) return nlohmann::json{{"present", false}, {"absent_reason", c.absent_reason}};
  nlohmann::json j{{"present", true}, {"mrr", c.mrr}, {"seed_mrr", c.seed_mrr}, {"queries", c.rr.size()}};
  if (!c.baseline.empty()) {
    j["baseline"] = c.baseline;
    j["t"] = std::isnan(c.t) ? nlohmann::json() : nlohmann::json(c.t);
    j["p"] = c.p;
    j["mark"] = c.mark();
    j["percent_change"] = c.percent_change;
  }
  return j;
}

}  // namespace

GridReport run_experiment_grid(const GridConfig& config, const CorpusBundle& bundle, const ProgressFn& progress) {
  GridRunner runner(config, bundle, progress);
  return runner.run();
}

GridReport run_experiment_grid(const GridConfig& config, const ProgressFn& progress) {
  CorpusBundle bundle;
  if (!config.corpus.empty()) {
    bundle = import_bundle(config.corpus);
  } else {
    if (progress) progress("generating corpus and noise conditions");
    bundle = generate_corpus(config.corpus_options);
    add_default_conditions(bundle, config.corpus_options.seed, config.condition_samples);
  }
  return run_experiment_grid(config, bundle, progress);
}

std::string GridReport::text() const {
  std::ostringstream out;
  out << "MRR (x100) over " << eval_queries.size() << " eval queries, mean of " << config.seeds.size()
      << " seed(s). * p<0.05, ** p<0.01 (paired two-tailed t-test on pooled per-query reciprocal ranks).\n\n";

  out << "Transcript quality (vs BM25 on the same transcripts)\n";
  out << pad("system", 10);
  for (const auto& cond : config.conditions) out << pad(cond, 12);
  out << "\n";
  for (const auto& sys : config.systems) {
    auto row = table1.find(sys);
    out << pad(sys, 10);
    for (const auto& cond : config.conditions) {
      std::string s = "absent";
      if (row != table1.end() && row->second.count(cond) && row->second.at(cond).present)
        s = pct(row->second.at(cond).mrr) + row->second.at(cond).mark();
      out << pad(s, 12);
    }
    out << "\n";
  }

  out << "\nN-best fusion (% change and marks vs the 1-best system)\n";
  for (const auto& [key, row] : table2) {
    out << key << "\n";
    for (const auto& mode : config.fusion_modes) {
      for (std::size_t n : config.n_values) {
        const std::string k = table2_key(mode, n);
        auto it = row.find(k);
        out << "  " << pad(n == 1 ? "1-best" : mode + " N=" + std::to_string(n), 14);
        if (it == row.end() || !it->second.present) {
          out << "absent";
          if (it != row.end()) out << " (" << it->second.absent_reason << ")";
        } else {
          out << pad(pct(it->second.mrr) + it->second.mark(), 10);
          if (n != 1) out << signed_pct(it->second.percent_change) << "%";
        }
        out << "\n";
      }
    }
  }

  if (!gaps.empty()) {
    out << "\nGap to clean transcripts (published reference: 14.32% -> 6.58%)\n";
    for (const auto& g : gaps) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "  %s/%s: clean %s, 1-best %s, best fused %s (%s); gap %s -> %s, ratio %.3f, reduction %.1f%%\n",
                    g.model.c_str(), g.condition.c_str(), pct(g.clean).c_str(), pct(g.one_best).c_str(),
                    pct(g.best_fused).c_str(), g.best_fused_cell.c_str(), pct(g.gap).c_str(),
                    pct(g.fused_gap).c_str(), g.ratio, g.reduction * 100.0);
      out << buf;
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "\nwall time %.1f s\n", seconds);
  out << buf;
  return out.str();
}

nlohmann::json GridReport::json() const {
  nlohmann::json j;
  j["config"] = config.to_json();
  j["eval_queries"] = eval_queries.size();
  for (const auto& [sys, row] : table1)
    for (const auto& [cond, cell] : row) j["table1"][sys][cond] = cell_json(cell);
  for (const auto& [key, row] : table2)
    for (const auto& [k, cell] : row) j["table2"][key][k] = cell_json(cell);
  j["gaps"] = nlohmann::json::array();
  for (const auto& g : gaps)
    j["gaps"].push_back({{"model", g.model},
                         {"condition", g.condition},
                         {"clean", g.clean},
                         {"one_best", g.one_best},
                         {"best_fused", g.best_fused},
                         {"best_fused_cell", g.best_fused_cell},
                         {"gap", g.gap},
                         {"fused_gap", g.fused_gap},
                         {"ratio", std::isnan(g.ratio) ? nlohmann::json() : nlohmann::json(g.ratio)},
                         {"reduction", std::isnan(g.reduction) ? nlohmann::json() : nlohmann::json(g.reduction)}});
  j["seconds"] = seconds;
  return j;
}

}  // namespace scr
