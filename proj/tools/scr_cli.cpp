#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "scr/checks.hpp"
#include "scr/corpus.hpp"
#include "scr/eval.hpp"
#include "scr/fusion.hpp"
#include "scr/grid.hpp"
#include "scr/index.hpp"
#include "scr/pipeline.hpp"

using namespace scr;

namespace {

std::vector<std::string> split_ids(const CorpusBundle& b, const std::string& which) {
  if (which == "train") return b.split.train;
  if (which == "validation") return b.split.validation;
  if (which == "eval") return b.split.eval;
  if (which == "all") {
    std::vector<std::string> out;
    for (const auto& [q, _] : b.queries) out.push_back(q);
    return out;
  }
  throw ConfigError("unknown split " + which);
}

// Qrels come either from a qrels file or straight from a corpus bundle.
std::map<std::string, std::string> load_qrels(const std::string& path) {
  if (path.ends_with(".jsonl")) return import_bundle(path).qrels;
  return read_qrels(path);
}

FusionMode parse_view_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "early") return FusionMode::early;
  throw ConfigError("--fusion must be none or early");
}

Tokens split_words(const std::string& s) {
  Tokens out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) {
    for (char& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(w);
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_eval(const RunFile& run, const std::map<std::string, std::string>& qrels) {
  std::vector<std::string> queries;
  for (const auto& [q, _] : run.rankings) queries.push_back(q);
  const auto rr = reciprocal_ranks(run, qrels, &queries);
  std::size_t found = 0;
  for (const auto& [_, v] : rr) found += v > 0;
  std::printf("queries %zu\nMRR %.4f\nfound %zu\n", queries.size(), mrr(run, qrels, &queries), found);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spoken-content retrieval over noisy N-best transcripts"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus bundle");
  CorpusOptions gen_opts;
  std::string gen_out, gen_qrels;
  bool gen_conditions = false;
  std::size_t gen_samples = kDefaultSamples;
  gen->add_option("--docs", gen_opts.num_docs, "documents")->capture_default_str();
  gen->add_option("--vocab", gen_opts.vocab_size, "word types")->capture_default_str();
  gen->add_option("--seed", gen_opts.seed)->capture_default_str();
  gen->add_option("--eval-queries", gen_opts.eval_queries)->capture_default_str();
  gen->add_option("--validation-queries", gen_opts.validation_queries)->capture_default_str();
  gen->add_option("--out", gen_out, "bundle JSONL")->required();
  gen->add_option("--qrels", gen_qrels, "also write a qrels file");
  gen->add_flag("--with-conditions", gen_conditions, "add the std, semi and oracle transcript conditions");
  gen->add_option("--samples", gen_samples, "calibration samples per condition")->capture_default_str();
  gen->callback([&] {
    CorpusBundle b = generate_corpus(gen_opts);
    if (gen_conditions) add_default_conditions(b, gen_opts.seed, gen_samples);
    export_bundle(b, gen_out);
    if (!gen_qrels.empty()) write_qrels(gen_qrels, b.qrels);
    std::printf("%zu docs, %zu queries (%zu train / %zu validation / %zu eval), %zu conditions\n", b.docs.size(),
                b.queries.size(), b.split.train.size(), b.split.validation.size(), b.split.eval.size(),
                b.conditions.size());
  });

  // make-nbest
  auto* nb = app.add_subcommand("make-nbest", "Add a calibrated N-best noise condition to a bundle");
  std::string nb_corpus, nb_out, nb_wer = "0.311", nb_name, nb_measure;
  double nb_custom = 0.0;
  std::size_t nb_n = kMaxNBest, nb_samples = kDefaultSamples;
  std::uint64_t nb_seed = 1;
  nb->add_option("--corpus", nb_corpus, "bundle JSONL")->required();
  nb->add_option("--wer", nb_wer, "0.311, 0.2395, 0.1118 or custom")->capture_default_str();
  nb->add_option("--custom-wer", nb_custom, "target when --wer custom");
  nb->add_option("--n", nb_n, "hypotheses per document")->capture_default_str();
  nb->add_option("--samples", nb_samples, "calibration samples")->capture_default_str();
  nb->add_option("--measure", nb_measure, "one_best or oracle (default: oracle for 0.1118)");
  nb->add_option("--name", nb_name, "condition name (default: std, semi, oracle or custom)");
  nb->add_option("--seed", nb_seed)->capture_default_str();
  nb->add_option("--out", nb_out, "output bundle (default: overwrite --corpus)");
  nb->callback([&] {
    double target = 0.0;
    std::string name = "custom", measure = "one_best";
    if (nb_wer == "0.311") {
      target = kStandardWer, name = "std";
    } else if (nb_wer == "0.2395") {
      target = kSemiSupervisedWer, name = "semi";
    } else if (nb_wer == "0.1118") {
      target = kOracleWer, name = "oracle", measure = "oracle";
    } else if (nb_wer == "custom") {
      target = nb_custom;
    } else {
      throw CLI::ValidationError("--wer", "expected 0.311, 0.2395, 0.1118 or custom");
    }
    if (!nb_name.empty()) name = nb_name;
    if (!nb_measure.empty()) measure = nb_measure;
    if (measure != "one_best" && measure != "oracle") throw CLI::ValidationError("--measure", "one_best or oracle");
    CorpusBundle b = import_bundle(nb_corpus);
    const auto res = add_condition(b, name, target, measure == "oracle" ? WerMeasure::oracle : WerMeasure::one_best,
                                   nb_n, nb_seed, nb_samples);
    export_bundle(b, nb_out.empty() ? nb_corpus : nb_out);
    std::printf("%s: target %.4f measured %.4f after %d iterations\n", name.c_str(), target, res.measured_wer,
                res.iterations);
  });

  // align
  auto* al = app.add_subcommand("align", "Print the aligned frame of an anchor and hypotheses");
  std::string al_anchor;
  std::vector<std::string> al_hyps;
  al->add_option("--anchor", al_anchor)->required();
  al->add_option("--hyp", al_hyps, "repeatable")->required();
  al->callback([&] {
    Tokens words;
    std::vector<Tokens> split;
    split.push_back(split_words(al_anchor));
    for (const auto& s : al_hyps) split.push_back(split_words(s));
    for (const auto& t : split) words.insert(words.end(), t.begin(), t.end());
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    const Vocabulary vocab(words);
    std::vector<TokenSeq> hyps;
    for (const auto& t : split) hyps.push_back(tokenize(t, vocab, SourceKind::hyp));
    std::cout << render_frame(align_nbest(hyps), vocab);
  });

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of a training loss");
  std::string gc_path = "dr";
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 1;
  bool gc_dropout = false;
  gc->add_option("--path", gc_path, "rerank, dr or fusion")->capture_default_str();
  gc->add_option("--tol", gc_tol)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_flag("--dropout", gc_dropout, "check with a fixed dropout mask");
  int gc_status = 0;
  gc->callback([&] {
    const auto r = check_training_gradients(gc_path, gc_tol, gc_seed, gc_dropout);
    std::printf("%s: %zu coordinates, max relative error %.3g, %s\n", gc_path.c_str(), r.coordinates,
                r.max_relative_error, r.passed ? "passed" : "FAILED");
    for (const auto& f : r.failures) std::printf("  %s\n", f.c_str());
    gc_status = r.passed ? 0 : 1;
  });

  // build-index
  auto* bi = app.add_subcommand("build-index", "Build a BM25 or dense index over one document view");
  std::string bi_kind = "bm25", bi_fusion = "none", bi_in, bi_ckpt, bi_out, bi_condition = "clean";
  std::size_t bi_n = 1, bi_rank = 0;
  bi->add_option("--kind", bi_kind, "bm25 or dense")->capture_default_str();
  bi->add_option("--fusion", bi_fusion, "none or early")->capture_default_str();
  bi->add_option("--n", bi_n, "hypotheses fused (early)")->capture_default_str();
  bi->add_option("--condition", bi_condition, "transcript condition")->capture_default_str();
  bi->add_option("--hyp-rank", bi_rank, "hypothesis indexed when --fusion none (late-fusion indexes)")
      ->capture_default_str();
  bi->add_option("--in", bi_in, "bundle JSONL")->required();
  bi->add_option("--ckpt", bi_ckpt, "model checkpoint (dense)");
  bi->add_option("--out", bi_out)->required();
  bi->callback([&] {
    const CorpusBundle b = import_bundle(bi_in);
    const Vocabulary vocab = build_vocab(b);
    const DocView view{.condition = bi_condition, .mode = parse_view_mode(bi_fusion), .n = bi_n, .hyp_rank = bi_rank};
    if (bi_kind == "bm25") {
      if (view.mode != FusionMode::none) throw CLI::ValidationError("--fusion", "BM25 indexes plain transcripts");
      const auto idx = build_bm25(doc_texts(b, vocab, view));
      save_index(bi_out, idx);
      std::printf("bm25 index over %zu docs (%s)\n", idx.num_docs, view.tag().c_str());
    } else if (bi_kind == "dense") {
      if (bi_ckpt.empty()) throw CLI::RequiredError("--ckpt");
      const auto params = load_checkpoint(bi_ckpt);
      std::vector<std::string> warnings;
      const auto idx = build_vector_index(doc_inputs(b, vocab, view, params.config.max_len, &warnings), params,
                                          view.tag());
      for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      save_index(bi_out, idx);
      std::printf("dense index over %zu docs (%s)\n", idx.doc_ids.size(), view.tag().c_str());
    } else {
      throw CLI::ValidationError("--kind", "bm25 or dense");
    }
  });

  // search
  auto* se = app.add_subcommand("search", "Search one index and write a TREC run");
  std::string se_index, se_queries, se_run, se_ckpt, se_split = "eval", se_tag, se_condition = "clean";
  std::size_t se_k = 1000, se_rerank_depth = 100;
  se->add_option("--index", se_index)->required();
  se->add_option("--queries", se_queries, "bundle JSONL holding the queries")->required();
  se->add_option("--split", se_split, "train, validation, eval or all")->capture_default_str();
  se->add_option("--k", se_k)->capture_default_str();
  se->add_option("--run", se_run)->required();
  se->add_option("--ckpt", se_ckpt, "dual encoder (dense index) or re-ranker (BM25 index)");
  se->add_option("--rerank-depth", se_rerank_depth, "BM25 candidates re-scored")->capture_default_str();
  se->add_option("--condition", se_condition, "document transcripts the re-ranker reads")->capture_default_str();
  se->add_option("--tag", se_tag, "system tag");
  se->callback([&] {
    const CorpusBundle b = import_bundle(se_queries);
    const Vocabulary vocab = build_vocab(b);
    const auto qs = query_seqs(b, vocab);
    RunFile run;
    const auto kind = peek_index_kind(se_index);
    std::function<RankedList(const TokenSeq&)> fn;
    std::optional<InvertedIndex> bm;
    std::optional<VectorIndex> vi;
    std::optional<EncoderParams<float>> params;
    std::map<std::string, TokenSeq> texts;
    CheckpointMeta meta;
    if (!se_ckpt.empty()) params = load_checkpoint(se_ckpt, &meta);
    if (kind == IndexKind::bm25) {
      bm = load_bm25_index(se_index);
      if (params) {
        if (meta.model != "rerank") throw CLI::ValidationError("--ckpt", "a BM25 index pairs with a re-ranker");
        texts = doc_texts(b, vocab, DocView{.condition = se_condition});
        run.system_tag = "rerank";
        fn = [&](const TokenSeq& q) { return search_rerank(q, *bm, *params, texts, se_rerank_depth); };
      } else {
        run.system_tag = "bm25";
        fn = [&](const TokenSeq& q) { return bm25_search(*bm, q, se_k); };
      }
    } else {
      if (!params) throw CLI::RequiredError("--ckpt");
      vi = load_vector_index(se_index);
      run.system_tag = "dr";
      fn = [&](const TokenSeq& q) { return search_dr(q, {&*vi}, *params, FusionConfig{}, se_k); };
    }
    if (!se_tag.empty()) run.system_tag = se_tag;
    for (const auto& q : split_ids(b, se_split)) {
      RankedList l = fn(qs.at(q));
      l.query_id = q;
      if (l.entries.size() > se_k) l.entries.resize(se_k);
      run.rankings.emplace(q, std::move(l));
    }
    write_run(se_run, run);
    print_eval(run, b.qrels);
  });

  // fuse-search
  auto* fs = app.add_subcommand("fuse-search", "Search with early or late N-best fusion");
  std::string fs_mode = "late", fs_indexes, fs_ckpt, fs_queries, fs_run, fs_split = "eval", fs_scope = "exhaustive";
  std::size_t fs_n = 1, fs_k = 1000, fs_topk = 1000;
  fs->add_option("--mode", fs_mode, "early or late")->capture_default_str();
  fs->add_option("--n", fs_n)->capture_default_str();
  fs->add_option("--indexes", fs_indexes, "comma-separated; one per hypothesis rank for late")->required();
  fs->add_option("--ckpt", fs_ckpt)->required();
  fs->add_option("--queries", fs_queries, "bundle JSONL holding the queries")->required();
  fs->add_option("--split", fs_split)->capture_default_str();
  fs->add_option("--k", fs_k)->capture_default_str();
  fs->add_option("--scope", fs_scope, "exhaustive or topk")->capture_default_str();
  fs->add_option("--topk-per-index", fs_topk)->capture_default_str();
  fs->add_option("--run", fs_run)->required();
  fs->callback([&] {
    const auto paths = split_commas(fs_indexes);
    FusionConfig fc;
    fc.mode = parse_fusion_mode(fs_mode);
    fc.n = fs_n;
    fc.scope = parse_late_scope(fs_scope);
    fc.topk_per_index = fs_topk;
    fc.validate();
    if (fc.mode == FusionMode::late && paths.size() != fs_n)
      throw CLI::ValidationError("--indexes", "late fusion takes exactly N indexes");
    if (fc.mode != FusionMode::late && paths.size() != 1)
      throw CLI::ValidationError("--indexes", "early fusion searches one index");
    std::vector<VectorIndex> loaded;
    loaded.reserve(paths.size());
    for (const auto& p : paths) loaded.push_back(load_vector_index(p));
    std::vector<const VectorIndex*> ptrs;
    for (const auto& v : loaded) ptrs.push_back(&v);
    const auto params = load_checkpoint(fs_ckpt);
    const CorpusBundle b = import_bundle(fs_queries);
    const Vocabulary vocab = build_vocab(b);
    const auto qs = query_seqs(b, vocab);
    RunFile run;
    run.system_tag = fs_mode + std::to_string(fs_n);
    for (const auto& q : split_ids(b, fs_split)) {
      RankedList l = search_dr(qs.at(q), ptrs, params, fc, fs_k);
      l.query_id = q;
      run.rankings.emplace(q, std::move(l));
    }
    write_run(fs_run, run);
    print_eval(run, b.qrels);
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the re-ranker or the dual encoder");
  TrainConfig tc;
  std::string tr_ance = "off", tr_fusion = "none", tr_corpus, tr_out, tr_log, tr_condition = "clean";
  std::size_t tr_n = 1;
  tr->add_option("--model", tc.model, "rerank or dr")->capture_default_str();
  tr->add_option("--ance", tr_ance, "on or off")->capture_default_str();
  tr->add_option("--fusion", tr_fusion, "none or early")->capture_default_str();
  tr->add_option("--n", tr_n)->capture_default_str();
  tr->add_option("--condition", tr_condition, "document transcripts trained on")->capture_default_str();
  tr->add_option("--epochs", tc.epochs)->capture_default_str();
  tr->add_option("--lr", tc.learning_rate, "0 picks the model preset")->capture_default_str();
  tr->add_option("--batch", tc.batch_size)->capture_default_str();
  tr->add_option("--negatives", tc.negatives)->capture_default_str();
  tr->add_option("--seed", tc.seed)->capture_default_str();
  tr->add_option("--corpus", tr_corpus, "bundle JSONL")->required();
  tr->add_option("--out", tr_out, "best checkpoint")->required();
  tr->add_option("--log", tr_log, "per-epoch JSON lines");
  tr->add_flag("--verbose", tc.verbose);
  tr->callback([&] {
    if (tr_ance != "on" && tr_ance != "off") throw CLI::ValidationError("--ance", "on or off");
    tc.ance = tr_ance == "on";
    tc.view = DocView{.condition = tr_condition, .mode = parse_view_mode(tr_fusion), .n = tr_n};
    tc.checkpoint_path = tr_out;
    tc.log_path = tr_log;
    const CorpusBundle b = import_bundle(tr_corpus);
    const Vocabulary vocab = build_vocab(b);
    const auto bm = build_bm25(doc_texts(b, vocab, DocView{.condition = tr_condition}));
    const TrainingData data{&b, &vocab, &bm};
    const TrainState st = tc.model == "rerank" ? train_reranker(data, tc) : train_dr(data, tc);
    for (const auto& e : st.log)
      std::printf("epoch %zu loss %.4f validation %.4f (%s, %.1f s)\n", e.epoch, e.loss, e.validation_metric,
                  e.provenance.c_str(), e.seconds);
    std::printf("best epoch %zu validation %.4f -> %s\n", st.best_epoch, st.best_validation_metric, tr_out.c_str());
  });

  // eval
  auto* ev = app.add_subcommand("eval", "MRR of a run");
  std::string ev_run, ev_qrels;
  ev->add_option("--run", ev_run)->required();
  ev->add_option("--qrels", ev_qrels, "qrels file or bundle JSONL")->required();
  ev->callback([&] { print_eval(read_run(ev_run), load_qrels(ev_qrels)); });

  // compare
  auto* cmp = app.add_subcommand("compare", "Per-query comparison and paired t-test of two runs");
  std::string cmp_a, cmp_b, cmp_qrels;
  cmp->add_option("--run-a", cmp_a)->required();
  cmp->add_option("--run-b", cmp_b, "baseline")->required();
  cmp->add_option("--qrels", cmp_qrels, "qrels file or bundle JSONL")->required();
  cmp->callback([&] {
    const RunFile a = read_run(cmp_a), b = read_run(cmp_b);
    std::vector<std::string> queries;
    for (const auto& [q, _] : a.rankings) queries.push_back(q);
    const auto c = compare_runs(a, b, load_qrels(cmp_qrels), queries);
    std::printf("MRR a %.4f b %.4f\n", c.mrr_a, c.mrr_b);
    std::printf("improved %zu (mean +%.4f) regressed %zu (mean -%.4f) unchanged %zu\n", c.improved,
                c.mean_improvement, c.regressed, c.mean_regression, c.unchanged);
    std::printf("paired t %.4f df %zu p %.4g%s\n", c.ttest.t, c.ttest.df, c.ttest.p,
                c.ttest.degenerate ? " (zero variance)" : "");
  });

  // grid
  auto* gr = app.add_subcommand("grid", "Run the full comparison grid");
  std::string gr_config, gr_json;
  bool gr_quiet = false;
  gr->add_option("--config", gr_config, "JSON grid config (default: the full default grid)");
  gr->add_option("--json", gr_json, "write the report as JSON");
  gr->add_flag("--quiet", gr_quiet);
  gr->callback([&] {
    GridConfig cfg;
    if (!gr_config.empty()) {
      std::ifstream in(gr_config);
      if (!in) throw InputError("cannot open " + gr_config);
      cfg = GridConfig::from_json(nlohmann::json::parse(in));
    }
    ProgressFn progress;
    if (!gr_quiet) progress = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
    const GridReport r = run_experiment_grid(cfg, progress);
    std::cout << r.text();
    if (!gr_json.empty()) std::ofstream(gr_json) << r.json().dump(2) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return gc_status;
}
