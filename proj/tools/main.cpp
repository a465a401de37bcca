#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "textscene/captions.hpp"
#include "textscene/container.hpp"
#include "textscene/error.hpp"
#include "textscene/hash.hpp"
#include "textscene/kg.hpp"
#include "textscene/retrieval.hpp"
#include "textscene/sce.hpp"
#include "textscene/scene.hpp"
#include "textscene/text.hpp"

namespace fs = std::filesystem;
using namespace textscene;

namespace {

// Resolved configuration plus content hashes of every input file. Written as
// run_manifest.json next to the outputs; carries no timestamps or host data.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  Json& config() { return config_; }
  void input(const std::string& path) { inputs_[path] = hash_file(path); }

  void write(const std::string& dir) const {
    Json j;
    j["command"] = command_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    write_json_file(dir + "/run_manifest.json", j);
  }

 private:
  std::string command_;
  Json config_ = Json::object();
  Json inputs_ = Json::object();
};

void prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  return out;
}

void hash_corpus(Manifest& m, const std::string& dir) {
  for (const char* f : {"/scenes.tsr", "/scenes.json", "/texts.jsonl"}) m.input(dir + f);
}

void hash_align(Manifest& m, const std::string& dir) {
  for (const char* f : {"/align.tsr", "/align.json", "/vocab.txt"}) m.input(dir + f);
}

std::string checkpoint_hash(const std::string& dir) {
  std::string all;
  for (const char* f : {"/align.tsr", "/align.json", "/vocab.txt"}) all += hash_file(dir + f);
  return hash_string(all);
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string out;
  SynthSpec spec;
};

void run_synth(const SynthOpts& o, std::uint64_t seed) {
  SynthSpec spec = o.spec;
  spec.seed = seed;
  const auto sc = synth_corpus(spec);
  prepare_out(o.out);
  save_corpus(o.out, sc.corpus);

  auto kg = open_out(o.out + "/kg.tsv");
  for (const auto& t : sc.graph) kg << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  std::map<std::string, std::string> syn(sc.synonyms.begin(), sc.synonyms.end());
  auto sf = open_out(o.out + "/synonyms.tsv");
  for (const auto& [k, v] : syn) sf << k << '\t' << v << '\n';
  Json labels = Json::object();
  for (std::size_t i = 0; i < sc.labels.size(); ++i) labels[sc.corpus.texts[i].sample_id] = sc.labels[i];
  write_json_file(o.out + "/labels.json", labels);

  Manifest m("synth-corpus");
  m.config() = {{"classes", spec.num_classes},   {"samples_per_class", spec.samples_per_class},
                {"seq_len", spec.seq_len},       {"bev_dim", spec.bev_dim},
                {"noise_sigma", spec.noise_sigma}, {"validation_fraction", spec.validation_fraction},
                {"seed", spec.seed}};
  m.write(o.out);
  std::fprintf(stderr, "synth-corpus: %zu samples, %zu triples -> %s\n", sc.corpus.texts.size(), sc.graph.size(),
               o.out.c_str());
}

// ---------------------------------------------------------------------------

struct KgeOpts {
  std::string triples, out, scorer = "distmult";
  KgeTrainConfig cfg;
};

void run_train_kge(const KgeOpts& o, std::uint64_t seed) {
  KgeTrainConfig cfg = o.cfg;
  cfg.scorer = parse_scorer(o.scorer);
  Manifest m("train-kge");
  m.input(o.triples);
  const auto loaded = load_graph(read_triple_file(o.triples));
  cfg.seed = seed;
  const auto result = train_kge(loaded.graph, cfg);
  const auto lp = evaluate_link_prediction(result.model, loaded.graph, loaded.graph.triples());

  prepare_out(o.out);
  save_kge(o.out + "/kge", result.model, loaded.graph);
  auto log = open_out(o.out + "/loss.jsonl");
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
    log << Json{{"iteration", i + 1}, {"loss", result.loss_history[i]}}.dump() << '\n';
  }
  write_json_file(o.out + "/link_prediction.json",
                  Json{{"mrr", lp.mrr}, {"hits@1", lp.hits_at_1}, {"hits@10", lp.hits_at_10}, {"ranks", lp.ranks},
                       {"triples", loaded.graph.triples().size()},
                       {"duplicates_dropped", loaded.duplicates_dropped}});
  m.config() = {{"scorer", scorer_name(cfg.scorer)}, {"dim", cfg.dim},
                {"learning_rate", cfg.learning_rate}, {"iterations", cfg.iterations},
                {"margin", cfg.margin}, {"negatives_per_positive", cfg.negatives_per_positive},
                {"batch_size", cfg.batch_size}, {"seed", cfg.seed}};
  m.write(o.out);
  std::fprintf(stderr, "train-kge: %zu entities, %zu triples, filtered MRR %.4f, Hits@1 %.4f\n",
               loaded.graph.num_entities(), loaded.graph.triples().size(), lp.mrr, lp.hits_at_1);
}

// ---------------------------------------------------------------------------

struct CaptionOpts {
  std::string annotations, out, level = "easy";
};

void run_build_captions(const CaptionOpts& o) {
  const auto level = parse_level(o.level);
  Manifest m("build-captions");
  m.input(o.annotations);
  const auto anns = read_annotation_file(o.annotations);
  const auto corpus = build_corpus_captions(anns, level);
  prepare_out(o.out);
  auto out = open_out(o.out + "/captions.jsonl");
  write_caption_jsonl(out, corpus.captions, level);
  out.close();
  write_json_file(o.out + "/caption_stats.json",
                  Json{{"level", level_name(level)}, {"captions", corpus.captions.size()}, {"distinct", corpus.distinct}});
  m.config() = {{"level", level_name(level)},
                {"descriptors", {{"one", "1"}, {"several", "2-" + std::to_string(kManyThreshold - 1)},
                                 {"many", ">=" + std::to_string(kManyThreshold)}}},
                {"separator", ", "}};
  m.write(o.out);
  std::fprintf(stderr, "build-captions: %zu captions (%zu distinct), level %s\n", corpus.captions.size(),
               corpus.distinct, level_name(level).c_str());
}

// ---------------------------------------------------------------------------

struct AlignOpts {
  std::string corpus, kge, synonyms, out;
  bool no_kgp = false;
  AlignTrainConfig cfg;
};

void run_train_align(const AlignOpts& o, std::uint64_t seed) {
  Manifest m("train-align");
  hash_corpus(m, o.corpus);
  const auto corpus = load_corpus(o.corpus);
  AlignTrainConfig cfg = o.cfg;
  cfg.seed = seed;
  cfg.use_kgp = !o.no_kgp;

  EntityLexicon lexicon;
  if (!o.kge.empty()) {
    m.input(o.kge + "/kge.tsr");
    m.input(o.kge + "/kge.json");
    SynonymMap syn;
    if (!o.synonyms.empty()) {
      m.input(o.synonyms);
      syn = read_synonym_file(o.synonyms);
    }
    lexicon = EntityLexicon::from_checkpoint(load_kge(o.kge + "/kge"), std::move(syn));
  }

  prepare_out(o.out);
  auto log = open_out(o.out + "/train_log.jsonl");
  const auto result = train_align(corpus, lexicon, cfg, [&](const EpochLog& e) {
    log << Json{{"epoch", e.epoch}, {"L_SCE", e.sce}, {"L_CG", e.cg}, {"total", e.total}}.dump() << '\n';
    std::fprintf(stderr, "epoch %zu  L_SCE %.4f  L_CG %.4f  total %.4f\n", e.epoch, e.sce, e.cg, e.total);
  });
  log.close();
  save_align(o.out, result.model);

  const auto& d = result.model.dims;
  m.config() = {{"batch_size", cfg.batch_size}, {"epochs", cfg.epochs}, {"learning_rate", cfg.learning_rate},
                {"temperature", cfg.temperature}, {"lambda", cfg.lambda},
                {"use_kgp", result.model.use_kgp}, {"seed", cfg.seed},
                {"dims", {{"d_b", d.d_b}, {"d_kg", d.d_kg}, {"d_tok", d.d_tok}, {"d_lang", d.d_lang},
                          {"d_c", d.d_c}, {"k", d.k}, {"ffn_hidden", d.ffn_hidden},
                          {"max_caption_len", d.max_caption_len}}}};
  m.write(o.out);
  std::fprintf(stderr, "train-align: checkpoint -> %s (KGP %s)\n", o.out.c_str(),
               result.model.use_kgp ? "on" : "off");
}

// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint, corpus, out, index_out;
};

void run_eval(const EvalOpts& o) {
  Manifest m("eval");
  hash_align(m, o.checkpoint);
  hash_corpus(m, o.corpus);
  const auto model = load_align(o.checkpoint);
  const auto corpus = load_corpus(o.corpus);
  const auto metrics = evaluate_bidirectional(model, corpus);
  auto j = metrics_json(metrics);
  j["checkpoint_hash"] = checkpoint_hash(o.checkpoint);
  prepare_out(o.out);
  write_json_file(o.out + "/metrics.json", j);
  if (!o.index_out.empty()) {
    prepare_out(o.index_out);
    write_container(o.index_out + "/index.tsr", o.index_out + "/index.json", scene_embeddings(model, corpus));
  }
  m.config() = {{"index_out", !o.index_out.empty()}};
  m.write(o.out);
  std::cout << j.dump(2) << '\n';
  std::fprintf(stderr, "eval: pool %zu, text R@1 %.4f, scene R@1 %.4f\n", metrics.pool_size,
               metrics.text_retrieval.at(1), metrics.scene_retrieval.at(1));
}

// ---------------------------------------------------------------------------

struct QueryOpts {
  std::string checkpoint, index, corpus, text, out;
  std::size_t k = 5;
};

void run_query(const QueryOpts& o) {
  if (o.index.empty() == o.corpus.empty()) throw UsageError("query: give exactly one of --index or --corpus");
  Manifest m("query");
  hash_align(m, o.checkpoint);
  const auto model = load_align(o.checkpoint);
  RetrievalIndex index;
  if (!o.index.empty()) {
    m.input(o.index + "/index.tsr");
    m.input(o.index + "/index.json");
    index = index_from_container(read_container(o.index + "/index.tsr", o.index + "/index.json"));
  } else {
    hash_corpus(m, o.corpus);
    index = index_from_container(scene_embeddings(model, load_corpus(o.corpus)));
  }
  const auto list = query_topk(index, embed_text(model, o.text), o.k, o.text);
  Json results = Json::array();
  for (const auto& e : list.entries) results.push_back({{"id", e.id}, {"score", e.score}});
  const Json j{{"query", o.text}, {"k", o.k}, {"results", results}};
  if (!o.out.empty()) {
    prepare_out(o.out);
    write_json_file(o.out + "/query.json", j);
    m.config() = {{"text", o.text}, {"k", o.k}};
    m.write(o.out);
  }
  std::cout << j.dump(2) << '\n';
  std::fprintf(stderr, "query: %zu of %zu scenes returned\n", list.entries.size(), index.size());
}

// ---------------------------------------------------------------------------

struct GradOpts {
  std::string checkpoint, corpus, out;
  std::size_t batch = 2, entries = 24;
  double epsilon = 1e-4;
};

void run_grad_check(const GradOpts& o, std::uint64_t seed) {
  Manifest m("grad-check");
  hash_align(m, o.checkpoint);
  hash_corpus(m, o.corpus);
  auto model = load_align(o.checkpoint);
  const auto corpus = load_corpus(o.corpus);
  const auto train = corpus.indices(Split::Train);
  std::mt19937_64 rng(seed);
  const auto batches = make_batches(corpus, train, o.batch, rng);
  if (batches.empty()) throw DataError("grad-check: corpus has no batch of distinct captions");
  const auto& batch = batches.front();

  GradCheckOptions opts;
  opts.epsilon = o.epsilon;
  opts.max_entries_per_param = o.entries;
  opts.seed = seed;
  const auto r = check_batch_gradients(model, corpus, batch, opts);

  Json per = Json::object();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) per[params[i].first] = r.per_param[i];
  Json ids = Json::array();
  for (auto i : batch) ids.push_back(corpus.texts[i].sample_id);
  const Json j{{"max_relative_error", r.max_relative_error}, {"entries_checked", r.entries_checked},
               {"batch", ids}, {"per_param", per}};
  prepare_out(o.out);
  write_json_file(o.out + "/grad_check.json", j);
  m.config() = {{"batch", o.batch}, {"entries", o.entries}, {"epsilon", o.epsilon}, {"seed", seed}};
  m.write(o.out);
  std::cout << j.dump(2) << '\n';
  std::fprintf(stderr, "grad-check: max relative error %.3e over %zu entries\n", r.max_relative_error,
               r.entries_checked);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-scene retrieval toolkit"};
  app.set_config("--config", "", "TOML or INI file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->envname("TEXTSCENE_SEED")->capture_default_str();

  SynthOpts synth;
  auto* s_synth = app.add_subcommand("synth-corpus", "Generate a synthetic paired corpus with a companion KG");
  s_synth->add_option("--out", synth.out, "Output directory")->required();
  s_synth->add_option("--classes", synth.spec.num_classes)->capture_default_str();
  s_synth->add_option("--samples-per-class", synth.spec.samples_per_class)->capture_default_str();
  s_synth->add_option("--seq-len", synth.spec.seq_len)->capture_default_str();
  s_synth->add_option("--bev-dim", synth.spec.bev_dim)->capture_default_str();
  s_synth->add_option("--noise", synth.spec.noise_sigma)->capture_default_str();
  s_synth->add_option("--val-fraction", synth.spec.validation_fraction)->capture_default_str();

  KgeOpts kge;
  auto* s_kge = app.add_subcommand("train-kge", "Train knowledge graph embeddings");
  s_kge->add_option("--triples", kge.triples, "Tab-separated triple file")->required();
  s_kge->add_option("--out", kge.out, "Output directory")->required();
  s_kge->add_option("--scorer", kge.scorer, "transe-l1 | transe-l2 | distmult")->capture_default_str();
  s_kge->add_option("--dim", kge.cfg.dim)->capture_default_str();
  s_kge->add_option("--lr", kge.cfg.learning_rate)->capture_default_str();
  s_kge->add_option("--iterations", kge.cfg.iterations)->capture_default_str();
  s_kge->add_option("--margin", kge.cfg.margin)->capture_default_str();
  s_kge->add_option("--negatives", kge.cfg.negatives_per_positive)->capture_default_str();
  s_kge->add_option("--batch-size", kge.cfg.batch_size)->capture_default_str();

  CaptionOpts cap;
  auto* s_cap = app.add_subcommand("build-captions", "Build Easy or Hard captions from annotations");
  s_cap->add_option("--annotations", cap.annotations, "Annotation JSON file")->required();
  s_cap->add_option("--out", cap.out, "Output directory")->required();
  s_cap->add_option("--level", cap.level, "easy | hard")->capture_default_str();

  AlignOpts align;
  auto& ac = align.cfg;
  auto* s_align = app.add_subcommand("train-align", "Train the shared cross-modal alignment model");
  s_align->add_option("--corpus", align.corpus, "Corpus directory")->required();
  s_align->add_option("--kge", align.kge, "KGE output directory from train-kge");
  s_align->add_option("--synonyms", align.synonyms, "Synonym file (surface<TAB>entity)");
  s_align->add_option("--out", align.out, "Checkpoint directory")->required();
  s_align->add_flag("--no-kgp", align.no_kgp, "Disable knowledge graph prompting");
  s_align->add_option("--epochs", ac.epochs)->capture_default_str();
  s_align->add_option("--batch-size", ac.batch_size)->capture_default_str();
  s_align->add_option("--lr", ac.learning_rate)->capture_default_str();
  s_align->add_option("--temperature", ac.temperature)->capture_default_str();
  s_align->add_option("--lambda", ac.lambda)->capture_default_str();
  s_align->add_option("--d-tok", ac.dims.d_tok)->capture_default_str();
  s_align->add_option("--d-lang", ac.dims.d_lang)->capture_default_str();
  s_align->add_option("--d-c", ac.dims.d_c)->capture_default_str();
  s_align->add_option("--k", ac.dims.k, "Shared codebook size")->capture_default_str();
  s_align->add_option("--ffn-hidden", ac.dims.ffn_hidden)->capture_default_str();
  s_align->add_option("--max-caption-len", ac.dims.max_caption_len)->capture_default_str();

  EvalOpts ev;
  auto* s_eval = app.add_subcommand("eval", "Bidirectional R@K on the validation split");
  s_eval->add_option("--checkpoint", ev.checkpoint)->required();
  s_eval->add_option("--corpus", ev.corpus)->required();
  s_eval->add_option("--out", ev.out, "Output directory for metrics.json")->required();
  s_eval->add_option("--index-out", ev.index_out, "Also write a scene index over every sample");

  QueryOpts q;
  auto* s_query = app.add_subcommand("query", "Top-k scenes for a text query");
  s_query->add_option("--checkpoint", q.checkpoint)->required();
  s_query->add_option("--index", q.index, "Index directory written by eval --index-out");
  s_query->add_option("--corpus", q.corpus, "Corpus directory to index on the fly");
  s_query->add_option("--text", q.text)->required();
  s_query->add_option("--k", q.k)->capture_default_str();
  s_query->add_option("--out", q.out, "Also write query.json and a manifest here");

  GradOpts gc;
  auto* s_grad = app.add_subcommand("grad-check", "Finite-difference check of the combined loss");
  s_grad->add_option("--checkpoint", gc.checkpoint)->required();
  s_grad->add_option("--corpus", gc.corpus)->required();
  s_grad->add_option("--out", gc.out)->required();
  s_grad->add_option("--batch", gc.batch)->capture_default_str();
  s_grad->add_option("--entries", gc.entries, "Entries per parameter tensor, 0 = all")->capture_default_str();
  s_grad->add_option("--epsilon", gc.epsilon)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*s_synth) run_synth(synth, seed);
    else if (*s_kge) run_train_kge(kge, seed);
    else if (*s_cap) run_build_captions(cap);
    else if (*s_align) run_train_align(align, seed);
    else if (*s_eval) run_eval(ev);
    else if (*s_query) run_query(q);
    else if (*s_grad) run_grad_check(gc, seed);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
