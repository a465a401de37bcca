#include "textscene/sce.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <numeric>

#include "textscene/container.hpp"
#include "textscene/error.hpp"

namespace textscene {

std::vector<std::pair<std::string, Tensor*>> AlignModel::parameters() {
  auto& d = sce.decoder;
  return {
      {"text.token_embedding", &text.token_embedding},
      {"text.kge_projection", &text.kge_projection},
      {"text.output_projection", &text.output_projection},
      {"sce.shared_embeddings", &sce.shared_embeddings},
      {"sce.bev_projection", &sce.bev_projection},
      {"sce.text_projection", &sce.text_projection},
      {"decoder.token_embedding", &d.token_embedding},
      {"decoder.position_embedding", &d.position_embedding},
      {"decoder.self_query", &d.self_query},
      {"decoder.self_key", &d.self_key},
      {"decoder.self_value", &d.self_value},
      {"decoder.self_output", &d.self_output},
      {"decoder.cross_query", &d.cross_query},
      {"decoder.cross_key", &d.cross_key},
      {"decoder.cross_value", &d.cross_value},
      {"decoder.cross_output", &d.cross_output},
      {"decoder.ffn_in", &d.ffn_in},
      {"decoder.ffn_out", &d.ffn_out},
      {"decoder.output", &d.output},
  };
}

AlignModel init_align_model(ModelDims dims, Vocabulary vocab, EntityLexicon lexicon, bool use_kgp,
                            double temperature, double lambda, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
  if (dims.k == 0 || dims.d_b == 0 || dims.d_c == 0 || dims.d_tok == 0 || dims.d_lang == 0 ||
      dims.ffn_hidden == 0 || dims.max_caption_len == 0) {
    throw UsageError("model dimensions must be positive");
  }
  if (!lexicon.empty()) dims.d_kg = lexicon.dim();
  if (dims.d_kg == 0) throw UsageError("model dimensions must be positive");

  AlignModel m;
  m.dims = dims;
  m.vocab = std::move(vocab);
  m.lexicon = std::move(lexicon);
  m.use_kgp = use_kgp && !m.lexicon.empty();
  m.sce.temperature = temperature;
  m.sce.lambda = lambda;

  const std::size_t V = m.vocab.size(), d = dims.d_c, h = dims.ffn_hidden;
  auto& dec = m.sce.decoder;
  m.text.token_embedding = Tensor(Shape{V, dims.d_tok});
  m.text.kge_projection = Tensor(Shape{dims.d_kg, dims.d_tok});
  m.text.output_projection = Tensor(Shape{dims.d_tok, dims.d_lang});
  m.sce.shared_embeddings = Tensor(Shape{dims.k, d});
  m.sce.bev_projection = Tensor(Shape{dims.d_b, d});
  m.sce.text_projection = Tensor(Shape{dims.d_lang, d});
  dec.token_embedding = Tensor(Shape{V, d});
  dec.position_embedding = Tensor(Shape{dims.max_caption_len, d});
  for (auto* t : {&dec.self_query, &dec.self_key, &dec.self_value, &dec.self_output, &dec.cross_query,
                  &dec.cross_key, &dec.cross_value, &dec.cross_output}) {
    *t = Tensor(Shape{d, d});
  }
  dec.ffn_in = Tensor(Shape{d, h});
  dec.ffn_out = Tensor(Shape{h, d});
  dec.output = Tensor(Shape{d, V});

  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& t, double sd) {
    std::normal_distribution<double> g(0.0, sd);
    for (auto& v : t.data) v = g(rng);
  };
  auto fan_in = [](const Tensor& t) { return 1.0 / std::sqrt(static_cast<double>(t.rows())); };
  for (auto& [name, t] : m.parameters()) {
    if (name == "text.token_embedding" || name == "sce.shared_embeddings" ||
        name == "decoder.token_embedding") {
      fill(*t, 1.0);
    } else if (name == "decoder.position_embedding") {
      fill(*t, 0.1);
    } else {
      fill(*t, fan_in(*t));
    }
  }
  return m;
}

namespace {

template <typename Model, typename BindFn>
BoundModel bind_with(Model& m, BindFn&& b) {
  BoundModel bm;
  bm.model = &m;
  bm.shared_embeddings = b(m.sce.shared_embeddings);
  bm.bev_projection = b(m.sce.bev_projection);
  bm.text_projection = b(m.sce.text_projection);
  bm.token_embedding = b(m.text.token_embedding);
  bm.kge_projection = b(m.text.kge_projection);
  bm.output_projection = b(m.text.output_projection);
  auto& d = m.sce.decoder;
  auto& v = bm.decoder;
  v.token_embedding = b(d.token_embedding);
  v.position_embedding = b(d.position_embedding);
  v.self_query = b(d.self_query);
  v.self_key = b(d.self_key);
  v.self_value = b(d.self_value);
  v.self_output = b(d.self_output);
  v.cross_query = b(d.cross_query);
  v.cross_key = b(d.cross_key);
  v.cross_value = b(d.cross_value);
  v.cross_output = b(d.cross_output);
  v.ffn_in = b(d.ffn_in);
  v.ffn_out = b(d.ffn_out);
  v.output = b(d.output);
  return bm;
}

}  // namespace

BoundModel bind(ad::Tape& tape, AlignModel& model) {
  return bind_with(model, [&tape](Tensor& t) { return tape.leaf(t); });
}

BoundModel bind_frozen(ad::Tape& tape, const AlignModel& model) {
  return bind_with(model, [&tape](const Tensor& t) { return tape.view(t); });
}

SceOutput sce_reproject(const ad::Var& sequence, const ad::Var& codebook) {
  if (sequence.cols() != codebook.cols()) {
    throw UsageError("sce_reproject: sequence width " + std::to_string(sequence.cols()) +
                     " differs from codebook width " + std::to_string(codebook.cols()));
  }
  const std::size_t k = codebook.rows();
  auto sims = ad::matmul(ad::row_normalize(codebook), ad::transpose(ad::row_normalize(sequence)));
  auto best = ad::reshape(ad::row_max(sims), Shape{1, k});
  auto w = ad::softmax_rows(best);
  return {w, ad::scale_rows(codebook, w), ad::matmul(w, codebook)};
}

ContrastiveLoss contrastive_loss(const ad::Var& bev_pooled, const ad::Var& text_pooled, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("contrastive_loss: temperature must be positive");
  if (bev_pooled.rows() != text_pooled.rows() || bev_pooled.cols() != text_pooled.cols()) {
    throw UsageError("contrastive_loss: modality matrices must have equal shape");
  }
  const std::size_t n = bev_pooled.rows();
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  auto tn = ad::row_normalize(text_pooled);
  auto bn = ad::row_normalize(bev_pooled);
  auto logits = ad::scale(ad::matmul(tn, ad::transpose(bn)), 1.0 / temperature);
  auto t2s = ad::cross_entropy_logits(logits, diag);
  auto s2t = ad::cross_entropy_logits(ad::transpose(logits), diag);
  return {t2s, s2t, ad::add(t2s, s2t)};
}

ad::Var caption_logits(const DecoderVars& dec, const ad::Var& reprojected_bev,
                       std::span<const std::size_t> prefix) {
  const std::size_t len = prefix.size();
  const std::size_t vocab = dec.token_embedding.rows();
  if (len == 0 || prefix[0] != Vocabulary::kBos) {
    throw UsageError("caption_logits: prefix must begin with BOS");
  }
  if (len > dec.position_embedding.rows()) {
    throw UsageError("caption_logits: prefix of " + std::to_string(len) + " exceeds decoder length " +
                     std::to_string(dec.position_embedding.rows()));
  }
  for (auto id : prefix) {
    if (id >= vocab) throw UsageError("caption_logits: unknown token id " + std::to_string(id));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dec.self_query.rows()));

  auto x = ad::add(ad::gather_rows(dec.token_embedding, prefix), ad::slice_rows(dec.position_embedding, 0, len));

  auto q = ad::matmul(x, dec.self_query);
  auto k = ad::matmul(x, dec.self_key);
  auto v = ad::matmul(x, dec.self_value);
  auto att = ad::causal_softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
  x = ad::add(x, ad::matmul(ad::matmul(att, v), dec.self_output));

  auto cq = ad::matmul(x, dec.cross_query);
  auto ck = ad::matmul(reprojected_bev, dec.cross_key);
  auto cv = ad::matmul(reprojected_bev, dec.cross_value);
  auto catt = ad::softmax_rows(ad::scale(ad::matmul(cq, ad::transpose(ck)), inv_sqrt_d));
  x = ad::add(x, ad::matmul(ad::matmul(catt, cv), dec.cross_output));

  x = ad::add(x, ad::matmul(ad::relu(ad::matmul(x, dec.ffn_in)), dec.ffn_out));
  return ad::matmul(x, dec.output);
}

ad::Var cg_loss(const ad::Var& logits, std::span<const std::size_t> targets) {
  return ad::cross_entropy_logits(logits, targets);
}

ad::Var total_loss(const ad::Var& sce_loss, const ad::Var& cg, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("total_loss: lambda must be non-negative");
  return ad::add(sce_loss, ad::scale(cg, lambda));
}

double total_loss(double sce_loss, double cg, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("total_loss: lambda must be non-negative");
  return sce_loss + lambda * cg;
}

CaptionTokens caption_tokens(const Vocabulary& vocab, const std::string& caption, std::size_t max_len) {
  const auto toks = tokenize(caption);
  std::vector<std::size_t> ids;
  ids.reserve(toks.size() + 2);
  ids.push_back(Vocabulary::kBos);
  for (const auto& t : toks) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  if (ids.size() > max_len + 1) ids.resize(max_len + 1);
  CaptionTokens out;
  out.prefix.assign(ids.begin(), ids.end() - 1);
  out.targets.assign(ids.begin() + 1, ids.end());
  return out;
}

SceOutput forward_scene(const BoundModel& bm, const Tensor& bev) {
  if (bev.cols() != bm.bev_projection.rows()) {
    throw UsageError("BEV feature width " + std::to_string(bev.cols()) + " does not match model width " +
                     std::to_string(bm.bev_projection.rows()));
  }
  auto& tape = *bm.shared_embeddings.tape();
  auto projected = ad::matmul(tape.view(bev), bm.bev_projection);
  return sce_reproject(projected, bm.shared_embeddings);
}

SceOutput forward_text(const BoundModel& bm, const std::string& caption) {
  const auto& m = *bm.model;
  const auto tokens = tokenize(caption);
  if (tokens.empty()) throw UsageError("cannot encode an empty caption");
  const auto ids = m.vocab.encode(tokens);
  auto embeds = ad::gather_rows(bm.token_embedding, ids);
  if (m.use_kgp) {
    const auto matches = link_entities(tokens, m.lexicon);
    embeds = fuse_kgp(embeds, matches, bm.kge_projection);
  }
  const auto enc = encode_text(embeds, bm.output_projection);
  return sce_reproject(ad::matmul(enc.sequence, bm.text_projection), bm.shared_embeddings);
}

BatchLoss batch_loss(const BoundModel& bm, const PairedCorpus& corpus, std::span<const std::size_t> batch) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  const auto& m = *bm.model;
  std::vector<ad::Var> bev_rows, text_rows, cg_terms;
  for (auto i : batch) {
    const auto& text = corpus.texts.at(i);
    const auto& scene = corpus.scene_for(text.sample_id);
    const auto so = forward_scene(bm, scene.bev);
    const auto to = forward_text(bm, text.caption);
    bev_rows.push_back(so.pooled);
    text_rows.push_back(to.pooled);
    const auto ct = caption_tokens(m.vocab, text.caption, m.dims.max_caption_len);
    cg_terms.push_back(cg_loss(caption_logits(bm.decoder, so.reprojected, ct.prefix), ct.targets));
  }
  BatchLoss out;
  out.contrastive = contrastive_loss(ad::concat_rows(bev_rows), ad::concat_rows(text_rows), m.sce.temperature);
  out.caption = ad::mean(ad::concat_rows(cg_terms));
  out.total = total_loss(out.contrastive.total, out.caption, m.sce.lambda);
  return out;
}

GradCheckResult check_batch_gradients(AlignModel& model, const PairedCorpus& corpus,
                                      std::span<const std::size_t> batch, const GradCheckOptions& options) {
  std::vector<Tensor*> params;
  for (auto& [name, p] : model.parameters()) params.push_back(p);
  return grad_check(
      [&](ad::Tape& tape) { return batch_loss(bind(tape, model), corpus, batch).total; }, params, options);
}

std::vector<double> embed_scene(const AlignModel& model, const Tensor& bev) {
  ad::Tape tape;
  const auto bm = bind_frozen(tape, model);
  return forward_scene(bm, bev).pooled.value().data;
}

std::vector<double> embed_text(const AlignModel& model, const std::string& caption) {
  ad::Tape tape;
  const auto bm = bind_frozen(tape, model);
  return forward_text(bm, caption).pooled.value().data;
}

std::vector<std::vector<std::size_t>> make_batches(const PairedCorpus& corpus,
                                                   std::span<const std::size_t> indices,
                                                   std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> pending(indices.begin(), indices.end());
  std::shuffle(pending.begin(), pending.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  while (!pending.empty()) {
    std::vector<std::size_t> batch, rest;
    std::vector<const std::string*> captions;
    for (auto i : pending) {
      const auto& cap = corpus.texts[i].caption;
      const bool dup = std::any_of(captions.begin(), captions.end(), [&](const std::string* c) { return *c == cap; });
      if (batch.size() < batch_size && !dup) {
        batch.push_back(i);
        captions.push_back(&cap);
      } else {
        rest.push_back(i);
      }
    }
    if (batch.size() >= 2) batches.push_back(std::move(batch));
    pending = std::move(rest);
  }
  return batches;
}

AlignTrainResult train_align(const PairedCorpus& corpus, const EntityLexicon& lexicon,
                             const AlignTrainConfig& config, const EpochCallback& on_epoch) {
  corpus.validate();
  const auto train = corpus.indices(Split::Train);
  if (train.empty()) throw UsageError("train_align: corpus has no training samples");
  if (config.batch_size < 2) throw UsageError("train_align: batch size must be at least 2");
  if (config.batch_size > train.size()) {
    throw UsageError("train_align: batch size " + std::to_string(config.batch_size) + " exceeds " +
                     std::to_string(train.size()) + " training samples");
  }
  if (config.epochs == 0 || !(config.learning_rate > 0.0)) {
    throw UsageError("train_align: epochs and learning_rate must be positive");
  }

  std::vector<std::string> captions;
  for (auto i : train) captions.push_back(corpus.texts[i].caption);
  ModelDims dims = config.dims;
  dims.d_b = corpus.bev_dim();

  AlignTrainResult result;
  result.model = init_align_model(dims, build_vocabulary(captions), lexicon, config.use_kgp,
                                  config.temperature, config.lambda, config.seed);
  AlignModel& model = result.model;
  auto params = model.parameters();
  for (auto& [name, p] : params) p->requires_grad = true;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto first = make_batches(corpus, train, config.batch_size, rng);
  if (first.empty()) throw UsageError("train_align: no batch with two distinct captions can be formed");
  const double total_steps = static_cast<double>(config.epochs * first.size());
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto batches = epoch == 1 ? std::move(first) : make_batches(corpus, train, config.batch_size, rng);
    EpochLog log;
    log.epoch = epoch;
    for (const auto& batch : batches) {
      ad::Tape tape;
      const auto bm = bind(tape, model);
      const auto bl = batch_loss(bm, corpus, batch);
      const double total = bl.total.item();
      if (!std::isfinite(total)) {
        throw NumericalError("train_align: non-finite loss at epoch " + std::to_string(epoch));
      }
      for (auto& [name, p] : params) p->zero_grad();
      tape.backward(bl.total);
      const double progress = std::min(1.0, static_cast<double>(step) / total_steps);
      const double lr = config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      for (auto& [name, p] : params) {
        for (std::size_t i = 0; i < p->size(); ++i) p->data[i] -= lr * p->grad[i];
      }
      ++step;
      log.sce += bl.contrastive.total.item();
      log.cg += bl.caption.item();
      log.total += total;
    }
    const auto nb = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    log.sce /= nb;
    log.cg /= nb;
    log.total /= nb;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  for (auto& [name, p] : params) {
    p->requires_grad = false;
    p->clear_grad();
  }
  return result;
}

void save_align(const std::string& dir, const AlignModel& model) {
  std::filesystem::create_directories(dir);
  auto& m = const_cast<AlignModel&>(model);
  Container c;
  for (auto& [name, t] : m.parameters()) c.entries.push_back({name, *t});
  if (!model.lexicon.empty()) c.entries.push_back({"lexicon.vectors", model.lexicon.vectors()});
  const std::map<std::string, std::string> synonyms(model.lexicon.synonyms().begin(),
                                                    model.lexicon.synonyms().end());
  const auto& d = model.dims;
  c.meta = {{"kind", "align"},
            {"dims",
             {{"d_b", d.d_b}, {"d_kg", d.d_kg}, {"d_tok", d.d_tok}, {"d_lang", d.d_lang}, {"d_c", d.d_c},
              {"k", d.k}, {"ffn_hidden", d.ffn_hidden}, {"max_caption_len", d.max_caption_len}}},
            {"temperature", model.sce.temperature},
            {"lambda", model.sce.lambda},
            {"use_kgp", model.use_kgp},
            {"vocab_size", model.vocab.size()},
            {"vocab_hash", model.vocab.hash()},
            {"lexicon", {{"names", model.lexicon.names()}, {"synonyms", synonyms}}}};
  write_container(dir + "/align.tsr", dir + "/align.json", c);
  model.vocab.save(dir + "/vocab.txt");
}

AlignModel load_align(const std::string& dir) {
  const auto c = read_container(dir + "/align.tsr", dir + "/align.json");
  try {
    if (c.meta.value("kind", "") != "align") throw DataError("not an alignment checkpoint");
    auto vocab = Vocabulary::load(dir + "/vocab.txt");
    if (vocab.hash() != c.meta.at("vocab_hash").get<std::string>()) {
      throw DataError("vocab.txt does not match the checkpoint's vocabulary hash");
    }
    const auto& jd = c.meta.at("dims");
    ModelDims d;
    d.d_b = jd.at("d_b").get<std::size_t>();
    d.d_kg = jd.at("d_kg").get<std::size_t>();
    d.d_tok = jd.at("d_tok").get<std::size_t>();
    d.d_lang = jd.at("d_lang").get<std::size_t>();
    d.d_c = jd.at("d_c").get<std::size_t>();
    d.k = jd.at("k").get<std::size_t>();
    d.ffn_hidden = jd.at("ffn_hidden").get<std::size_t>();
    d.max_caption_len = jd.at("max_caption_len").get<std::size_t>();

    EntityLexicon lexicon;
    const auto names = c.meta.at("lexicon").at("names").get<std::vector<std::string>>();
    SynonymMap syn;
    for (const auto& [k, v] : c.meta.at("lexicon").at("synonyms").items()) syn[k] = v.get<std::string>();
    if (!names.empty()) lexicon = EntityLexicon(names, c.get("lexicon.vectors"), std::move(syn));

    auto m = init_align_model(d, std::move(vocab), std::move(lexicon), c.meta.at("use_kgp").get<bool>(),
                              c.meta.at("temperature").get<double>(), c.meta.at("lambda").get<double>(), 0);
    for (auto& [name, t] : m.parameters()) {
      const auto& stored = c.get(name);
      if (stored.rows() != t->rows() || stored.cols() != t->cols()) {
        throw DataError("tensor '" + name + "' has shape " + shape_string(stored.shape) + ", expected " +
                        shape_string(t->shape));
      }
      t->data = stored.data;
    }
    return m;
  } catch (const Json::exception& e) {
    throw DataError(dir + "/align.json: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(dir + ": " + e.what());
  }
}

}  // namespace textscene
