#include "textscene/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "textscene/container.hpp"
#include "textscene/error.hpp"
#include "textscene/tokenize.hpp"

namespace textscene {

std::optional<std::size_t> KnowledgeGraph::entity_id(const std::string& name) const {
  if (auto it = entity_ids_.find(name); it != entity_ids_.end()) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> KnowledgeGraph::relation_id(const std::string& name) const {
  if (auto it = relation_ids_.find(name); it != relation_ids_.end()) return it->second;
  return std::nullopt;
}

std::size_t KnowledgeGraph::add_entity(const std::string& name) {
  auto [it, inserted] = entity_ids_.try_emplace(name, entities_.size());
  if (inserted) entities_.push_back(name);
  return it->second;
}

std::size_t KnowledgeGraph::add_relation(const std::string& name) {
  auto [it, inserted] = relation_ids_.try_emplace(name, relations_.size());
  if (inserted) relations_.push_back(name);
  return it->second;
}

bool KnowledgeGraph::add_triple(const Triple& t) {
  if (t.head >= entities_.size() || t.tail >= entities_.size() || t.relation >= relations_.size()) {
    throw UsageError("triple references an unknown entity or relation id");
  }
  if (!known_.insert(t).second) return false;
  triples_.push_back(t);
  return true;
}

Triple KnowledgeGraph::resolve(const TripleRecord& r) const {
  const auto h = entity_id(normalize_phrase(r.head));
  const auto rel = relation_id(normalize_phrase(r.relation));
  const auto t = entity_id(normalize_phrase(r.tail));
  if (!h || !rel || !t) {
    throw DataError("triple (" + r.head + ", " + r.relation + ", " + r.tail +
                    ") uses names not in the graph");
  }
  return {*h, *rel, *t};
}

LoadedGraph load_graph(std::span<const TripleRecord> records) {
  if (records.empty()) throw DataError("load_graph: no triples given");
  LoadedGraph out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::size_t line = r.line ? r.line : i + 1;
    const auto h = normalize_phrase(r.head);
    const auto rel = normalize_phrase(r.relation);
    const auto t = normalize_phrase(r.tail);
    if (h.empty() || rel.empty() || t.empty()) {
      throw DataError("empty triple component on line " + std::to_string(line));
    }
    const auto hid = out.graph.add_entity(h);
    const auto rid = out.graph.add_relation(rel);
    const auto tid = out.graph.add_entity(t);
    if (!out.graph.add_triple({hid, rid, tid})) ++out.duplicates_dropped;
  }
  return out;
}

namespace {

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

bool skippable(const std::string& line) {
  const auto p = line.find_first_not_of(" \t");
  return p == std::string::npos || line[p] == '#';
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto p = line.find('\t', start);
    fields.push_back(line.substr(start, p == std::string::npos ? std::string::npos : p - start));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return fields;
}

}  // namespace

std::vector<TripleRecord> parse_triples(std::istream& in) {
  std::vector<TripleRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    strip_cr(line);
    if (skippable(line)) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) {
      throw DataError("line " + std::to_string(n) + ": expected head<TAB>relation<TAB>tail");
    }
    out.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]), n});
  }
  return out;
}

std::vector<TripleRecord> read_triple_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  try {
    return parse_triples(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

SynonymMap parse_synonyms(std::istream& in) {
  SynonymMap out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    strip_cr(line);
    if (skippable(line)) continue;
    const auto f = split_tabs(line);
    if (f.size() != 2) throw DataError("line " + std::to_string(n) + ": expected surface<TAB>entity");
    auto key = normalize_phrase(f[0]);
    auto val = normalize_phrase(f[1]);
    if (key.empty() || val.empty()) throw DataError("line " + std::to_string(n) + ": empty field");
    out[std::move(key)] = std::move(val);
  }
  return out;
}

SynonymMap read_synonym_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  try {
    return parse_synonyms(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string scorer_name(Scorer s) {
  switch (s) {
    case Scorer::TransE_L1: return "transe-l1";
    case Scorer::TransE_L2: return "transe-l2";
    case Scorer::DistMult: return "distmult";
  }
  return "unknown";
}

Scorer parse_scorer(const std::string& name) {
  if (name == "transe-l1") return Scorer::TransE_L1;
  if (name == "transe-l2" || name == "transe") return Scorer::TransE_L2;
  if (name == "distmult") return Scorer::DistMult;
  throw UsageError("unknown scorer '" + name + "' (expected transe-l1, transe-l2 or distmult)");
}

namespace {

void check_dims(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  if (h.size() != r.size() || h.size() != t.size()) {
    throw UsageError("score: embedding dimensions differ (" + std::to_string(h.size()) + ", " +
                     std::to_string(r.size()) + ", " + std::to_string(t.size()) + ")");
  }
}

bool is_transe(Scorer s) { return s != Scorer::DistMult; }

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double score_transe(std::span<const double> h, std::span<const double> r,
                    std::span<const double> t, int p) {
  check_dims(h, r, t);
  if (p != 1 && p != 2) throw UsageError("score_transe: p must be 1 or 2");
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] + r[i] - t[i];
    acc += p == 1 ? std::abs(d) : d * d;
  }
  return p == 1 ? -acc : -std::sqrt(acc);
}

double score_distmult(std::span<const double> h, std::span<const double> r,
                      std::span<const double> t) {
  check_dims(h, r, t);
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) acc += h[i] * r[i] * t[i];
  return acc;
}

double KgeModel::score(const Triple& tr) const {
  const auto h = entity_embeddings.row(tr.head);
  const auto r = relation_embeddings.row(tr.relation);
  const auto t = entity_embeddings.row(tr.tail);
  switch (scorer) {
    case Scorer::TransE_L1: return score_transe(h, r, t, 1);
    case Scorer::TransE_L2: return score_transe(h, r, t, 2);
    case Scorer::DistMult: return score_distmult(h, r, t);
  }
  return 0.0;
}

namespace {

// Adds coeff * d f(triple) / d(embeddings) into the gradient buffers.
void add_score_grad(const KgeModel& m, const Triple& tr, double coeff, std::vector<double>& ge,
                    std::vector<double>& gr) {
  const std::size_t d = m.dim;
  const auto h = m.entity_embeddings.row(tr.head);
  const auto r = m.relation_embeddings.row(tr.relation);
  const auto t = m.entity_embeddings.row(tr.tail);
  double* gh = ge.data() + tr.head * d;
  double* gt = ge.data() + tr.tail * d;
  double* grr = gr.data() + tr.relation * d;
  if (m.scorer == Scorer::DistMult) {
    for (std::size_t i = 0; i < d; ++i) {
      const double hi = h[i], ri = r[i], ti = t[i];
      gh[i] += coeff * ri * ti;
      grr[i] += coeff * hi * ti;
      gt[i] += coeff * hi * ri;
    }
    return;
  }
  std::vector<double> dd(d);
  double nrm = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dd[i] = h[i] + r[i] - t[i];
    nrm += dd[i] * dd[i];
  }
  nrm = std::sqrt(nrm);
  for (std::size_t i = 0; i < d; ++i) {
    double df;  // d f / d(diff_i)
    if (m.scorer == Scorer::TransE_L1) {
      df = dd[i] > 0.0 ? -1.0 : (dd[i] < 0.0 ? 1.0 : 0.0);
    } else {
      df = nrm > 0.0 ? -dd[i] / nrm : 0.0;
    }
    gh[i] += coeff * df;
    grr[i] += coeff * df;
    gt[i] -= coeff * df;
  }
}

void normalize_row(std::span<double> row) {
  double s = 0.0;
  for (double v : row) s += v * v;
  s = std::sqrt(s);
  if (s > 0.0) {
    for (double& v : row) v /= s;
  }
}

}  // namespace

KgeLossGrad kge_pair_loss(const KgeModel& model, std::span<const Triple> positives,
                          std::span<const Triple> negatives, double margin) {
  if (positives.size() != negatives.size() || positives.empty()) {
    throw UsageError("kge_pair_loss: need matching non-empty positive/negative lists");
  }
  KgeLossGrad out;
  out.entity_grad.assign(model.entity_embeddings.size(), 0.0);
  out.relation_grad.assign(model.relation_embeddings.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double fp = model.score(positives[i]);
    const double fn = model.score(negatives[i]);
    if (is_transe(model.scorer)) {
      const double l = margin + fn - fp;
      if (l > 0.0) {
        out.loss += l * inv;
        add_score_grad(model, negatives[i], inv, out.entity_grad, out.relation_grad);
        add_score_grad(model, positives[i], -inv, out.entity_grad, out.relation_grad);
      }
    } else {
      out.loss += (softplus(-fp) + softplus(fn)) * inv;
      add_score_grad(model, positives[i], -sigmoid(-fp) * inv, out.entity_grad, out.relation_grad);
      add_score_grad(model, negatives[i], sigmoid(fn) * inv, out.entity_grad, out.relation_grad);
    }
  }
  return out;
}

KgeTrainResult train_kge(const KnowledgeGraph& graph, const KgeTrainConfig& config) {
  if (graph.triples().empty()) throw UsageError("train_kge: graph has no triples");
  if (graph.num_entities() < 2) {
    throw UsageError("train_kge: graph needs at least two entities to sample negatives");
  }
  if (!(config.learning_rate > 0.0) || config.iterations == 0 || config.dim == 0 ||
      config.batch_size == 0 || config.negatives_per_positive == 0) {
    throw UsageError("train_kge: learning_rate, iterations, dim, batch_size and negatives must be positive");
  }
  if (is_transe(config.scorer) && !(config.margin > 0.0)) {
    throw UsageError("train_kge: margin must be positive");
  }

  const std::size_t ne = graph.num_entities(), nr = graph.num_relations(), d = config.dim;
  std::mt19937_64 rng(config.seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> init(-bound, bound);

  KgeTrainResult result;
  KgeModel& m = result.model;
  m.scorer = config.scorer;
  m.dim = d;
  m.entity_embeddings = Tensor(Shape{ne, d});
  m.relation_embeddings = Tensor(Shape{nr, d});
  for (auto& v : m.entity_embeddings.data) v = init(rng);
  for (auto& v : m.relation_embeddings.data) v = init(rng);
  if (is_transe(m.scorer)) {
    for (std::size_t i = 0; i < nr; ++i) normalize_row(m.relation_embeddings.row(i));
    for (std::size_t i = 0; i < ne; ++i) normalize_row(m.entity_embeddings.row(i));
  }

  const auto& triples = graph.triples();
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t batch = std::min(config.batch_size, triples.size());
  const std::size_t max_attempts = std::min<std::size_t>(1000, 10 * ne);
  std::uniform_int_distribution<std::size_t> pick_entity(0, ne - 1);
  std::bernoulli_distribution coin(0.5);

  std::vector<Triple> pos, neg;
  std::vector<char> touched(ne, 0);
  result.loss_history.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    pos.clear();
    neg.clear();
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Triple& p = triples[order[cursor++]];
      for (std::size_t n = 0; n < config.negatives_per_positive; ++n) {
        for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
          Triple c = p;
          if (coin(rng)) {
            c.head = pick_entity(rng);
          } else {
            c.tail = pick_entity(rng);
          }
          if (!graph.contains(c)) {
            pos.push_back(p);
            neg.push_back(c);
            break;
          }
        }
      }
    }
    if (pos.empty()) {
      result.loss_history.push_back(0.0);
      continue;
    }
    const auto lg = kge_pair_loss(m, pos, neg, config.margin);
    for (std::size_t i = 0; i < lg.entity_grad.size(); ++i) {
      m.entity_embeddings.data[i] -= config.learning_rate * lg.entity_grad[i];
    }
    for (std::size_t i = 0; i < lg.relation_grad.size(); ++i) {
      m.relation_embeddings.data[i] -= config.learning_rate * lg.relation_grad[i];
    }
    if (is_transe(m.scorer)) {
      for (std::size_t i = 0; i < pos.size(); ++i) {
        touched[pos[i].head] = touched[pos[i].tail] = 1;
        touched[neg[i].head] = touched[neg[i].tail] = 1;
      }
      for (std::size_t e = 0; e < ne; ++e) {
        if (touched[e]) {
          normalize_row(m.entity_embeddings.row(e));
          touched[e] = 0;
        }
      }
    }
    if (!std::isfinite(lg.loss)) throw NumericalError("train_kge: loss became non-finite");
    result.loss_history.push_back(lg.loss);
  }
  return result;
}

LinkPredictionMetrics evaluate_link_prediction(const KgeModel& model, const KnowledgeGraph& graph,
                                               std::span<const Triple> test) {
  if (test.empty()) throw UsageError("evaluate_link_prediction: empty test set");
  const std::size_t ne = graph.num_entities();
  if (model.entity_embeddings.rows() != ne || model.relation_embeddings.rows() != graph.num_relations()) {
    throw UsageError("evaluate_link_prediction: model and graph vocabularies differ in size");
  }
  LinkPredictionMetrics out;
  double rr = 0.0;
  std::size_t h1 = 0, h10 = 0;
  auto tally = [&](std::size_t rank) {
    rr += 1.0 / static_cast<double>(rank);
    h1 += rank <= 1;
    h10 += rank <= 10;
    ++out.ranks;
  };
  for (const auto& tr : test) {
    if (tr.head >= ne || tr.tail >= ne || tr.relation >= graph.num_relations()) {
      throw UsageError("evaluate_link_prediction: test triple references an unknown id");
    }
    const double s = model.score(tr);
    std::size_t tail_rank = 1, head_rank = 1;
    for (std::size_t e = 0; e < ne; ++e) {
      if (e != tr.tail) {
        const Triple c{tr.head, tr.relation, e};
        if (!graph.contains(c) && model.score(c) >= s) ++tail_rank;
      }
      if (e != tr.head) {
        const Triple c{e, tr.relation, tr.tail};
        if (!graph.contains(c) && model.score(c) >= s) ++head_rank;
      }
    }
    tally(tail_rank);
    tally(head_rank);
  }
  const auto n = static_cast<double>(out.ranks);
  out.mrr = rr / n;
  out.hits_at_1 = static_cast<double>(h1) / n;
  out.hits_at_10 = static_cast<double>(h10) / n;
  return out;
}

std::optional<std::span<const double>> lookup_embedding(const KgeModel& model,
                                                        const KnowledgeGraph& graph,
                                                        const std::string& keyword,
                                                        const SynonymMap& synonyms) {
  auto key = normalize_phrase(keyword);
  if (auto it = synonyms.find(key); it != synonyms.end()) key = it->second;
  const auto id = graph.entity_id(key);
  if (!id || *id >= model.entity_embeddings.rows()) return std::nullopt;
  return model.entity(*id);
}

void save_kge(const std::string& prefix, const KgeModel& model, const KnowledgeGraph& graph) {
  Container c;
  c.entries.push_back({"entity_embeddings", model.entity_embeddings});
  c.entries.push_back({"relation_embeddings", model.relation_embeddings});
  c.meta = {{"kind", "kge"},
            {"scorer", scorer_name(model.scorer)},
            {"dim", model.dim},
            {"entities", graph.entities()},
            {"relations", graph.relations()}};
  write_container(prefix + ".tsr", prefix + ".json", c);
}

KgeCheckpoint load_kge(const std::string& prefix) {
  const auto c = read_container(prefix + ".tsr", prefix + ".json");
  try {
    if (c.meta.value("kind", "") != "kge") throw DataError("not a KGE checkpoint");
    KgeCheckpoint ck;
    ck.model.scorer = parse_scorer(c.meta.at("scorer").get<std::string>());
    ck.model.dim = c.meta.at("dim").get<std::size_t>();
    ck.model.entity_embeddings = c.get("entity_embeddings");
    ck.model.relation_embeddings = c.get("relation_embeddings");
    ck.entities = c.meta.at("entities").get<std::vector<std::string>>();
    ck.relations = c.meta.at("relations").get<std::vector<std::string>>();
    if (ck.model.entity_embeddings.rows() != ck.entities.size() ||
        ck.model.entity_embeddings.cols() != ck.model.dim ||
        ck.model.relation_embeddings.rows() != ck.relations.size() ||
        ck.model.relation_embeddings.cols() != ck.model.dim) {
      throw DataError("tensor shapes disagree with vocabularies");
    }
    return ck;
  } catch (const Json::exception& e) {
    throw DataError(prefix + ".json: " + e.what());
  } catch (const Error& e) {
    throw DataError(prefix + ": " + e.what());
  }
}

}  // namespace textscene
