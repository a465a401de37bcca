#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "textscene/tensor.hpp"

namespace textscene {

struct TripleRecord {
  std::string head;
  std::string relation;
  std::string tail;
  std::size_t line = 0;  // 1-based source line, 0 when not from a file
};

struct Triple {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  auto operator<=>(const Triple&) const = default;
};

class KnowledgeGraph {
 public:
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }
  const std::vector<Triple>& triples() const { return triples_; }

  std::optional<std::size_t> entity_id(const std::string& name) const;
  std::optional<std::size_t> relation_id(const std::string& name) const;
  bool contains(const Triple& t) const { return known_.contains(t); }

  // Ids are assigned in first-appearance order. Returns false for a duplicate.
  std::size_t add_entity(const std::string& name);
  std::size_t add_relation(const std::string& name);
  bool add_triple(const Triple& t);

  Triple resolve(const TripleRecord& r) const;

 private:
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, std::size_t> entity_ids_;
  std::unordered_map<std::string, std::size_t> relation_ids_;
  std::vector<Triple> triples_;
  std::set<Triple> known_;
};

struct LoadedGraph {
  KnowledgeGraph graph;
  std::size_t duplicates_dropped = 0;
};

// Names are stored as normalize_phrase() of the raw strings.
LoadedGraph load_graph(std::span<const TripleRecord> records);

// Tab-separated head, relation, tail; '#' starts a comment line.
std::vector<TripleRecord> parse_triples(std::istream& in);
std::vector<TripleRecord> read_triple_file(const std::string& path);

// Surface form -> entity name, both normalized.
using SynonymMap = std::unordered_map<std::string, std::string>;
SynonymMap parse_synonyms(std::istream& in);
SynonymMap read_synonym_file(const std::string& path);

enum class Scorer { TransE_L1, TransE_L2, DistMult };
std::string scorer_name(Scorer s);
Scorer parse_scorer(const std::string& name);

// -||h + r - t||_p
double score_transe(std::span<const double> h, std::span<const double> r,
                    std::span<const double> t, int p);
// sum_i h_i r_i t_i
double score_distmult(std::span<const double> h, std::span<const double> r,
                      std::span<const double> t);

struct KgeModel {
  Tensor entity_embeddings;    // [|E| x dim]
  Tensor relation_embeddings;  // [|R| x dim]
  Scorer scorer = Scorer::DistMult;
  std::size_t dim = 0;

  double score(const Triple& t) const;
  std::span<const double> entity(std::size_t id) const { return entity_embeddings.row(id); }
};

struct KgeTrainConfig {
  Scorer scorer = Scorer::DistMult;
  std::size_t dim = 32;
  double learning_rate = 0.25;
  std::size_t iterations = 16000;
  double margin = 1.0;  // TransE only
  std::size_t negatives_per_positive = 1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct KgeTrainResult {
  KgeModel model;
  std::vector<double> loss_history;  // mean batch loss per iteration
};

// Mini-batch SGD. TransE: margin ranking max(0, margin + f(neg) - f(pos)) with
// entity rows renormalized to unit L2 norm after every step. DistMult:
// logistic loss softplus(-f(pos)) + softplus(f(neg)). Negatives replace the
// head or tail (fair coin) by a uniform entity, rejecting known triples.
KgeTrainResult train_kge(const KnowledgeGraph& graph, const KgeTrainConfig& config);

// Mean loss of a batch of (positive, negative) pairs and its gradient with
// respect to both embedding tables. Exposed so the update rule can be checked
// against finite differences.
struct KgeLossGrad {
  double loss = 0.0;
  std::vector<double> entity_grad;
  std::vector<double> relation_grad;
};
KgeLossGrad kge_pair_loss(const KgeModel& model, std::span<const Triple> positives,
                          std::span<const Triple> negatives, double margin);

struct LinkPredictionMetrics {
  double mrr = 0.0;
  double hits_at_1 = 0.0;
  double hits_at_10 = 0.0;
  std::size_t ranks = 0;  // two per test triple (head and tail)
};

// Filtered ranking of both the true tail and the true head among all entity
// substitutions. Competitors that are themselves known triples are skipped;
// ties with the true entity count against it.
LinkPredictionMetrics evaluate_link_prediction(const KgeModel& model, const KnowledgeGraph& graph,
                                               std::span<const Triple> test);

// Exact match on the normalized keyword, after mapping through `synonyms`.
std::optional<std::span<const double>> lookup_embedding(const KgeModel& model,
                                                        const KnowledgeGraph& graph,
                                                        const std::string& keyword,
                                                        const SynonymMap& synonyms = {});

// Checkpoint: <prefix>.tsr + <prefix>.json (scorer, dim, vocabularies).
struct KgeCheckpoint {
  KgeModel model;
  std::vector<std::string> entities;
  std::vector<std::string> relations;
};
void save_kge(const std::string& prefix, const KgeModel& model, const KnowledgeGraph& graph);
KgeCheckpoint load_kge(const std::string& prefix);

}  // namespace textscene
