#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "textscene/container.hpp"
#include "textscene/scene.hpp"
#include "textscene/sce.hpp"

namespace textscene {

// Exact cosine index. Rows are stored unit-norm in insertion order.
class RetrievalIndex {
 public:
  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const double> vector(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }

 private:
  friend RetrievalIndex build_index(std::span<const std::pair<std::string, std::vector<double>>> entries);
  std::vector<std::string> ids_;
  std::vector<double> vectors_;
  std::size_t dim_ = 0;
};

RetrievalIndex build_index(std::span<const std::pair<std::string, std::vector<double>>> entries);

struct RankedEntry {
  std::string id;
  double score = 0.0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;  // scores non-increasing, ties by ascending id
};

RankedList query_topk(const RetrievalIndex& index, std::span<const double> query, std::size_t k,
                      std::string query_id = {});

using RelevanceMap = std::unordered_map<std::string, std::set<std::string>>;

// Fraction of queries whose top-k holds at least one relevant id.
std::map<std::size_t, double> recall_at_k(std::span<const RankedList> lists, const RelevanceMap& truth,
                                          std::span<const std::size_t> ks);
std::map<std::size_t, double> recall_at_k(std::span<const RankedList> lists, const RelevanceMap& truth);

struct BidirectionalMetrics {
  std::map<std::size_t, double> text_retrieval;   // scene query, text candidates
  std::map<std::size_t, double> scene_retrieval;  // text query, scene candidates
  std::size_t pool_size = 0;
};

// Validation split only. A candidate is relevant when its caption string equals
// the query sample's caption.
BidirectionalMetrics evaluate_bidirectional(const AlignModel& model, const PairedCorpus& corpus);

Json metrics_json(const BidirectionalMetrics& m);

// Scene embeddings as a container, one [1 x d_c] tensor per sample; every
// split when `split` is empty.
Container scene_embeddings(const AlignModel& model, const PairedCorpus& corpus,
                           std::optional<Split> split = std::nullopt);
RetrievalIndex index_from_container(const Container& c);

}  // namespace textscene
