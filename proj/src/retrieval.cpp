#include "textscene/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "textscene/error.hpp"

namespace textscene {

RetrievalIndex build_index(std::span<const std::pair<std::string, std::vector<double>>> entries) {
  RetrievalIndex idx;
  if (entries.empty()) return idx;
  idx.dim_ = entries.front().second.size();
  if (idx.dim_ == 0) throw UsageError("build_index: zero-dimensional vectors");
  std::unordered_set<std::string> seen;
  idx.vectors_.reserve(entries.size() * idx.dim_);
  for (const auto& [id, v] : entries) {
    if (!seen.insert(id).second) throw UsageError("build_index: duplicate id '" + id + "'");
    if (v.size() != idx.dim_) {
      throw UsageError("build_index: vector for '" + id + "' has dimension " + std::to_string(v.size()) +
                       ", expected " + std::to_string(idx.dim_));
    }
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (!(n > 0.0) || !std::isfinite(n)) throw UsageError("build_index: vector for '" + id + "' is zero or non-finite");
    for (double x : v) idx.vectors_.push_back(x / n);
    idx.ids_.push_back(id);
  }
  return idx;
}

RankedList query_topk(const RetrievalIndex& index, std::span<const double> query, std::size_t k,
                      std::string query_id) {
  if (k == 0) throw UsageError("query_topk: k must be at least 1");
  if (index.size() > 0 && query.size() != index.dim()) {
    throw UsageError("query_topk: query dimension " + std::to_string(query.size()) + " does not match index " +
                     std::to_string(index.dim()));
  }
  double n2 = 0.0;
  for (double x : query) n2 += x * x;
  const double qn = std::sqrt(n2);
  if (!(qn > 0.0)) throw UsageError("query_topk: zero query vector");

  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto v = index.vector(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * query[j];
    scores[i] = dot / qn;
  }
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& ids = index.ids();
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), better);

  RankedList out;
  out.query_id = std::move(query_id);
  out.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.entries.push_back({ids[order[i]], scores[order[i]]});
  return out;
}

std::map<std::size_t, double> recall_at_k(std::span<const RankedList> lists, const RelevanceMap& truth,
                                          std::span<const std::size_t> ks) {
  if (lists.empty()) throw UsageError("recall_at_k: no queries");
  std::map<std::size_t, std::size_t> hits;
  for (auto k : ks) {
    if (k == 0) throw UsageError("recall_at_k: k must be at least 1");
    hits[k] = 0;
  }
  for (const auto& list : lists) {
    const auto it = truth.find(list.query_id);
    if (it == truth.end() || it->second.empty()) {
      throw UsageError("recall_at_k: query '" + list.query_id + "' has no relevant ids");
    }
    std::size_t first = list.entries.size();
    for (std::size_t r = 0; r < list.entries.size(); ++r) {
      if (it->second.contains(list.entries[r].id)) {
        first = r;
        break;
      }
    }
    for (auto& [k, h] : hits) {
      if (first < k) ++h;
    }
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) out[k] = static_cast<double>(h) / static_cast<double>(lists.size());
  return out;
}

std::map<std::size_t, double> recall_at_k(std::span<const RankedList> lists, const RelevanceMap& truth) {
  static constexpr std::size_t kDefault[] = {1, 5, 10};
  return recall_at_k(lists, truth, kDefault);
}

BidirectionalMetrics evaluate_bidirectional(const AlignModel& model, const PairedCorpus& corpus) {
  const auto val = corpus.indices(Split::Validation);
  if (val.empty()) throw UsageError("evaluate: validation split is empty");

  std::vector<std::pair<std::string, std::vector<double>>> scenes, texts;
  for (auto i : val) {
    const auto& t = corpus.texts[i];
    scenes.emplace_back(t.sample_id, embed_scene(model, corpus.scene_for(t.sample_id).bev));
    texts.emplace_back(t.sample_id, embed_text(model, t.caption));
  }
  const auto scene_index = build_index(scenes);
  const auto text_index = build_index(texts);

  RelevanceMap truth;
  for (auto i : val) {
    for (auto j : val) {
      if (corpus.texts[i].caption == corpus.texts[j].caption) {
        truth[corpus.texts[i].sample_id].insert(corpus.texts[j].sample_id);
      }
    }
  }

  const std::size_t k = 10;
  std::vector<RankedList> s2t, t2s;
  for (const auto& [id, v] : scenes) s2t.push_back(query_topk(text_index, v, k, id));
  for (const auto& [id, v] : texts) t2s.push_back(query_topk(scene_index, v, k, id));

  BidirectionalMetrics m;
  m.text_retrieval = recall_at_k(s2t, truth);
  m.scene_retrieval = recall_at_k(t2s, truth);
  m.pool_size = val.size();
  return m;
}

Json metrics_json(const BidirectionalMetrics& m) {
  auto dir = [](const std::map<std::size_t, double>& r) {
    Json j = Json::object();
    for (const auto& [k, v] : r) j["R@" + std::to_string(k)] = v;
    return j;
  };
  return Json{{"text_retrieval", dir(m.text_retrieval)},
              {"scene_retrieval", dir(m.scene_retrieval)},
              {"pool_size", m.pool_size}};
}

Container scene_embeddings(const AlignModel& model, const PairedCorpus& corpus, std::optional<Split> split) {
  Container c;
  for (std::size_t i = 0; i < corpus.texts.size(); ++i) {
    if (split && corpus.splits[i] != *split) continue;
    const auto& id = corpus.texts[i].sample_id;
    auto v = embed_scene(model, corpus.scene_for(id).bev);
    const std::size_t d = v.size();
    c.entries.push_back({id, Tensor(Shape{1, d}, std::move(v))});
  }
  c.meta = {{"kind", "scene_index"}, {"split", split ? split_name(*split) : "all"}};
  return c;
}

RetrievalIndex index_from_container(const Container& c) {
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  for (const auto& e : c.entries) entries.emplace_back(e.id, e.tensor.data);
  try {
    return build_index(entries);
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
}

}  // namespace textscene
