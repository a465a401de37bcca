#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "textscene/kg.hpp"
#include "textscene/tensor.hpp"

namespace textscene {

struct SceneRecord {
  std::string sample_id;
  Tensor bev;  // [n x d_b]
};

struct TextRecord {
  std::string sample_id;
  std::string caption;
};

enum class Split { Train, Validation };
std::string split_name(Split s);
Split parse_split(const std::string& name);

// texts[i] pairs with the scene of the same sample_id; splits[i] belongs to
// texts[i].
struct PairedCorpus {
  std::vector<SceneRecord> scenes;
  std::vector<TextRecord> texts;
  std::vector<Split> splits;

  // Throws DataError unless ids pair scenes and texts one-to-one.
  void validate() const;
  const SceneRecord& scene_for(const std::string& sample_id) const;
  std::vector<std::size_t> indices(Split s) const;  // into texts
  std::size_t bev_dim() const;
};

// Drops every singleton axis; a remaining vector becomes a single-row matrix.
Tensor squeeze_to_matrix(const Tensor& t);

// Feature container: <prefix>.tsr + <prefix>.json sidecar (sample_id ->
// byte offset). All samples must share one shape and be finite.
std::vector<SceneRecord> load_bev_features(const std::string& tensor_path, const std::string& sidecar_path);
void save_bev_features(const std::string& tensor_path, const std::string& sidecar_path,
                       const std::vector<SceneRecord>& scenes);

// Corpus directory: scenes.tsr, scenes.json, texts.jsonl.
void save_corpus(const std::string& dir, const PairedCorpus& corpus);
PairedCorpus load_corpus(const std::string& dir);

struct SynthSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 8;
  std::size_t seq_len = 16;  // n
  std::size_t bev_dim = 32;  // d_b
  double noise_sigma = 0.05;
  double validation_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  PairedCorpus corpus;
  std::vector<std::size_t> labels;   // class of texts[i]
  std::vector<TripleRecord> graph;   // companion toy KG over caption keywords
  SynonymMap synonyms;               // plural and alias forms -> entity
};

// Each class gets a Gaussian prototype sequence and a distinct caption built
// from a keyword pool; samples are prototype + N(0, noise_sigma^2) noise.
SynthCorpus synth_corpus(const SynthSpec& spec);

}  // namespace textscene
