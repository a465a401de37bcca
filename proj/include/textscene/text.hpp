#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "textscene/autodiff.hpp"
#include "textscene/kg.hpp"
#include "textscene/tensor.hpp"
#include "textscene/tokenize.hpp"

namespace textscene {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;

  // Non-reserved tokens only, one per line; line i holds id i + kReserved.
  std::vector<std::string> user_tokens() const;
  static Vocabulary from_user_tokens(std::span<const std::string> tokens);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  // FNV-1a of the vocabulary file contents, hex encoded.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Builds a vocabulary from captions, assigning ids in first-appearance order.
Vocabulary build_vocabulary(std::span<const std::string> captions);

// Entity names with their KGE vectors plus the synonym table, detached from
// the graph so it can travel inside an alignment checkpoint.
class EntityLexicon {
 public:
  EntityLexicon() = default;
  EntityLexicon(std::vector<std::string> names, Tensor vectors, SynonymMap synonyms);
  static EntityLexicon from_model(const KnowledgeGraph& graph, const KgeModel& model,
                                  SynonymMap synonyms = {});
  static EntityLexicon from_checkpoint(const KgeCheckpoint& ck, SynonymMap synonyms = {});

  bool empty() const { return names_.empty(); }
  std::size_t dim() const { return vectors_.cols(); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& vectors() const { return vectors_; }
  const SynonymMap& synonyms() const { return synonyms_; }

  // Resolves a normalized phrase through the synonym table to an entity row.
  std::optional<std::size_t> resolve(const std::string& phrase) const;

 private:
  std::vector<std::string> names_;
  Tensor vectors_;
  SynonymMap synonyms_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EntityMatch {
  std::size_t token_position = 0;  // first token of the matched span
  std::size_t token_count = 1;
  std::string entity_name;
  std::vector<double> kge_vector;
};

constexpr std::size_t kMaxEntityNgram = 3;

// Greedy left-to-right longest match over n-grams of up to kMaxEntityNgram
// tokens. Matches are returned in strictly increasing position order.
std::vector<EntityMatch> link_entities(std::span<const std::string> tokens,
                                       const EntityLexicon& lexicon);

struct TextEncoderParams {
  Tensor token_embedding;    // [|V| x d_tok]
  Tensor kge_projection;     // [d_kg x d_tok]
  Tensor output_projection;  // [d_tok x d_lang]

  std::size_t d_tok() const { return token_embedding.cols(); }
  std::size_t d_lang() const { return output_projection.cols(); }
  std::size_t d_kg() const { return kge_projection.rows(); }
};

// Inserts each match's projected KGE vector right after the last token of its
// span. With no matches the input Var itself is returned.
ad::Var fuse_kgp(const ad::Var& token_embeds, std::span<const EntityMatch> matches,
                 const ad::Var& kge_projection);

struct EncodedText {
  ad::Var sequence;  // [(L + M) x d_lang]
  ad::Var pooled;    // [1 x d_lang], mean over positions
};
EncodedText encode_text(const ad::Var& fused, const ad::Var& output_projection);

}  // namespace textscene
