#include "textscene/text.hpp"

#include <fstream>
#include <sstream>

#include "textscene/error.hpp"
#include "textscene/hash.hpp"

namespace textscene {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& token) const {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  return kUnk;
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::user_tokens() const {
  return {tokens_.begin() + kReserved, tokens_.end()};
}

Vocabulary Vocabulary::from_user_tokens(std::span<const std::string> tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (t.empty()) throw DataError("vocabulary: empty token");
    if (v.contains(t)) throw DataError("vocabulary: duplicate token '" + t + "'");
    v.add(t);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& t : user_tokens()) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    toks.push_back(line);
  }
  return from_user_tokens(toks);
}

std::string Vocabulary::hash() const {
  Fnv1a h;
  for (const auto& t : user_tokens()) {
    h.update(t);
    h.update("\n");
  }
  return h.hex();
}

Vocabulary build_vocabulary(std::span<const std::string> captions) {
  Vocabulary v;
  for (const auto& c : captions) {
    for (const auto& t : tokenize(c)) v.add(t);
  }
  return v;
}

EntityLexicon::EntityLexicon(std::vector<std::string> names, Tensor vectors, SynonymMap synonyms)
    : names_(std::move(names)), vectors_(std::move(vectors)), synonyms_(std::move(synonyms)) {
  if (!names_.empty() && vectors_.rows() != names_.size()) {
    throw UsageError("EntityLexicon: one vector row per entity name required");
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    names_[i] = normalize_phrase(names_[i]);
    index_.try_emplace(names_[i], i);
  }
}

EntityLexicon EntityLexicon::from_model(const KnowledgeGraph& graph, const KgeModel& model,
                                        SynonymMap synonyms) {
  return EntityLexicon(graph.entities(), model.entity_embeddings, std::move(synonyms));
}

EntityLexicon EntityLexicon::from_checkpoint(const KgeCheckpoint& ck, SynonymMap synonyms) {
  return EntityLexicon(ck.entities, ck.model.entity_embeddings, std::move(synonyms));
}

std::optional<std::size_t> EntityLexicon::resolve(const std::string& phrase) const {
  const std::string* key = &phrase;
  if (auto it = synonyms_.find(phrase); it != synonyms_.end()) key = &it->second;
  if (auto it = index_.find(*key); it != index_.end()) return it->second;
  return std::nullopt;
}

std::vector<EntityMatch> link_entities(std::span<const std::string> tokens,
                                       const EntityLexicon& lexicon) {
  std::vector<EntityMatch> out;
  if (lexicon.empty()) return out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    bool matched = false;
    for (std::size_t n = std::min(kMaxEntityNgram, tokens.size() - i); n >= 1; --n) {
      const auto phrase = join_tokens(tokens.subspan(i, n));
      if (auto row = lexicon.resolve(phrase)) {
        const auto v = lexicon.vectors().row(*row);
        out.push_back({i, n, lexicon.names()[*row], {v.begin(), v.end()}});
        i += n;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

ad::Var fuse_kgp(const ad::Var& token_embeds, std::span<const EntityMatch> matches,
                 const ad::Var& kge_projection) {
  if (matches.empty()) return token_embeds;
  const std::size_t len = token_embeds.rows();
  ad::Tape& tape = *token_embeds.tape();
  std::vector<ad::Var> parts;
  std::size_t cursor = 0;
  for (const auto& m : matches) {
    const std::size_t end = m.token_position + m.token_count;
    if (m.token_count == 0 || end > len) {
      throw UsageError("fuse_kgp: match at position " + std::to_string(m.token_position) +
                       " out of range for " + std::to_string(len) + " tokens");
    }
    if (m.token_position < cursor) throw UsageError("fuse_kgp: matches overlap or are out of order");
    if (m.kge_vector.size() != kge_projection.rows()) {
      throw UsageError("fuse_kgp: KGE vector has " + std::to_string(m.kge_vector.size()) +
                       " entries, projection expects " + std::to_string(kge_projection.rows()));
    }
    parts.push_back(ad::slice_rows(token_embeds, cursor, end - cursor));
    auto kv = tape.constant(Tensor::matrix(1, m.kge_vector.size(), m.kge_vector));
    parts.push_back(ad::matmul(kv, kge_projection));
    cursor = end;
  }
  if (cursor < len) parts.push_back(ad::slice_rows(token_embeds, cursor, len - cursor));
  return ad::concat_rows(parts);
}

EncodedText encode_text(const ad::Var& fused, const ad::Var& output_projection) {
  if (!fused.valid() || fused.size() == 0) throw UsageError("encode_text: empty sequence");
  auto seq = ad::matmul(fused, output_projection);
  auto pooled = ad::mean_rows(seq);
  return {seq, pooled};
}

}  // namespace textscene
