#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "textscene/autodiff.hpp"
#include "textscene/gradcheck.hpp"
#include "textscene/scene.hpp"
#include "textscene/tensor.hpp"
#include "textscene/text.hpp"

namespace textscene {

// One causal self-attention block, one cross-attention block over the
// reprojected scene codebook, and a ReLU feed-forward block, all residual and
// single-headed. Width equals the shared-space width d_c.
struct CaptionDecoderParams {
  Tensor token_embedding;     // [|V| x d]
  Tensor position_embedding;  // [max_len x d]
  Tensor self_query, self_key, self_value, self_output;      // [d x d]
  Tensor cross_query, cross_key, cross_value, cross_output;  // [d x d]
  Tensor ffn_in;   // [d x hidden]
  Tensor ffn_out;  // [hidden x d]
  Tensor output;   // [d x |V|]

  std::size_t max_len() const { return position_embedding.rows(); }
  std::size_t vocab_size() const { return token_embedding.rows(); }
};

struct SceParams {
  Tensor shared_embeddings;  // C, [k x d_c]
  Tensor bev_projection;     // [d_b x d_c]
  Tensor text_projection;    // [d_lang x d_c]
  double temperature = 0.07;
  double lambda = 0.15;
  CaptionDecoderParams decoder;
};

struct ModelDims {
  std::size_t d_b = 32;
  std::size_t d_kg = 32;
  std::size_t d_tok = 64;
  std::size_t d_lang = 64;
  std::size_t d_c = 64;
  std::size_t k = 16;
  std::size_t ffn_hidden = 128;
  std::size_t max_caption_len = 32;
};

struct AlignModel {
  ModelDims dims;
  Vocabulary vocab;
  EntityLexicon lexicon;
  bool use_kgp = false;
  TextEncoderParams text;
  SceParams sce;

  // Every trainable tensor in a fixed order with a stable name.
  std::vector<std::pair<std::string, Tensor*>> parameters();
};

// Random initialisation; d_kg is taken from the lexicon when it is non-empty.
AlignModel init_align_model(ModelDims dims, Vocabulary vocab, EntityLexicon lexicon, bool use_kgp,
                            double temperature, double lambda, std::uint64_t seed);

struct DecoderVars {
  ad::Var token_embedding, position_embedding;
  ad::Var self_query, self_key, self_value, self_output;
  ad::Var cross_query, cross_key, cross_value, cross_output;
  ad::Var ffn_in, ffn_out, output;
};

// Leaves of one AlignModel on one tape.
struct BoundModel {
  const AlignModel* model = nullptr;
  ad::Var shared_embeddings, bev_projection, text_projection;
  ad::Var token_embedding, kge_projection, output_projection;
  DecoderVars decoder;
};
BoundModel bind(ad::Tape& tape, AlignModel& model);
// Same graph over read-only views; no gradients are recorded.
BoundModel bind_frozen(ad::Tape& tape, const AlignModel& model);

struct SceOutput {
  ad::Var weights;      // [1 x k], softmax of per-codebook max similarity
  ad::Var reprojected;  // [k x d_c], row i = w_i c_i
  ad::Var pooled;       // [1 x d_c], sum_i w_i c_i
};

// s_ij = cos(c_i, row_j), r_i = max_j s_ij, w = softmax(r).
SceOutput sce_reproject(const ad::Var& sequence, const ad::Var& codebook);

struct ContrastiveLoss {
  ad::Var text_to_scene;
  ad::Var scene_to_text;
  ad::Var total;
};

// Temperature-scaled InfoNCE over cosine similarities in both directions;
// row i of each matrix is a positive pair.
ContrastiveLoss contrastive_loss(const ad::Var& bev_pooled, const ad::Var& text_pooled, double temperature);

// Teacher-forced logits [len x |V|]; the prefix must start with BOS.
ad::Var caption_logits(const DecoderVars& decoder, const ad::Var& reprojected_bev,
                       std::span<const std::size_t> prefix);
ad::Var cg_loss(const ad::Var& logits, std::span<const std::size_t> targets);

ad::Var total_loss(const ad::Var& sce_loss, const ad::Var& cg, double lambda);
double total_loss(double sce_loss, double cg, double lambda);

struct CaptionTokens {
  std::vector<std::size_t> prefix;   // BOS, t_1 ... t_{n-1}
  std::vector<std::size_t> targets;  // t_1 ... t_n (the last may be EOS)
};
// BOS + caption + EOS, truncated to max_len decoder positions.
CaptionTokens caption_tokens(const Vocabulary& vocab, const std::string& caption, std::size_t max_len);

SceOutput forward_scene(const BoundModel& bm, const Tensor& bev);
// Raises UsageError for a caption with no tokens.
SceOutput forward_text(const BoundModel& bm, const std::string& caption);

struct BatchLoss {
  ContrastiveLoss contrastive;
  ad::Var caption;  // mean CG loss over the batch
  ad::Var total;
};
BatchLoss batch_loss(const BoundModel& bm, const PairedCorpus& corpus, std::span<const std::size_t> batch);

// Finite-difference check of the combined loss on one batch; per_param follows
// the order of AlignModel::parameters().
GradCheckResult check_batch_gradients(AlignModel& model, const PairedCorpus& corpus,
                                      std::span<const std::size_t> batch, const GradCheckOptions& options = {});

// Pooled shared-space embeddings, evaluated without recording gradients.
std::vector<double> embed_scene(const AlignModel& model, const Tensor& bev);
std::vector<double> embed_text(const AlignModel& model, const std::string& caption);

struct AlignTrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 60;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  double temperature = 0.07;
  double lambda = 0.15;
  bool use_kgp = true;
  ModelDims dims;
};

struct EpochLog {
  std::size_t epoch = 0;
  double sce = 0.0;
  double cg = 0.0;
  double total = 0.0;
};

struct AlignTrainResult {
  AlignModel model;
  std::vector<EpochLog> log;
};

// Seeded shuffle of the training split into batches in which no caption
// repeats; a caption-identical pair in one batch would be a false negative.
std::vector<std::vector<std::size_t>> make_batches(const PairedCorpus& corpus,
                                                   std::span<const std::size_t> indices,
                                                   std::size_t batch_size, std::mt19937_64& rng);

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch gradient descent on L_SCE + lambda L_CG with a cosine-annealed
// learning rate. KGP is active only when use_kgp is set and the lexicon is
// non-empty. Raises NumericalError on a non-finite loss.
AlignTrainResult train_align(const PairedCorpus& corpus, const EntityLexicon& lexicon,
                             const AlignTrainConfig& config, const EpochCallback& on_epoch = {});

// Checkpoint directory: align.tsr, align.json, vocab.txt.
void save_align(const std::string& dir, const AlignModel& model);
AlignModel load_align(const std::string& dir);

}  // namespace textscene
