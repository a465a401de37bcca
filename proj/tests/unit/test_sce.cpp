#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "generators.hpp"
#include "textscene/error.hpp"
#include "textscene/gradcheck.hpp"
#include "textscene/kg.hpp"
#include "textscene/sce.hpp"

using namespace textscene;
namespace ad = textscene::ad;

namespace {

// Per-direction InfoNCE evaluated with plain loops from raw vectors.
double infonce_oracle(const Tensor& q, const Tensor& c, double tau) {
  const std::size_t n = q.rows();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double m = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = ad::cosine_sim(q.row(i), c.row(j)) / tau;
      m = std::max(m, s[j]);
    }
    double z = 0.0;
    for (double x : s) z += std::exp(x - m);
    loss += -(s[i] - m - std::log(z));
  }
  return loss / static_cast<double>(n);
}

// Distance from v to the row space of C by Gram-Schmidt.
double span_residual(const Tensor& C, std::span<const double> v) {
  std::vector<std::vector<double>> basis;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    std::vector<double> b(C.row(i).begin(), C.row(i).end());
    for (const auto& e : basis) {
      double d = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) d += b[k] * e[k];
      for (std::size_t k = 0; k < b.size(); ++k) b[k] -= d * e[k];
    }
    double n = 0.0;
    for (double x : b) n += x * x;
    if (n > 1e-20) {
      for (auto& x : b) x /= std::sqrt(n);
      basis.push_back(b);
    }
  }
  std::vector<double> r(v.begin(), v.end());
  for (const auto& e : basis) {
    double d = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) d += r[k] * e[k];
    for (std::size_t k = 0; k < r.size(); ++k) r[k] -= d * e[k];
  }
  double n = 0.0;
  for (double x : r) n += x * x;
  return std::sqrt(n);
}

PairedCorpus small_corpus(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed = 0) {
  SynthSpec s;
  s.num_classes = classes;
  s.samples_per_class = per_class;
  s.noise_sigma = noise;
  s.seed = seed;
  return synth_corpus(s).corpus;
}

ModelDims tiny_dims() {
  ModelDims d;
  d.d_b = 32;
  d.d_kg = 4;
  d.d_tok = 8;
  d.d_lang = 8;
  d.d_c = 8;
  d.k = 4;
  d.ffn_hidden = 8;
  d.max_caption_len = 24;
  return d;
}

AlignModel tiny_model(const PairedCorpus& c, std::uint64_t seed = 0) {
  std::vector<std::string> caps;
  for (const auto& t : c.texts) caps.push_back(t.caption);
  return init_align_model(tiny_dims(), build_vocabulary(caps), {}, false, 0.07, 0.15, seed);
}

}  // namespace

TEST(SceReproject, WorkedExample) {
  // Oracle: r = (1, 0), w_1 = e / (e + 1).
  const double w1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(w1, 0.731059, 1e-6);
  ad::Tape tape;
  Tensor C = Tensor::matrix(2, 2, {1, 0, 0, 1}), seq = Tensor::matrix(1, 2, {1, 0});
  const auto out = sce_reproject(tape.leaf(seq), tape.leaf(C));
  EXPECT_NEAR(out.weights.value().data[0], 0.731059, 1e-6);
  EXPECT_NEAR(out.weights.value().data[1], 0.268941, 1e-6);
  EXPECT_NEAR(out.pooled.value().data[0], 0.731059, 1e-6);
  EXPECT_NEAR(out.pooled.value().data[1], 0.268941, 1e-6);
  EXPECT_NEAR(out.reprojected.value().at(0, 0), 0.731059, 1e-6);
  EXPECT_EQ(out.reprojected.value().at(0, 1), 0.0);
}

TEST(SceReproject, IdenticalCodesGiveUniformWeights) {
  gen::Rng rng(3);
  for (std::size_t k : {1u, 3u, 16u}) {
    const auto row = rng.vec(5);
    Tensor C(Shape{k, 5});
    for (std::size_t i = 0; i < k; ++i) std::copy(row.begin(), row.end(), C.row(i).begin());
    Tensor seq = rng.matrix(4, 5);
    ad::Tape tape;
    for (double w : sce_reproject(tape.leaf(seq), tape.leaf(C)).weights.value().data) EXPECT_NEAR(w, 1.0 / k, 1e-12);
  }
}

TEST(SceReproject, WeightsPooledAndSpanProperties) {
  gen::Rng rng(314);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = rng.index(1, 12), m = rng.index(1, 10), d = rng.index(2, 16);
    Tensor C = rng.matrix(k, d, rng.uniform(0.1, 5.0)), seq = rng.matrix(m, d, rng.uniform(0.1, 5.0));
    ad::Tape tape;
    const auto out = sce_reproject(tape.leaf(seq), tape.leaf(C));
    const auto& w = out.weights.value().data;
    double sum = 0.0;
    for (double x : w) {
      EXPECT_GT(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += w[i] * C.at(i, j);
      EXPECT_LT(std::abs(out.pooled.value().data[j] - acc), 1e-12);
    }
    EXPECT_LT(span_residual(C, out.pooled.value().data), 1e-9);
  }
}

TEST(SceReproject, ZeroRowIsAnError) {
  ad::Tape tape;
  Tensor C = Tensor::matrix(2, 2, {1, 0, 0, 1}), seq = Tensor::matrix(2, 2, {1, 0, 0, 0});
  EXPECT_THROW(sce_reproject(tape.leaf(seq), tape.leaf(C)), UsageError);
  Tensor wide(Shape{1, 3}, 1.0);
  EXPECT_THROW(sce_reproject(tape.leaf(wide), tape.leaf(C)), UsageError);
}

TEST(Contrastive, SingleSampleIsExactlyZero) {
  gen::Rng rng(1);
  Tensor b = rng.matrix(1, 6), t = rng.matrix(1, 6);
  ad::Tape tape;
  const auto l = contrastive_loss(tape.leaf(b), tape.leaf(t), 0.07);
  EXPECT_EQ(l.text_to_scene.item(), 0.0);
  EXPECT_EQ(l.scene_to_text.item(), 0.0);
}

TEST(Contrastive, EqualSimilaritiesGiveLogN) {
  for (std::size_t n : {2u, 4u, 8u}) {
    Tensor b(Shape{n, 3}, 1.0), t(Shape{n, 3}, 2.0);
    ad::Tape tape;
    const auto l = contrastive_loss(tape.leaf(b), tape.leaf(t), 0.07);
    EXPECT_NEAR(l.text_to_scene.item(), std::log(static_cast<double>(n)), 1e-9);
    EXPECT_NEAR(l.scene_to_text.item(), std::log(static_cast<double>(n)), 1e-9);
  }
}

TEST(Contrastive, OrthonormalPairsNearZero) {
  const std::size_t n = 4;
  Tensor I(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) I.at(i, i) = 1.0;
  ad::Tape tape;
  const auto l = contrastive_loss(tape.leaf(I), tape.leaf(I), 0.07);
  // Closed form log(1 + (N - 1) exp(-1/tau)), about 1.9e-6.
  const double expect = std::log1p(3.0 * std::exp(-1.0 / 0.07));
  EXPECT_NEAR(l.text_to_scene.item(), expect, 1e-12);
  EXPECT_LT(l.text_to_scene.item(), 1e-5);
}

TEST(Contrastive, MatchesOracleAndExchangeSymmetry) {
  gen::Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.index(1, 9), d = rng.index(2, 10);
    const double tau = rng.uniform(0.05, 2.0);
    Tensor b = rng.matrix(n, d), t = rng.matrix(n, d);
    ad::Tape tape;
    const auto l = contrastive_loss(tape.leaf(b), tape.leaf(t), tau);
    const auto s = contrastive_loss(tape.leaf(t), tape.leaf(b), tau);
    EXPECT_NEAR(l.text_to_scene.item(), infonce_oracle(t, b, tau), 1e-9);
    EXPECT_NEAR(l.scene_to_text.item(), infonce_oracle(b, t, tau), 1e-9);
    EXPECT_EQ(l.text_to_scene.item(), s.scene_to_text.item());
    EXPECT_EQ(l.scene_to_text.item(), s.text_to_scene.item());
    EXPECT_GE(l.text_to_scene.item(), 0.0);
    EXPECT_GE(l.scene_to_text.item(), 0.0);
  }
}

TEST(Contrastive, Errors) {
  Tensor a(Shape{2, 3}, 1.0), b(Shape{3, 3}, 1.0);
  ad::Tape tape;
  EXPECT_THROW(contrastive_loss(tape.leaf(a), tape.leaf(a), 0.0), UsageError);
  EXPECT_THROW(contrastive_loss(tape.leaf(a), tape.leaf(a), -1.0), UsageError);
  EXPECT_THROW(contrastive_loss(tape.leaf(a), tape.leaf(b), 0.07), UsageError);
}

TEST(TotalLoss, Examples) {
  EXPECT_DOUBLE_EQ(total_loss(2.0, 4.0, 0.0), 2.0);
  EXPECT_NEAR(total_loss(2.0, 4.0, 0.15), 2.6, 1e-15);
  EXPECT_EQ(total_loss(0.0, 0.0, 1.0), 0.0);
  EXPECT_THROW(total_loss(1.0, 1.0, -0.1), UsageError);
  ad::Tape tape;
  Tensor a = Tensor::scalar(2.0), b = Tensor::scalar(4.0);
  EXPECT_NEAR(total_loss(tape.leaf(a), tape.leaf(b), 0.15).item(), 2.6, 1e-15);
}

TEST(CaptionTokens, ShiftedByOne) {
  auto v = Vocabulary::from_user_tokens(std::vector<std::string>{"one", "car"});
  const auto ct = caption_tokens(v, "one car", 32);
  EXPECT_EQ(ct.prefix, (std::vector<std::size_t>{Vocabulary::kBos, 4, 5}));
  EXPECT_EQ(ct.targets, (std::vector<std::size_t>{4, 5, Vocabulary::kEos}));
  const auto cut = caption_tokens(v, "one car one car", 2);
  EXPECT_EQ(cut.prefix.size(), 2u);
  EXPECT_EQ(cut.targets, (std::vector<std::size_t>{4, 5}));
}

TEST(CaptionLogits, CausalMask) {
  const auto corpus = small_corpus(3, 2, 0.05);
  auto m = tiny_model(corpus);
  gen::Rng rng(9);
  Tensor bprime = rng.matrix(m.dims.k, m.dims.d_c);
  std::vector<std::size_t> prefix{Vocabulary::kBos, 4, 5, 6, 7, 8};
  ad::Tape t1;
  auto b1 = bind_frozen(t1, m);
  const auto base = caption_logits(b1.decoder, t1.view(bprime), prefix).value();
  prefix[3] = 9;
  ad::Tape t2;
  auto b2 = bind_frozen(t2, m);
  const auto pert = caption_logits(b2.decoder, t2.view(bprime), prefix).value();
  const std::size_t V = base.cols();
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t j = 0; j < V; ++j) EXPECT_EQ(base.at(p, j), pert.at(p, j));
  }
  bool changed = false;
  for (std::size_t j = 0; j < V; ++j) changed |= base.at(3, j) != pert.at(3, j);
  EXPECT_TRUE(changed);
}

TEST(CaptionLogits, ZeroWeightsGiveLogV) {
  const auto corpus = small_corpus(3, 2, 0.05);
  auto m = tiny_model(corpus);
  auto& d = m.sce.decoder;
  for (auto* t : {&d.token_embedding, &d.position_embedding, &d.self_query, &d.self_key, &d.self_value, &d.self_output,
                  &d.cross_query, &d.cross_key, &d.cross_value, &d.cross_output, &d.ffn_in, &d.ffn_out, &d.output}) {
    std::fill(t->data.begin(), t->data.end(), 0.0);
  }
  ad::Tape tape;
  const auto bm = bind_frozen(tape, m);
  const auto ct = caption_tokens(m.vocab, corpus.texts[0].caption, m.dims.max_caption_len);
  const auto so = forward_scene(bm, corpus.scenes[0].bev);
  const double ce = cg_loss(caption_logits(bm.decoder, so.reprojected, ct.prefix), ct.targets).item();
  EXPECT_NEAR(ce, std::log(static_cast<double>(m.vocab.size())), 1e-12);
}

TEST(CaptionLogits, Errors) {
  const auto corpus = small_corpus(2, 2, 0.05);
  auto m = tiny_model(corpus);
  ad::Tape tape;
  const auto bm = bind_frozen(tape, m);
  Tensor bprime(Shape{m.dims.k, m.dims.d_c}, 1.0);
  const std::vector<std::size_t> no_bos{4, 5};
  EXPECT_THROW(caption_logits(bm.decoder, tape.view(bprime), no_bos), UsageError);
  const std::vector<std::size_t> unknown{Vocabulary::kBos, 100000};
  EXPECT_THROW(caption_logits(bm.decoder, tape.view(bprime), unknown), UsageError);
  const std::vector<std::size_t> too_long(m.dims.max_caption_len + 1, Vocabulary::kBos);
  EXPECT_THROW(caption_logits(bm.decoder, tape.view(bprime), too_long), UsageError);
}

TEST(CaptionLogits, CgGradientReachesCodebookThroughCrossAttention) {
  const auto corpus = small_corpus(2, 2, 0.05);
  auto m = tiny_model(corpus, 4);
  const auto ct = caption_tokens(m.vocab, corpus.texts[0].caption, m.dims.max_caption_len);
  auto f = [&](ad::Tape& t) {
    auto bm = bind(t, m);
    return cg_loss(caption_logits(bm.decoder, forward_scene(bm, corpus.scenes[0].bev).reprojected, ct.prefix), ct.targets);
  };
  Tensor* ps[] = {&m.sce.shared_embeddings, &m.sce.decoder.cross_key, &m.sce.decoder.cross_value};
  GradCheckOptions o;
  o.epsilon = 1e-5;
  EXPECT_LT(grad_check(f, ps, o).max_relative_error, 1e-4);

  m.sce.shared_embeddings.requires_grad = true;
  m.sce.shared_embeddings.zero_grad();
  ad::Tape tape;
  tape.backward(f(tape));
  double norm = 0.0;
  for (double g : m.sce.shared_embeddings.grad) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(BatchLoss, CombinedGradientEveryParameterGroup) {
  const auto corpus = small_corpus(2, 2, 0.05, 1);
  auto m = tiny_model(corpus, 2);
  const std::size_t batch[] = {0, 2};
  GradCheckOptions o;
  o.epsilon = 1e-4;
  const auto r = check_batch_gradients(m, corpus, batch, o);
  const auto names = m.parameters();
  ASSERT_EQ(r.per_param.size(), names.size());
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_LT(r.per_param[i], 1e-4) << names[i].first;
}

TEST(Embed, TextAndScenePooledInSharedSpan) {
  const auto corpus = small_corpus(3, 2, 0.05);
  const auto m = tiny_model(corpus);
  const auto t = embed_text(m, corpus.texts[0].caption);
  const auto s = embed_scene(m, corpus.scenes[0].bev);
  EXPECT_EQ(t.size(), m.dims.d_c);
  EXPECT_LT(span_residual(m.sce.shared_embeddings, t), 1e-9);
  EXPECT_LT(span_residual(m.sce.shared_embeddings, s), 1e-9);
  EXPECT_THROW(embed_text(m, "   "), UsageError);
  EXPECT_FALSE(m.sce.shared_embeddings.has_grad());
}

TEST(MakeBatches, CaptionUniqueAndNoRepeats) {
  const auto corpus = small_corpus(6, 5, 0.05);
  const auto idx = corpus.indices(Split::Train);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batches = make_batches(corpus, idx, 4, rng);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
      EXPECT_GE(b.size(), 2u);
      EXPECT_LE(b.size(), 4u);
      std::set<std::string> caps;
      for (auto i : b) {
        EXPECT_TRUE(caps.insert(corpus.texts[i].caption).second);
        EXPECT_TRUE(seen.insert(i).second);
      }
    }
  }
}

TEST(TrainAlign, NoiselessLossFallsNinetyPercent) {
  const auto corpus = small_corpus(8, 4, 0.0);
  AlignTrainConfig c;
  c.epochs = 200;
  c.batch_size = 8;
  c.use_kgp = false;
  const auto r = train_align(corpus, {}, c);
  ASSERT_EQ(r.log.size(), 200u);
  EXPECT_LE(r.log.back().total, 0.1 * r.log.front().total);
}

TEST(TrainAlign, DeterministicAndLambdaMatters) {
  const auto corpus = small_corpus(4, 4, 0.05);
  AlignTrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.dims = tiny_dims();
  const auto a = train_align(corpus, {}, c), b = train_align(corpus, {}, c);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].sce, b.log[i].sce);
  }
  EXPECT_EQ(a.model.sce.shared_embeddings.data, b.model.sce.shared_embeddings.data);
  auto c0 = c;
  c0.lambda = 0.0;
  const auto z = train_align(corpus, {}, c0);
  EXPECT_NE(z.model.sce.shared_embeddings.data, a.model.sce.shared_embeddings.data);
  for (const auto& e : z.log) EXPECT_EQ(e.total, e.sce);
}

TEST(TrainAlign, Errors) {
  const auto corpus = small_corpus(4, 4, 0.05);
  AlignTrainConfig c;
  c.dims = tiny_dims();
  c.batch_size = 1;
  EXPECT_THROW(train_align(corpus, {}, c), UsageError);
  c.batch_size = 1000;
  EXPECT_THROW(train_align(corpus, {}, c), UsageError);
}

TEST(AlignCheckpoint, RoundTripReproducesEmbeddings) {
  SynthSpec s;
  s.num_classes = 3;
  s.samples_per_class = 2;
  const auto sc = synth_corpus(s);
  const auto g = load_graph(sc.graph);
  KgeTrainConfig kc;
  kc.iterations = 50;
  kc.dim = 4;
  const auto lex = EntityLexicon::from_model(g.graph, train_kge(g.graph, kc).model, sc.synonyms);
  AlignTrainConfig c;
  c.epochs = 2;
  c.batch_size = 3;
  c.dims = tiny_dims();
  const auto r = train_align(sc.corpus, lex, c);
  EXPECT_TRUE(r.model.use_kgp);
  const auto dir = (std::filesystem::temp_directory_path() / "textscene_unit" / "align").string();
  save_align(dir, r.model);
  const auto back = load_align(dir);
  EXPECT_TRUE(back.use_kgp);
  EXPECT_EQ(back.lexicon.names(), r.model.lexicon.names());
  for (const auto& t : sc.corpus.texts) EXPECT_EQ(embed_text(back, t.caption), embed_text(r.model, t.caption));
  EXPECT_EQ(embed_scene(back, sc.corpus.scenes[0].bev), embed_scene(r.model, sc.corpus.scenes[0].bev));
  EXPECT_THROW(load_align(dir + "/missing"), DataError);
}
