#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "generators.hpp"
#include "textscene/error.hpp"
#include "textscene/gradcheck.hpp"
#include "textscene/text.hpp"

using namespace textscene;
namespace ad = textscene::ad;

namespace {

EntityLexicon fixture_lexicon() {
  std::vector<std::string> names{"bus", "car", "traffic light", "traffic", "construction zone"};
  Tensor v(Shape{names.size(), 3});
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<double>(i);
  return EntityLexicon(names, v, {{"automobile", "car"}, {"buses", "bus"}});
}

std::vector<std::size_t> positions(const std::vector<EntityMatch>& ms) {
  std::vector<std::size_t> p;
  for (const auto& m : ms) p.push_back(m.token_position);
  return p;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Many cars, several buses."),
            (std::vector<std::string>{"many", "cars", ",", "several", "buses", "."}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Ped with dog"), (std::vector<std::string>{"ped", "with", "dog"}));
  EXPECT_EQ(tokenize("how many cars ahead? three"),
            (std::vector<std::string>{"how", "many", "cars", "ahead", "?", "three"}));
  EXPECT_EQ(normalize_phrase("  Traffic   LIGHT "), "traffic light");
}

TEST(Vocabulary, ReservedIdsAndUnknown) {
  Vocabulary v;
  EXPECT_EQ(v.size(), Vocabulary::kReserved);
  EXPECT_EQ(v.id("<pad>"), Vocabulary::kPad);
  EXPECT_EQ(v.add("car"), 4u);
  EXPECT_EQ(v.add("car"), 4u);
  EXPECT_EQ(v.id("truck"), Vocabulary::kUnk);
  EXPECT_EQ(v.token(4), "car");
}

TEST(Vocabulary, FileRoundTripIsBijective) {
  const std::string caps[] = {"one car, several trucks", "many cars near bus"};
  const auto v = build_vocabulary(caps);
  const auto path = (std::filesystem::temp_directory_path() / "textscene_vocab.txt").string();
  v.save(path);
  const auto back = Vocabulary::load(path);
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(back.token(i), v.token(i));
    EXPECT_EQ(back.id(v.token(i)), i);
  }
  EXPECT_EQ(back.hash(), v.hash());
  const std::string dup[] = {"a", "a"};
  EXPECT_THROW(Vocabulary::from_user_tokens(dup), DataError);
}

TEST(LinkEntities, OccurrenceOrder) {
  const auto lex = fixture_lexicon();
  const auto toks = tokenize("one bus near car");
  const auto ms = link_entities(toks, lex);
  ASSERT_EQ(ms.size(), 2u);
  EXPECT_EQ(ms[0].entity_name, "bus");
  EXPECT_EQ(ms[1].entity_name, "car");
  EXPECT_EQ(positions(ms), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(ms[1].kge_vector, (std::vector<double>{3, 4, 5}));
}

TEST(LinkEntities, NoKeywords) {
  const auto toks = tokenize("drive in heavy rain");
  EXPECT_TRUE(link_entities(toks, fixture_lexicon()).empty());
  EXPECT_TRUE(link_entities(toks, EntityLexicon{}).empty());
}

TEST(LinkEntities, LongestMatchConsumesBothTokens) {
  const auto toks = tokenize("wait at traffic light near automobile");
  const auto ms = link_entities(toks, fixture_lexicon());
  ASSERT_EQ(ms.size(), 2u);
  EXPECT_EQ(ms[0].entity_name, "traffic light");
  EXPECT_EQ(ms[0].token_position, 2u);
  EXPECT_EQ(ms[0].token_count, 2u);
  EXPECT_EQ(ms[1].entity_name, "car");  // through the synonym table
}

TEST(LinkEntities, StrictlyIncreasingPositionsProperty) {
  const auto lex = fixture_lexicon();
  const std::vector<std::string> pool{"bus", "car", "traffic", "light", "near", "buses", "automobile",
                                      "construction", "zone", ","};
  gen::Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::string> toks(rng.index(0, 12));
    for (auto& t : toks) t = pool[rng.index(0, pool.size() - 1)];
    const auto ms = link_entities(toks, lex);
    for (std::size_t j = 1; j < ms.size(); ++j) {
      EXPECT_GE(ms[j].token_position, ms[j - 1].token_position + ms[j - 1].token_count);
    }
  }
}

TEST(FuseKgp, IdentityWithoutMatches) {
  gen::Rng rng(1);
  ad::Tape tape;
  Tensor e = rng.matrix(4, 3), p = rng.matrix(3, 3);
  auto ve = tape.leaf(e);
  auto out = fuse_kgp(ve, {}, tape.leaf(p));
  EXPECT_EQ(out.index(), ve.index());
  EXPECT_EQ(out.value().data, e.data);
}

TEST(FuseKgp, SingleInsertion) {
  gen::Rng rng(2);
  ad::Tape tape;
  Tensor e = rng.matrix(4, 3), p = rng.matrix(2, 3);
  const EntityMatch m{1, 1, "x", {0.5, -1.0}};
  const auto out = fuse_kgp(tape.leaf(e), std::span<const EntityMatch>(&m, 1), tape.leaf(p)).value();
  ASSERT_EQ(out.rows(), 5u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(out.at(0, c), e.at(0, c));
    EXPECT_EQ(out.at(1, c), e.at(1, c));
    EXPECT_DOUBLE_EQ(out.at(2, c), 0.5 * p.at(0, c) - 1.0 * p.at(1, c));
    EXPECT_EQ(out.at(3, c), e.at(2, c));
    EXPECT_EQ(out.at(4, c), e.at(3, c));
  }
}

// Brute-force index bookkeeping: walk the tokens, emit each row, and emit the
// projected vector after the last token of every match.
TEST(FuseKgp, MatchesBruteForceBookkeeping) {
  gen::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = rng.index(1, 9), dk = 2, d = 3;
    Tensor e = rng.matrix(L, d), p = rng.matrix(dk, d);
    std::vector<EntityMatch> ms;
    for (std::size_t pos = 0; pos < L;) {
      const std::size_t len = rng.index(1, std::min<std::size_t>(3, L - pos));
      if (rng.coin()) ms.push_back({pos, len, "m", rng.vec(dk)});
      pos += len;
    }
    ad::Tape tape;
    const auto out = fuse_kgp(tape.leaf(e), ms, tape.leaf(p)).value();
    ASSERT_EQ(out.rows(), L + ms.size());

    std::vector<std::vector<double>> expect;
    std::size_t mi = 0;
    for (std::size_t i = 0; i < L; ++i) {
      expect.emplace_back(e.row(i).begin(), e.row(i).end());
      if (mi < ms.size() && ms[mi].token_position + ms[mi].token_count - 1 == i) {
        std::vector<double> row(d, 0.0);
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t k = 0; k < dk; ++k) row[c] += ms[mi].kge_vector[k] * p.at(k, c);
        }
        expect.push_back(row);
        ++mi;
      }
    }
    for (std::size_t r = 0; r < expect.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out.at(r, c), expect[r][c], 1e-12);
    }
  }
}

TEST(FuseKgp, Errors) {
  ad::Tape tape;
  Tensor e(Shape{3, 2}, 1.0), p(Shape{2, 2}, 1.0);
  const EntityMatch oob{3, 1, "x", {1, 1}};
  EXPECT_THROW(fuse_kgp(tape.leaf(e), std::span<const EntityMatch>(&oob, 1), tape.leaf(p)), UsageError);
  const EntityMatch wrong_dim{0, 1, "x", {1, 1, 1}};
  EXPECT_THROW(fuse_kgp(tape.leaf(e), std::span<const EntityMatch>(&wrong_dim, 1), tape.leaf(p)), UsageError);
  const EntityMatch overlap[] = {{0, 2, "x", {1, 1}}, {1, 1, "y", {1, 1}}};
  EXPECT_THROW(fuse_kgp(tape.leaf(e), overlap, tape.leaf(p)), UsageError);
}

TEST(EncodeText, IdentityAndDuplicates) {
  ad::Tape tape;
  Tensor one = Tensor::matrix(1, 3, {1, -2, 3});
  Tensor I = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(encode_text(tape.leaf(one), tape.leaf(I)).pooled.value().data, one.data);
  Tensor two = Tensor::matrix(2, 3, {1, -2, 3, 1, -2, 3});
  EXPECT_EQ(encode_text(tape.leaf(two), tape.leaf(I)).pooled.value().data, one.data);
}

TEST(EncodeText, PermutationEquivariance) {
  gen::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = rng.index(2, 7);
    Tensor x = rng.matrix(L, 4), w = rng.matrix(4, 5);
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Tensor px(Shape{L, 4});
    for (std::size_t i = 0; i < L; ++i) std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
    ad::Tape tape;
    const auto a = encode_text(tape.leaf(x), tape.leaf(w));
    const auto b = encode_text(tape.leaf(px), tape.leaf(w));
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(b.sequence.value().at(i, c), a.sequence.value().at(perm[i], c), 1e-12);
    }
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(a.pooled.value().data[c], b.pooled.value().data[c], 1e-12);
  }
}

TEST(EncodeText, GradientThroughTokenEmbeddingAndFusion) {
  gen::Rng rng(7);
  Tensor table = rng.matrix(6, 4), proj = rng.matrix(3, 4), out = rng.matrix(4, 5), target = rng.matrix(1, 5);
  const std::size_t ids[] = {4, 1, 5, 1};
  const std::vector<EntityMatch> ms{{1, 2, "a", rng.vec(3)}, {3, 1, "b", rng.vec(3)}};
  Tensor* ps[] = {&table, &proj, &out};
  const auto r = grad_check(
      [&](ad::Tape& t) {
        auto fused = fuse_kgp(ad::gather_rows(t.leaf(table), ids), ms, t.leaf(proj));
        auto pooled = encode_text(fused, t.leaf(out)).pooled;
        return ad::cosine_sim(pooled, t.view(target));
      },
      ps);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(EncodeText, EmptyIsAnError) {
  ad::Tape tape;
  Tensor w(Shape{2, 2}, 1.0);
  EXPECT_THROW(encode_text(ad::Var{}, tape.leaf(w)), UsageError);
}
