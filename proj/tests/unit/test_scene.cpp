#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "generators.hpp"
#include "textscene/container.hpp"
#include "textscene/error.hpp"
#include "textscene/scene.hpp"

using namespace textscene;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "textscene_unit" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(LoadBev, ThreeSamples) {
  gen::Rng rng(1);
  Container c;
  for (const char* id : {"x", "y", "z"}) c.entries.push_back({id, rng.matrix(10, 16)});
  const auto d = tmp_dir("bev3");
  write_container(d + "/f.tsr", d + "/f.json", c);
  const auto recs = load_bev_features(d + "/f.tsr", d + "/f.json");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1].sample_id, "y");
  EXPECT_EQ(recs[0].bev.rows(), 10u);
  EXPECT_EQ(recs[0].bev.cols(), 16u);
}

TEST(LoadBev, NanNamesTheSample) {
  Container c;
  c.entries.push_back({"good", Tensor(Shape{2, 2}, 1.0)});
  Tensor bad(Shape{2, 2}, 1.0);
  bad.data[3] = std::numeric_limits<double>::quiet_NaN();
  c.entries.push_back({"broken_sample", bad});
  const auto d = tmp_dir("bevnan");
  write_container(d + "/f.tsr", d + "/f.json", c);
  try {
    load_bev_features(d + "/f.tsr", d + "/f.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("broken_sample"), std::string::npos);
  }
}

TEST(LoadBev, EmptyContainerIsValid) {
  const auto d = tmp_dir("bevempty");
  write_container(d + "/f.tsr", d + "/f.json", Container{});
  EXPECT_TRUE(load_bev_features(d + "/f.tsr", d + "/f.json").empty());
}

TEST(LoadBev, ShapeDisagreementAndMalformed) {
  Container c;
  c.entries.push_back({"a", Tensor(Shape{4, 3}, 1.0)});
  c.entries.push_back({"b", Tensor(Shape{5, 3}, 1.0)});
  const auto d = tmp_dir("bevshape");
  write_container(d + "/f.tsr", d + "/f.json", c);
  EXPECT_THROW(load_bev_features(d + "/f.tsr", d + "/f.json"), DataError);
  std::ofstream(d + "/g.json") << "{not json";
  EXPECT_THROW(load_bev_features(d + "/f.tsr", d + "/g.json"), DataError);
}

TEST(SqueezeToMatrix, SingletonAxesDropped) {
  EXPECT_EQ(squeeze_to_matrix(Tensor(Shape{25, 1, 8})).shape, (Shape{25, 8}));
  EXPECT_EQ(squeeze_to_matrix(Tensor(Shape{8})).shape, (Shape{1, 8}));
  EXPECT_EQ(squeeze_to_matrix(Tensor(Shape{1, 1})).shape, (Shape{1, 1}));
  EXPECT_THROW(squeeze_to_matrix(Tensor(Shape{2, 3, 4})), DataError);
}

TEST(SynthCorpus, NoiselessClassesAreIdentical) {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.num_classes = 4;
  s.samples_per_class = 3;
  const auto sc = synth_corpus(s);
  for (std::size_t i = 0; i < sc.labels.size(); ++i) {
    for (std::size_t j = 0; j < sc.labels.size(); ++j) {
      if (sc.labels[i] == sc.labels[j]) {
        EXPECT_EQ(sc.corpus.scenes[i].bev.data, sc.corpus.scenes[j].bev.data);
        EXPECT_EQ(sc.corpus.texts[i].caption, sc.corpus.texts[j].caption);
      }
    }
  }
}

TEST(SynthCorpus, SeededRerunIsByteIdentical) {
  SynthSpec s;
  s.seed = 42;
  const auto a = tmp_dir("synA"), b = tmp_dir("synB");
  save_corpus(a, synth_corpus(s).corpus);
  save_corpus(b, synth_corpus(s).corpus);
  for (const char* f : {"/scenes.tsr", "/scenes.json", "/texts.jsonl"}) EXPECT_EQ(slurp(a + f), slurp(b + f)) << f;
  s.seed = 43;
  const auto c = tmp_dir("synC");
  save_corpus(c, synth_corpus(s).corpus);
  EXPECT_NE(slurp(a + "/scenes.tsr"), slurp(c + "/scenes.tsr"));
}

TEST(SynthCorpus, CaptionsPairwiseDistinctAcrossClasses) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec s;
    s.num_classes = 32;
    s.samples_per_class = 2;
    s.seed = seed;
    const auto sc = synth_corpus(s);
    std::vector<std::string> per_class(s.num_classes);
    for (std::size_t i = 0; i < sc.labels.size(); ++i) per_class[sc.labels[i]] = sc.corpus.texts[i].caption;
    for (std::size_t i = 0; i < per_class.size(); ++i) {
      for (std::size_t j = i + 1; j < per_class.size(); ++j) EXPECT_NE(per_class[i], per_class[j]);
    }
  }
}

TEST(SynthCorpus, BijectionAndDisjointSplits) {
  SynthSpec s;
  const auto sc = synth_corpus(s);
  EXPECT_NO_THROW(sc.corpus.validate());
  const auto tr = sc.corpus.indices(Split::Train), va = sc.corpus.indices(Split::Validation);
  EXPECT_EQ(tr.size() + va.size(), sc.corpus.texts.size());
  EXPECT_EQ(va.size(), s.num_classes * 2);  // round(0.25 * 8) per class
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (auto i : va) EXPECT_FALSE(all.contains(i));
}

// Nearest class mean on raw flattened features.
TEST(SynthCorpus, NoiselessNearestPrototypeIsPerfect) {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.num_classes = 10;
  s.samples_per_class = 3;
  const auto sc = synth_corpus(s);
  const std::size_t D = sc.corpus.scenes[0].bev.size();
  std::vector<std::vector<double>> mean(s.num_classes, std::vector<double>(D, 0.0));
  for (std::size_t i = 0; i < sc.labels.size(); ++i) {
    for (std::size_t k = 0; k < D; ++k) mean[sc.labels[i]][k] += sc.corpus.scenes[i].bev.data[k] / static_cast<double>(s.samples_per_class);
  }
  for (std::size_t i = 0; i < sc.labels.size(); ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.num_classes; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < D; ++k) d += std::pow(sc.corpus.scenes[i].bev.data[k] - mean[c][k], 2);
      if (d < bd) bd = d, best = c;
    }
    EXPECT_EQ(best, sc.labels[i]);
  }
}

TEST(SynthCorpus, CompanionGraphCoversCaptionKeywords) {
  SynthSpec s;
  const auto sc = synth_corpus(s);
  std::set<std::string> entities;
  for (const auto& t : sc.graph) {
    entities.insert(t.head);
    entities.insert(t.tail);
  }
  EXPECT_TRUE(entities.contains("scene"));
  EXPECT_TRUE(entities.contains("car"));
  EXPECT_TRUE(entities.contains("traffic light"));
  EXPECT_EQ(sc.synonyms.at("cars"), "car");
  EXPECT_EQ(sc.synonyms.at("buses"), "bus");
}

TEST(SynthCorpus, Errors) {
  SynthSpec s;
  s.num_classes = 1;
  EXPECT_THROW(synth_corpus(s), UsageError);
  s.num_classes = 4;
  s.noise_sigma = -1.0;
  EXPECT_THROW(synth_corpus(s), UsageError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  SynthSpec s;
  s.num_classes = 3;
  s.samples_per_class = 4;
  const auto sc = synth_corpus(s);
  const auto d = tmp_dir("corpus");
  save_corpus(d, sc.corpus);
  const auto back = load_corpus(d);
  ASSERT_EQ(back.texts.size(), sc.corpus.texts.size());
  for (std::size_t i = 0; i < back.texts.size(); ++i) {
    EXPECT_EQ(back.texts[i].caption, sc.corpus.texts[i].caption);
    EXPECT_EQ(back.splits[i], sc.corpus.splits[i]);
    EXPECT_EQ(back.scenes[i].bev.data, sc.corpus.scenes[i].bev.data);
  }
}

TEST(Corpus, ValidateRejectsBrokenPairing) {
  PairedCorpus c;
  c.scenes.push_back({"a", Tensor(Shape{1, 2}, 1.0)});
  c.texts.push_back({"b", "x"});
  c.splits.push_back(Split::Train);
  EXPECT_THROW(c.validate(), DataError);
  c.texts[0].sample_id = "a";
  EXPECT_NO_THROW(c.validate());
  c.scenes.push_back({"a", Tensor(Shape{1, 2}, 1.0)});
  EXPECT_THROW(c.validate(), DataError);
}
