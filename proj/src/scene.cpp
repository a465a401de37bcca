#include "textscene/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "textscene/captions.hpp"
#include "textscene/container.hpp"
#include "textscene/error.hpp"
#include "textscene/tokenize.hpp"

namespace textscene {

std::string split_name(Split s) { return s == Split::Train ? "train" : "validation"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation" || name == "val") return Split::Validation;
  throw DataError("unknown split '" + name + "'");
}

void PairedCorpus::validate() const {
  if (splits.size() != texts.size()) throw DataError("corpus: one split entry per text required");
  std::unordered_map<std::string, std::size_t> scene_ids;
  for (const auto& s : scenes) {
    if (!scene_ids.try_emplace(s.sample_id, 0).second) {
      throw DataError("corpus: duplicate scene id '" + s.sample_id + "'");
    }
  }
  std::unordered_set<std::string> text_ids;
  for (const auto& t : texts) {
    if (!text_ids.insert(t.sample_id).second) throw DataError("corpus: duplicate text id '" + t.sample_id + "'");
    if (!scene_ids.contains(t.sample_id)) throw DataError("corpus: text '" + t.sample_id + "' has no scene");
  }
  if (text_ids.size() != scene_ids.size()) throw DataError("corpus: some scenes have no caption");
}

const SceneRecord& PairedCorpus::scene_for(const std::string& sample_id) const {
  for (const auto& s : scenes) {
    if (s.sample_id == sample_id) return s;
  }
  throw DataError("corpus: no scene '" + sample_id + "'");
}

std::vector<std::size_t> PairedCorpus::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

std::size_t PairedCorpus::bev_dim() const { return scenes.empty() ? 0 : scenes.front().bev.cols(); }

Tensor squeeze_to_matrix(const Tensor& t) {
  Shape dims;
  for (auto d : t.shape) {
    if (d != 1) dims.push_back(d);
  }
  if (dims.size() > 2) {
    throw DataError("BEV feature of shape " + shape_string(t.shape) + " is not a sequence");
  }
  if (dims.empty()) dims = {1, 1};
  if (dims.size() == 1) dims.insert(dims.begin(), 1);
  return Tensor(std::move(dims), t.data);
}

std::vector<SceneRecord> load_bev_features(const std::string& tensor_path, const std::string& sidecar_path) {
  const auto c = read_container(tensor_path, sidecar_path);
  std::vector<SceneRecord> out;
  for (const auto& e : c.entries) {
    SceneRecord r{e.id, squeeze_to_matrix(e.tensor)};
    if (!r.bev.all_finite()) throw DataError("BEV feature of sample '" + e.id + "' contains NaN or Inf");
    if (!out.empty() && r.bev.shape != out.front().bev.shape) {
      throw DataError("BEV feature of sample '" + e.id + "' has shape " + shape_string(r.bev.shape) +
                      ", expected " + shape_string(out.front().bev.shape));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void save_bev_features(const std::string& tensor_path, const std::string& sidecar_path,
                       const std::vector<SceneRecord>& scenes) {
  Container c;
  for (const auto& s : scenes) c.entries.push_back({s.sample_id, s.bev});
  write_container(tensor_path, sidecar_path, c);
}

void save_corpus(const std::string& dir, const PairedCorpus& corpus) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  save_bev_features(dir + "/scenes.tsr", dir + "/scenes.json", corpus.scenes);
  std::ofstream out(dir + "/texts.jsonl");
  if (!out) throw DataError("cannot open for writing: " + dir + "/texts.jsonl");
  for (std::size_t i = 0; i < corpus.texts.size(); ++i) {
    Json line;
    line["sample_id"] = corpus.texts[i].sample_id;
    line["caption"] = corpus.texts[i].caption;
    line["split"] = split_name(corpus.splits[i]);
    out << line.dump() << '\n';
  }
}

PairedCorpus load_corpus(const std::string& dir) {
  PairedCorpus c;
  c.scenes = load_bev_features(dir + "/scenes.tsr", dir + "/scenes.json");
  const std::string path = dir + "/texts.jsonl";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = Json::parse(line);
      c.texts.push_back({j.at("sample_id").get<std::string>(), j.at("caption").get<std::string>()});
      c.splits.push_back(parse_split(j.value("split", "train")));
    } catch (const Json::exception& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

namespace {

struct Category {
  const char* name;
  const char* kind;
};

constexpr Category kCategories[] = {
    {"car", "vehicle"},          {"truck", "vehicle"},        {"bus", "vehicle"},
    {"trailer", "vehicle"},      {"construction vehicle", "vehicle"},
    {"motorcycle", "two wheeler"}, {"bicycle", "two wheeler"}, {"pedestrian", "road user"},
    {"traffic cone", "obstacle"}, {"barrier", "obstacle"},
};

struct Base {
  const char* caption;
  const char* keyword;
  const char* kind;
};

constexpr Base kBases[] = {
    {"arrive at intersection", "intersection", "road structure"},
    {"wait at traffic light", "traffic light", "traffic control"},
    {"turn left at junction", "junction", "road structure"},
    {"drive along highway", "highway", "road structure"},
    {"park near building", "building", "landmark"},
    {"pass construction zone", "construction zone", "road structure"},
    {"stop at crosswalk", "crosswalk", "traffic control"},
    {"drive through parking lot", "parking lot", "road structure"},
    {"drive in heavy rain", "rain", "weather"},
    {"cross narrow bridge", "bridge", "road structure"},
};

constexpr std::pair<const char*, const char*> kAliases[] = {
    {"automobile", "car"}, {"ped", "pedestrian"}, {"peds", "pedestrian"},
    {"lorry", "truck"},    {"bike", "bicycle"},   {"cone", "traffic cone"},
};

}  // namespace

SynthCorpus synth_corpus(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw UsageError("synth_corpus: need at least two classes");
  if (spec.samples_per_class == 0 || spec.seq_len == 0 || spec.bev_dim == 0) {
    throw UsageError("synth_corpus: samples_per_class, seq_len and bev_dim must be positive");
  }
  if (!(spec.noise_sigma >= 0.0)) throw UsageError("synth_corpus: noise_sigma must be non-negative");
  if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0)) {
    throw UsageError("synth_corpus: validation_fraction must lie in [0, 1)");
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SynthCorpus out;

  // Captions: base phrase plus 2-3 counted categories, distinct per class.
  const std::size_t n_cat = std::size(kCategories), n_base = std::size(kBases);
  std::set<std::string> used;
  std::vector<SceneAnnotation> anns;
  std::vector<std::size_t> class_base;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 10000) throw UsageError("synth_corpus: cannot generate enough distinct captions");
      SceneAnnotation a;
      const std::size_t b = std::uniform_int_distribution<std::size_t>(0, n_base - 1)(rng);
      a.base_caption = kBases[b].caption;
      std::vector<std::size_t> cats(n_cat);
      for (std::size_t i = 0; i < n_cat; ++i) cats[i] = i;
      std::shuffle(cats.begin(), cats.end(), rng);
      const std::size_t m = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t count = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        a.object_counts.push_back({kCategories[cats[i]].name, count});
      }
      const auto caption = build_easy_caption(a);
      if (used.insert(caption).second) {
        anns.push_back(std::move(a));
        class_base.push_back(b);
        break;
      }
    }
  }

  const std::size_t n_val = spec.samples_per_class < 2 ? 0
      : std::min(spec.samples_per_class - 1,
                 static_cast<std::size_t>(std::llround(spec.validation_fraction *
                                                       static_cast<double>(spec.samples_per_class))));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    Tensor proto(Shape{spec.seq_len, spec.bev_dim});
    for (auto& v : proto.data) v = gauss(rng);
    const auto caption = build_easy_caption(anns[c]);
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      char id[32];
      std::snprintf(id, sizeof id, "s%05zu", c * spec.samples_per_class + s);
      Tensor bev = proto;
      if (spec.noise_sigma > 0.0) {
        for (auto& v : bev.data) v += spec.noise_sigma * gauss(rng);
      }
      out.corpus.scenes.push_back({id, std::move(bev)});
      out.corpus.texts.push_back({id, caption});
      out.corpus.splits.push_back(s + n_val >= spec.samples_per_class ? Split::Validation : Split::Train);
      out.labels.push_back(c);
    }
  }

  std::set<std::tuple<std::string, std::string, std::string>> seen;
  auto triple = [&](std::string h, std::string r, std::string t) {
    if (seen.emplace(h, r, t).second) out.graph.push_back({std::move(h), std::move(r), std::move(t), 0});
  };
  for (const auto& cat : kCategories) {
    triple("scene", "includes", cat.name);
    triple(cat.name, "is a", cat.kind);
  }
  for (const auto& b : kBases) {
    triple("scene", "located at", b.keyword);
    triple(b.keyword, "is a", b.kind);
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto& oc = anns[c].object_counts;
    for (std::size_t i = 0; i < oc.size(); ++i) {
      triple(kBases[class_base[c]].keyword, "contains", oc[i].category);
      if (i + 1 < oc.size()) triple(oc[i].category, "appears with", oc[i + 1].category);
    }
  }
  for (std::size_t i = 0; i < out.graph.size(); ++i) out.graph[i].line = i + 1;

  for (const auto& cat : kCategories) {
    const auto plural = pluralize(cat.name, 2);
    out.synonyms[normalize_phrase(plural)] = cat.name;
  }
  for (const auto& [alias, name] : kAliases) out.synonyms[alias] = name;
  return out;
}

}  // namespace textscene
