#include "textscene/captions.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <unordered_set>

#include "textscene/error.hpp"

namespace textscene {

std::string level_name(CaptionLevel level) { return level == CaptionLevel::Easy ? "easy" : "hard"; }

CaptionLevel parse_level(const std::string& name) {
  if (name == "easy") return CaptionLevel::Easy;
  if (name == "hard") return CaptionLevel::Hard;
  throw UsageError("unknown caption level '" + name + "' (expected easy or hard)");
}

std::string quantity_descriptor(std::size_t count) {
  if (count == 0) throw UsageError("quantity_descriptor: count must be at least 1");
  if (count == 1) return "one";
  if (count < kManyThreshold) return "several";
  return "many";
}

namespace {

const std::map<std::string, std::string>& irregular_plurals() {
  static const std::map<std::string, std::string> table = {
      {"bus", "buses"},     {"person", "people"}, {"child", "children"},
      {"man", "men"},       {"woman", "women"},   {"box", "boxes"},
      {"bench", "benches"},
  };
  return table;
}

}  // namespace

std::string pluralize(const std::string& category, std::size_t count) {
  if (count <= 1) return category;
  const auto cut = category.find_last_of(' ');
  const std::string head = cut == std::string::npos ? "" : category.substr(0, cut + 1);
  const std::string last = cut == std::string::npos ? category : category.substr(cut + 1);
  const auto& table = irregular_plurals();
  if (auto it = table.find(last); it != table.end()) return head + it->second;
  return category + "s";
}

std::string build_easy_caption(const SceneAnnotation& ann) {
  std::string out = ann.base_caption;
  for (const auto& oc : ann.object_counts) {
    if (oc.category.empty()) throw UsageError("annotation " + ann.sample_id + ": empty category");
    out += ", ";
    out += quantity_descriptor(oc.count);
    out += ' ';
    out += pluralize(oc.category, oc.count);
  }
  return out;
}

std::string build_hard_caption(const SceneAnnotation& ann) {
  std::string out = build_easy_caption(ann);
  for (const auto& qa : ann.qa_pairs) {
    out += ", ";
    out += qa.question;
    out += ' ';
    out += qa.answer;
  }
  return out;
}

std::string build_caption(const SceneAnnotation& ann, CaptionLevel level) {
  return level == CaptionLevel::Easy ? build_easy_caption(ann) : build_hard_caption(ann);
}

CaptionCorpus build_corpus_captions(std::span<const SceneAnnotation> annotations, CaptionLevel level) {
  CaptionCorpus out;
  std::unordered_set<std::string> ids, distinct;
  for (const auto& a : annotations) {
    if (!ids.insert(a.sample_id).second) {
      throw DataError("duplicate annotation sample_id '" + a.sample_id + "'");
    }
    auto caption = build_caption(a, level);
    distinct.insert(caption);
    out.captions.push_back({a.sample_id, std::move(caption)});
  }
  out.distinct = distinct.size();
  return out;
}

std::vector<SceneAnnotation> parse_annotations(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("annotations: expected a JSON array");
  std::vector<SceneAnnotation> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    try {
      SceneAnnotation a;
      a.sample_id = e.at("sample_id").get<std::string>();
      a.base_caption = e.at("base_caption").get<std::string>();
      for (const auto& oc : e.value("object_counts", nlohmann::json::array())) {
        ObjectCount c;
        c.category = oc.at("category").get<std::string>();
        const auto n = oc.at("count").get<long long>();
        if (n < 1) throw DataError(where + ": object count must be >= 1");
        if (c.category.empty()) throw DataError(where + ": empty category");
        c.count = static_cast<std::size_t>(n);
        a.object_counts.push_back(std::move(c));
      }
      for (const auto& qa : e.value("qa_pairs", nlohmann::json::array())) {
        a.qa_pairs.push_back({qa.at("question").get<std::string>(), qa.at("answer").get<std::string>()});
      }
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
  }
  return out;
}

std::vector<SceneAnnotation> read_annotation_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  try {
    return parse_annotations(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_caption_jsonl(std::ostream& out, std::span<const CaptionRecord> captions, CaptionLevel level) {
  const auto lv = level_name(level);
  for (const auto& c : captions) {
    nlohmann::ordered_json line;
    line["sample_id"] = c.sample_id;
    line["caption"] = c.caption;
    line["level"] = lv;
    out << line.dump() << '\n';
  }
}

}  // namespace textscene
