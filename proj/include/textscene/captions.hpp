#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace textscene {

struct ObjectCount {
  std::string category;
  std::size_t count = 1;
};

struct QaPair {
  std::string question;
  std::string answer;
};

struct SceneAnnotation {
  std::string sample_id;
  std::string base_caption;
  std::vector<ObjectCount> object_counts;
  std::vector<QaPair> qa_pairs;
};

enum class CaptionLevel { Easy, Hard };
std::string level_name(CaptionLevel level);
CaptionLevel parse_level(const std::string& name);

// Count boundaries of the descriptor vocabulary: 1 -> "one",
// [2, kManyThreshold) -> "several", >= kManyThreshold -> "many".
inline constexpr std::size_t kManyThreshold = 5;

std::string quantity_descriptor(std::size_t count);
// Regular plural appends "s"; a small table covers the exceptions. The last
// word of a multi-word category is the one inflected.
std::string pluralize(const std::string& category, std::size_t count);

std::string build_easy_caption(const SceneAnnotation& ann);
std::string build_hard_caption(const SceneAnnotation& ann);
std::string build_caption(const SceneAnnotation& ann, CaptionLevel level);

struct CaptionRecord {
  std::string sample_id;
  std::string caption;
};

struct CaptionCorpus {
  std::vector<CaptionRecord> captions;
  std::size_t distinct = 0;
};

CaptionCorpus build_corpus_captions(std::span<const SceneAnnotation> annotations, CaptionLevel level);

// JSON array of {"sample_id", "base_caption", "object_counts": [{"category",
// "count"}], "qa_pairs": [{"question", "answer"}]}. qa_pairs is optional.
std::vector<SceneAnnotation> parse_annotations(const nlohmann::json& j);
std::vector<SceneAnnotation> read_annotation_file(const std::string& path);

// One {"sample_id", "caption", "level"} object per line, keys in that order.
void write_caption_jsonl(std::ostream& out, std::span<const CaptionRecord> captions, CaptionLevel level);

}  // namespace textscene
