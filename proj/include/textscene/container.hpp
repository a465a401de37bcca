#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textscene/tensor.hpp"

namespace textscene {

using Json = nlohmann::ordered_json;

struct NamedTensor {
  std::string id;
  Tensor tensor;
};

// A container is a concatenation of TSR1 tensors plus a JSON sidecar:
//   {"format": "TSR1", "entries": [{"id": ..., "offset": ...}, ...], "meta": {...}}
// Offsets are byte positions into the tensor file.
struct Container {
  std::vector<NamedTensor> entries;
  Json meta = Json::object();

  const Tensor& get(const std::string& id) const;
  const Tensor* find(const std::string& id) const;
};

void write_container(const std::string& tensor_path, const std::string& sidecar_path,
                     const Container& container);
Container read_container(const std::string& tensor_path, const std::string& sidecar_path);

// Reads and parses a JSON file, raising DataError with the path on failure.
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace textscene
