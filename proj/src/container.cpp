#include "textscene/container.hpp"

#include <fstream>
#include <unordered_set>

#include "textscene/error.hpp"

namespace textscene {

const Tensor* Container::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e.tensor;
  }
  return nullptr;
}

const Tensor& Container::get(const std::string& id) const {
  if (const auto* t = find(id)) return *t;
  throw DataError("container has no tensor named '" + id + "'");
}

void write_container(const std::string& tensor_path, const std::string& sidecar_path,
                     const Container& container) {
  std::ofstream out(tensor_path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + tensor_path);
  Json entries = Json::array();
  std::uint64_t offset = 0;
  for (const auto& e : container.entries) {
    entries.push_back({{"id", e.id}, {"offset", offset}});
    const auto bytes = encode_tsr(e.tensor);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    offset += bytes.size();
  }
  if (!out) throw DataError("write failed: " + tensor_path);
  Json side = {{"format", "TSR1"}, {"entries", entries}, {"meta", container.meta}};
  write_json_file(sidecar_path, side);
}

Container read_container(const std::string& tensor_path, const std::string& sidecar_path) {
  const Json side = read_json_file(sidecar_path);
  if (!side.is_object() || side.value("format", "") != "TSR1" || !side.contains("entries") ||
      !side["entries"].is_array()) {
    throw DataError("malformed container sidecar: " + sidecar_path);
  }
  std::ifstream in(tensor_path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + tensor_path);
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());

  Container c;
  c.meta = side.value("meta", Json::object());
  std::unordered_set<std::string> seen;
  for (const auto& e : side["entries"]) {
    if (!e.contains("id") || !e["id"].is_string() || !e.contains("offset") ||
        !e["offset"].is_number_unsigned()) {
      throw DataError("malformed container entry in " + sidecar_path);
    }
    auto id = e["id"].get<std::string>();
    const auto offset = e["offset"].get<std::uint64_t>();
    if (!seen.insert(id).second) throw DataError("duplicate container id '" + id + "'");
    if (offset >= file_size) {
      throw DataError("container entry '" + id + "' offset past end of " + tensor_path);
    }
    in.clear();
    in.seekg(static_cast<std::streamoff>(offset));
    try {
      c.entries.push_back({std::move(id), read_tsr(in)});
    } catch (const DataError& err) {
      throw DataError("entry '" + e["id"].get<std::string>() + "': " + err.what());
    }
  }
  return c;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace textscene
