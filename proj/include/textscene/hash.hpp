#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace textscene {

// 64-bit FNV-1a. Used for content fingerprints in manifests, not security.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view s);
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_string(std::string_view s);
// Raises DataError if the file cannot be read.
std::string hash_file(const std::string& path);

}  // namespace textscene
