#include "textscene/hash.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "textscene/error.hpp"

namespace textscene {

void Fnv1a::update(std::span<const std::uint8_t> bytes) {
  for (auto b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view s) {
  update({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string hash_string(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<char> buf(1 << 16);
  Fnv1a h;
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    h.update({reinterpret_cast<const std::uint8_t*>(buf.data()), n});
  }
  return h.hex();
}

}  // namespace textscene
