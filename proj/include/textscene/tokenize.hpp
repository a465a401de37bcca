#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textscene {

// Lowercases ASCII letters and splits on whitespace; every ASCII punctuation
// character becomes its own token. Bytes >= 0x80 are kept inside words.
std::vector<std::string> tokenize(std::string_view text);

// Tokens joined by single spaces: "Traffic  Light" -> "traffic light".
std::string normalize_phrase(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

}  // namespace textscene
