#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tatrans::utf8 {

/// Decode to Unicode scalar values. Throws ValidationError on malformed input.
std::u32string decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view text);

/// Number of scalar values; throws on malformed input.
std::size_t length(std::string_view text);

/// Split into one UTF-8 string per scalar value.
std::vector<std::string> split_chars(std::string_view text);

}  // namespace tatrans::utf8
