#pragma once

#include <string>
#include <string_view>

namespace surfprobe::utf8 {

// Decodes UTF-8 into Unicode scalar values. Throws ValidationError on
// malformed input (overlong forms, surrogates, truncated sequences).
std::u32string decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view cps);

// Number of Unicode scalar values; same validation as decode().
std::size_t length(std::string_view text);

}  // namespace surfprobe::utf8
