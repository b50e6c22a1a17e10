#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace glyphcrm {

// Decodes UTF-8 into codepoints. Throws ParseError on malformed bytes.
std::vector<char32_t> utf8_decode(std::string_view text);

std::string utf8_encode(char32_t cp);
std::string utf8_encode(const std::vector<char32_t>& cps);

// ASCII whitespace plus U+3000 (ideographic space).
bool is_whitespace(char32_t cp);

}  // namespace glyphcrm
