#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace musicqa::text {

// ASCII-only case folding; bytes >= 0x80 pass through untouched.
std::string fold_case(std::string_view s);

std::string_view trim(std::string_view s);

// Case-folds, trims and collapses every whitespace run to one space.
std::string normalize_question(std::string_view s);

// Splits on ASCII and Unicode whitespace (UTF-8 encoded).
std::vector<std::string> split_whitespace(std::string_view s);

// Length in bytes of the Unicode whitespace code point starting at s[i],
// or 0 when s[i] does not start one.
std::size_t whitespace_at(std::string_view s, std::size_t i);

}  // namespace musicqa::text
