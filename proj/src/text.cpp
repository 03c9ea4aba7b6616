#include "musicqa/text.hpp"

namespace musicqa::text {

std::string fold_case(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::size_t whitespace_at(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) -> unsigned {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u;
  };
  const unsigned c0 = b(0);
  if (c0 == ' ' || (c0 >= '\t' && c0 <= '\r')) return 1;
  if (c0 == 0xC2 && (b(1) == 0x85 || b(1) == 0xA0)) return 2;
  if (c0 == 0xE1 && b(1) == 0x9A && b(2) == 0x80) return 3;
  if (c0 == 0xE2 && b(1) == 0x80) {
    const unsigned c2 = b(2);
    if ((c2 >= 0x80 && c2 <= 0x8A) || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF) return 3;
  }
  if (c0 == 0xE2 && b(1) == 0x81 && b(2) == 0x9F) return 3;
  if (c0 == 0xE3 && b(1) == 0x80 && b(2) == 0x80) return 3;
  return 0;
}

std::string_view trim(std::string_view s) {
  std::size_t begin = 0;
  while (begin < s.size()) {
    const std::size_t w = whitespace_at(s, begin);
    if (w == 0) break;
    begin += w;
  }
  std::size_t end = s.size();
  // Trailing multi-byte whitespace is rare; handle ASCII plus NBSP.
  while (end > begin) {
    if (whitespace_at(s, end - 1) == 1) {
      --end;
    } else if (end - begin >= 2 && whitespace_at(s, end - 2) == 2) {
      end -= 2;
    } else if (end - begin >= 3 && whitespace_at(s, end - 3) == 3) {
      end -= 3;
    } else {
      break;
    }
  }
  return s.substr(begin, end - begin);
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t w = whitespace_at(s, i);
    if (w > 0) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      i += w;
    } else {
      cur.push_back(s[i]);
      ++i;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string normalize_question(std::string_view s) {
  std::string out;
  for (const auto& tok : split_whitespace(s)) {
    if (!out.empty()) out.push_back(' ');
    out += fold_case(tok);
  }
  return out;
}

}  // namespace musicqa::text
