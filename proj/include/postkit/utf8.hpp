#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace postkit::utf8 {

struct CodePoint {
  char32_t value;
  std::size_t offset;  // byte offset in the source text
  std::size_t length;  // encoded length; invalid bytes decode as length-1 U+FFFD
};

std::vector<CodePoint> decode(std::string_view text);
bool is_space(char32_t c) noexcept;

}  // namespace postkit::utf8
