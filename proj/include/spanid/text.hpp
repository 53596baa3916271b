#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spanid {

// Span offsets throughout the toolkit count UTF-8 code points, not bytes.
// Invalid bytes are treated as one code point each (latin-1 fallback) so a
// broken file still gets a coherent error message instead of UB.

// Byte offset of each code point, plus one past-the-end entry.
std::vector<size_t> cp_byte_offsets(const std::string& utf8);

size_t cp_length(const std::string& utf8);

// Slice [start_cp, end_cp) as a UTF-8 substring. Offsets must be in range.
std::string cp_slice(const std::string& utf8, size_t start_cp, size_t end_cp);

// Decoded code points.
std::vector<uint32_t> cp_decode(const std::string& utf8);

// Trim ASCII whitespace and collapse internal runs to single spaces.
std::string normalize_ws(const std::string& s);

}  // namespace spanid
