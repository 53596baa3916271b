#include "spanid/text.hpp"

namespace spanid {

namespace {

// Length of the UTF-8 sequence starting at s[i], or 1 for invalid bytes.
size_t seq_len(const std::string& s, size_t i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  size_t n = 1;
  if ((c & 0x80) == 0x00) n = 1;
  else if ((c & 0xe0) == 0xc0) n = 2;
  else if ((c & 0xf0) == 0xe0) n = 3;
  else if ((c & 0xf8) == 0xf0) n = 4;
  else return 1;
  if (i + n > s.size()) return 1;
  for (size_t k = 1; k < n; ++k) {
    if ((static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) return 1;
  }
  return n;
}

}  // namespace

std::vector<size_t> cp_byte_offsets(const std::string& utf8) {
  std::vector<size_t> offsets;
  offsets.reserve(utf8.size() + 1);
  size_t i = 0;
  while (i < utf8.size()) {
    offsets.push_back(i);
    i += seq_len(utf8, i);
  }
  offsets.push_back(utf8.size());
  return offsets;
}

size_t cp_length(const std::string& utf8) { return cp_byte_offsets(utf8).size() - 1; }

std::string cp_slice(const std::string& utf8, size_t start_cp, size_t end_cp) {
  auto offsets = cp_byte_offsets(utf8);
  return utf8.substr(offsets[start_cp], offsets[end_cp] - offsets[start_cp]);
}

std::vector<uint32_t> cp_decode(const std::string& utf8) {
  std::vector<uint32_t> out;
  out.reserve(utf8.size());
  size_t i = 0;
  while (i < utf8.size()) {
    size_t n = seq_len(utf8, i);
    uint32_t cp = 0;
    unsigned char c = static_cast<unsigned char>(utf8[i]);
    if (n == 1) {
      cp = c;
    } else {
      cp = c & (0x7f >> n);
      for (size_t k = 1; k < n; ++k) cp = (cp << 6) | (static_cast<unsigned char>(utf8[i + k]) & 0x3f);
    }
    out.push_back(cp);
    i += n;
  }
  return out;
}

std::string normalize_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // leading whitespace dropped
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace spanid
