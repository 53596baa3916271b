#include "spanid/tokenizer.hpp"

#include <cctype>
#include <set>

#include "spanid/rng.hpp"
#include "spanid/text.hpp"

namespace spanid {

namespace {

bool is_space_cp(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v';
}

bool is_word_cp(uint32_t cp) {
  if (cp >= 128) return true;
  return (cp >= '0' && cp <= '9') || (cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z');
}

std::string lower_ascii(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

}  // namespace

std::vector<Token> tokenize_text(const std::string& text, bool lowercase) {
  std::vector<uint32_t> cps = cp_decode(text);
  auto bytes = cp_byte_offsets(text);
  std::vector<Token> out;
  size_t i = 0;
  size_t n = cps.size();
  while (i < n) {
    if (is_space_cp(cps[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    if (is_word_cp(cps[i])) {
      while (j < n && is_word_cp(cps[j])) ++j;
    } else {
      j = i + 1;  // punctuation: one codepoint per token
    }
    Token t;
    t.text = text.substr(bytes[i], bytes[j] - bytes[i]);
    if (lowercase) t.text = lower_ascii(t.text);
    t.start_char = static_cast<int>(i);
    t.end_char = static_cast<int>(j);
    out.push_back(std::move(t));
    i = j;
  }
  return out;
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = vocab.find(lowercase ? lower_ascii(token) : token);
  return it == vocab.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize_text(text, lowercase)) ids.push_back(id_of(t.text));
  return ids;
}

uint64_t Tokenizer::vocab_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  uint8_t lc = lowercase ? 1 : 0;
  h = fnv1a64(&lc, 1, h);
  for (const auto& [token, id] : vocab) {
    h = fnv1a64(token.data(), token.size() + 1, h);  // include the NUL separator
    int64_t v = id;
    h = fnv1a64(&v, sizeof(v), h);
  }
  return h;
}

Tokenizer build_vocab(const Dataset& ds, int min_freq, bool lowercase) {
  if (ds.count_documents(Split::train) == 0) throw CorpusError("build_vocab: train split is empty");

  std::map<std::string, int64_t> freq;
  for (const auto& doc : ds.documents) {
    if (doc.split != Split::train) continue;
    for (const auto& t : tokenize_text(doc.text, lowercase)) freq[t.text] += 1;
  }

  std::set<std::string> keep;
  for (const auto& [token, count] : freq)
    if (count >= min_freq) keep.insert(token);

  auto keep_all = [&](const std::string& text) {
    for (const auto& t : tokenize_text(text, lowercase)) keep.insert(t.text);
  };
  keep_all("Highlight the parts (if any) related to . Details : .");
  keep_all("Highlight the parts (if any) similar to .");
  for (const auto& cat : ds.categories) {
    keep_all(cat.mention);
    keep_all(cat.definition);
  }

  Tokenizer tok;
  tok.lowercase = lowercase;
  int next_id = 4;
  for (const auto& token : keep) tok.vocab[token] = next_id++;
  return tok;
}

}  // namespace spanid
