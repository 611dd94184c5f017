// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_VOCAB_HPP
#define TREEATTN_VOCAB_HPP

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "treeattn/error.hpp"

namespace treeattn {

/// String-to-id table. Id 0 is always the unknown symbol.
class Vocab {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr const char* kUnkToken = "<unk>";

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// `items` excludes the unknown symbol; duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& items) {
    add(kUnkToken);
    for (const auto& s : items) {
      if (index_.count(s)) throw VocabError("duplicate vocabulary entry '" + s + "'");
      add(s);
    }
  }

  /// Most frequent first, ties broken lexicographically; `limit` caps the
  /// size including the unknown symbol (0 = no cap).
  static Vocab build(const std::vector<std::vector<std::string>>& sequences, std::size_t limit = 0,
                     const std::vector<std::string>& reserved = {}) {
    std::map<std::string, std::size_t> freq;
    for (const auto& seq : sequences)
      for (const auto& s : seq) ++freq[s];
    for (const auto& r : reserved) freq.erase(r);
    freq.erase(kUnkToken);
    std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> items = reserved;
    for (const auto& [s, c] : order) items.push_back(s);
    if (limit > 0 && items.size() + 1 > limit) items.resize(limit - 1);
    return Vocab(items);
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& s) const { return index_.count(s) != 0; }
  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw VocabError("id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    return tokens_[id];
  }

  /// Unknown strings map to kUnk, or raise VocabError when `allow_unk` is false.
  std::size_t id(const std::string& s, bool allow_unk = true) const {
    const auto it = index_.find(s);
    if (it != index_.end()) return it->second;
    if (!allow_unk) throw VocabError("'" + s + "' is not in the vocabulary");
    return kUnk;
  }

  std::vector<std::size_t> ids(const std::vector<std::string>& seq, bool allow_unk = true) const {
    std::vector<std::size_t> out;
    out.reserve(seq.size());
    for (const auto& s : seq) out.push_back(id(s, allow_unk));
    return out;
  }

  /// Single-line form (space separated, percent-escaped) for checkpoint metadata.
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 1; i < tokens_.size(); ++i) {
      if (i > 1) out.push_back(' ');
      for (const char c : tokens_[i]) {
        if (c == '%' || c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '=') {
          static const char* hex = "0123456789ABCDEF";
          out.push_back('%');
          out.push_back(hex[(static_cast<unsigned char>(c) >> 4) & 15]);
          out.push_back(hex[static_cast<unsigned char>(c) & 15]);
        } else {
          out.push_back(c);
        }
      }
    }
    return out;
  }

  static Vocab deserialize(const std::string& text) {
    std::vector<std::string> items;
    std::string cur;
    bool any = false;
    auto hexval = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw VocabError("bad escape in serialized vocabulary");
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == ' ') {
        items.push_back(cur);
        cur.clear();
      } else if (c == '%') {
        if (i + 2 >= text.size()) throw VocabError("truncated escape in serialized vocabulary");
        cur.push_back(static_cast<char>(hexval(text[i + 1]) * 16 + hexval(text[i + 2])));
        i += 2;
      } else {
        cur.push_back(c);
      }
      any = true;
    }
    if (any) items.push_back(cur);
    return Vocab(items);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const std::string& s) {
    index_.emplace(s, tokens_.size());
    tokens_.push_back(s);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace treeattn

#endif  // TREEATTN_VOCAB_HPP
