// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_TREE_HPP
#define TREEATTN_TREE_HPP

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "treeattn/error.hpp"

namespace treeattn {

/// Labeled ordered tree. Internal nodes carry phrase labels; leaves carry
/// the token text and have no children.
struct ParseTree {
  std::string label;
  std::vector<ParseTree> children;

  static ParseTree leaf(std::string token) { return ParseTree{std::move(token), {}}; }
  static ParseTree node(std::string label, std::vector<ParseTree> children) {
    return ParseTree{std::move(label), std::move(children)};
  }

  bool is_leaf() const { return children.empty(); }
  bool is_preterminal() const { return children.size() == 1 && children[0].is_leaf(); }

  friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

namespace detail {

class BracketParser {
 public:
  explicit BracketParser(std::string_view text) : text_(text) {}

  ParseTree parse_document() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("empty input", pos_);
    if (text_[pos_] != '(') throw ParseError("expected '('", pos_);
    ParseTree t = parse_tree(true);
    skip_ws();
    if (pos_ != text_.size()) throw ParseError("trailing content after tree", pos_);
    return t;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string read_token() {
    std::string tok;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')') break;
      if (c == '\\' && pos_ + 1 < text_.size()) {
        tok.push_back(text_[pos_ + 1]);
        pos_ += 2;
        continue;
      }
      tok.push_back(c);
      ++pos_;
    }
    return tok;
  }

  ParseTree parse_tree(bool outermost) {
    const std::size_t open = pos_;
    ++pos_;  // '('
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    ParseTree t;
    if (text_[pos_] != '(' && text_[pos_] != ')') t.label = read_token();
    for (;;) {
      skip_ws();
      if (pos_ >= text_.size()) throw ParseError("unbalanced parentheses: unexpected end of input", pos_);
      const char c = text_[pos_];
      if (c == ')') {
        if (t.children.empty()) throw ParseError("empty node", pos_);
        ++pos_;
        break;
      }
      if (c == '(') {
        t.children.push_back(parse_tree(false));
      } else {
        t.children.push_back(ParseTree::leaf(read_token()));
      }
    }
    if (t.label.empty()) {
      // Penn Treebank files wrap each tree as "( (S ...) )".
      if (outermost && t.children.size() == 1 && !t.children[0].is_leaf()) return std::move(t.children[0]);
      throw ParseError("node without a label", open + 1);
    }
    return t;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline void escape_token(const std::string& s, std::string& out) {
  for (char c : s) {
    if (c == '(' || c == ')' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
}

inline void write_bracketed(const ParseTree& t, std::string& out) {
  if (t.is_leaf()) {
    escape_token(t.label, out);
    return;
  }
  out.push_back('(');
  escape_token(t.label, out);
  for (const auto& c : t.children) {
    out.push_back(' ');
    write_bracketed(c, out);
  }
  out.push_back(')');
}

}  // namespace detail

/// Reads one Penn-Treebank-style s-expression. Whitespace-insensitive;
/// "\(" and "\)" escape parentheses inside tokens.
inline ParseTree parse_bracketed(std::string_view text) { return detail::BracketParser(text).parse_document(); }

inline std::string to_bracketed(const ParseTree& t) {
  std::string out;
  detail::write_bracketed(t, out);
  return out;
}

inline void collect_leaves(const ParseTree& t, std::vector<std::string>& out) {
  if (t.is_leaf()) {
    out.push_back(t.label);
    return;
  }
  for (const auto& c : t.children) collect_leaves(c, out);
}

inline std::vector<std::string> leaf_tokens(const ParseTree& t) {
  std::vector<std::string> out;
  collect_leaves(t, out);
  return out;
}

inline std::size_t internal_node_count(const ParseTree& t) {
  if (t.is_leaf()) return 0;
  std::size_t n = 1;
  for (const auto& c : t.children) n += internal_node_count(c);
  return n;
}

struct NormalizeOptions {
  // Drop POS preterminals over single-piece words ("-BPE" subword nodes and a
  // preterminal root are kept).
  bool drop_preterminals = true;
  // Collapse node-over-node unary chains onto the topmost label.
  bool collapse_unary = true;
};

namespace detail {

inline bool is_bpe_label(const std::string& label) {
  constexpr std::string_view suffix = "-BPE";
  return label.size() >= suffix.size() && label.compare(label.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline ParseTree normalize(const ParseTree& t, const NormalizeOptions& opt, bool is_root) {
  if (t.is_leaf()) return t;
  if (opt.drop_preterminals && !is_root && t.is_preterminal() && !is_bpe_label(t.label)) return t.children[0];
  ParseTree out{t.label, {}};
  out.children.reserve(t.children.size());
  for (const auto& c : t.children) out.children.push_back(normalize(c, opt, false));
  if (opt.collapse_unary) {
    while (out.children.size() == 1 && !out.children[0].is_leaf()) {
      std::vector<ParseTree> grand = std::move(out.children[0].children);
      out.children = std::move(grand);
    }
  }
  return out;
}

}  // namespace detail

/// Model-side preprocessing applied before encoding.
inline ParseTree normalize_tree(const ParseTree& t, const NormalizeOptions& opt = {}) {
  if (t.is_leaf()) throw InvalidTreeError("a tree root must be an internal node");
  return detail::normalize(t, opt, true);
}

inline constexpr const char* kDocLabel = "DOC";

/// Joins sentence trees under a dummy DOC root (always added, even for one tree).
inline ParseTree join_forest(std::vector<ParseTree> trees) {
  if (trees.empty()) throw DataError("join_forest needs at least one tree");
  for (const auto& t : trees)
    if (t.is_leaf()) throw DataError("join_forest: forest members must be trees, not bare tokens");
  return ParseTree::node(kDocLabel, std::move(trees));
}

}  // namespace treeattn

#endif  // TREEATTN_TREE_HPP
