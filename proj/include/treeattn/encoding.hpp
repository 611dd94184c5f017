// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_ENCODING_HPP
#define TREEATTN_ENCODING_HPP

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "treeattn/error.hpp"
#include "treeattn/tree.hpp"

namespace treeattn {

/// A member of a rule set: either nonterminal `index` or leaf `index` (0-based).
struct Element {
  enum class Kind : std::uint8_t { kNode = 0, kLeaf = 1 };
  Kind kind = Kind::kNode;
  std::size_t index = 0;

  static Element node(std::size_t i) { return {Kind::kNode, i}; }
  static Element leaf(std::size_t j) { return {Kind::kLeaf, j}; }
  bool is_node() const { return kind == Kind::kNode; }
  bool is_leaf() const { return kind == Kind::kLeaf; }

  friend auto operator<=>(const Element&, const Element&) = default;
};

inline std::string element_name(const Element& e) {
  return std::string(e.is_node() ? "node " : "leaf ") + std::to_string(e.index);
}

/// The (L, N, R) triple: ordered leaves, nonterminal labels in post-order,
/// and for every nonterminal the sorted set of elements in its subtree
/// (itself included). Nodes sort before leaves inside each rule set.
struct TreeEncoding {
  std::vector<std::string> leaves;
  std::vector<std::string> nodes;
  std::vector<std::vector<Element>> rules;

  std::size_t num_leaves() const { return leaves.size(); }
  std::size_t num_nodes() const { return nodes.size(); }

  bool contains(std::size_t node, const Element& e) const {
    const auto& r = rules.at(node);
    return std::binary_search(r.begin(), r.end(), e);
  }

  friend bool operator==(const TreeEncoding&, const TreeEncoding&) = default;
};

namespace detail {

inline void encode_into(const ParseTree& t, TreeEncoding& enc, std::vector<Element>& members) {
  // members receives the elements of t's subtree
  if (t.is_leaf()) {
    if (t.label.empty()) throw InvalidTreeError("leaf with empty token");
    members.push_back(Element::leaf(enc.leaves.size()));
    enc.leaves.push_back(t.label);
    return;
  }
  std::vector<Element> mine;
  for (const auto& c : t.children) encode_into(c, enc, mine);
  const std::size_t self = enc.nodes.size();
  enc.nodes.push_back(t.label);
  mine.push_back(Element::node(self));
  std::sort(mine.begin(), mine.end());
  enc.rules.push_back(mine);
  members.insert(members.end(), mine.begin(), mine.end());
}

}  // namespace detail

/// Transformation H: leaves in surface order, nonterminals enumerated in
/// post-order (children before parents), rules(x) = subtree of x.
inline TreeEncoding encode_tree(const ParseTree& t) {
  if (t.is_leaf()) throw InvalidTreeError("cannot encode a bare leaf; the root must be a nonterminal");
  TreeEncoding enc;
  std::vector<Element> all;
  detail::encode_into(t, enc, all);
  return enc;
}

/// Ancestors P(x) = { y : x in rules(y), y != x }.
inline std::vector<std::size_t> ancestors_of(const Element& x, const TreeEncoding& enc) {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < enc.num_nodes(); ++y) {
    if (x.is_node() && x.index == y) continue;
    if (enc.contains(y, x)) out.push_back(y);
  }
  return out;
}

/// Parent by the immediate-ancestor rule: the unique y in P(x) whose rule set
/// meets P(x) only in y itself. Returns nullopt for a parentless node (root).
inline std::optional<std::size_t> parent_of(const Element& x, const TreeEncoding& enc) {
  const auto anc = ancestors_of(x, enc);
  if (anc.empty()) {
    if (x.is_leaf()) throw InvalidTreeError(element_name(x) + " belongs to no rule set");
    return std::nullopt;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t y : anc) {
    bool only_self = true;
    for (std::size_t z : anc) {
      if (z != y && enc.contains(y, Element::node(z))) {
        only_self = false;
        break;
      }
    }
    if (only_self) candidates.push_back(y);
  }
  if (candidates.size() != 1) {
    throw InvalidTreeError(element_name(x) + " has " + std::to_string(candidates.size()) +
                           " parent candidates (expected exactly one)");
  }
  return candidates[0];
}

struct Diagnostic {
  enum class Severity { kError, kWarning };
  Severity severity = Severity::kError;
  std::string element;
  std::string message;
};

using Diagnostics = std::vector<Diagnostic>;

/// Checks the structural invariants of an encoding: indices in range,
/// self-membership, non-empty and contiguous leaf spans, nested rule sets, a
/// single root, and a unique parent for every other element.
inline Diagnostics validate(const TreeEncoding& enc) {
  Diagnostics out;
  auto error = [&out](const std::string& el, const std::string& msg) {
    out.push_back({Diagnostic::Severity::kError, el, msg});
  };
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
  if (enc.rules.size() != m) {
    error("encoding", "rules has " + std::to_string(enc.rules.size()) + " entries for " + std::to_string(m) + " nodes");
    return out;
  }
  if (m == 0) error("encoding", "no nonterminal nodes");
  if (n == 0) error("encoding", "no leaves");
  for (std::size_t i = 0; i < n; ++i)
    if (enc.leaves[i].empty()) error(element_name(Element::leaf(i)), "empty token");
  bool indices_ok = true;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& r = enc.rules[i];
    const std::string name = element_name(Element::node(i));
    if (!std::is_sorted(r.begin(), r.end()) || std::adjacent_find(r.begin(), r.end()) != r.end()) {
      error(name, "rule set is not a sorted set");
      indices_ok = false;
    }
    for (const auto& e : r) {
      if ((e.is_node() && e.index >= m) || (e.is_leaf() && e.index >= n)) {
        error(name, "member " + element_name(e) + " out of range");
        indices_ok = false;
      }
    }
  }
  if (!indices_ok) return out;

  for (std::size_t i = 0; i < m; ++i) {
    const std::string name = element_name(Element::node(i));
    if (!enc.contains(i, Element::node(i))) error(name, "self-membership violated: node not in its own rule set");
    std::vector<std::size_t> span;
    for (const auto& e : enc.rules[i])
      if (e.is_leaf()) span.push_back(e.index);
    if (span.empty()) {
      error(name, "covers no leaves");
    } else if (span.back() - span.front() + 1 != span.size()) {
      error(name, "contiguity violated: leaf span [" + std::to_string(span.front()) + ", " +
                      std::to_string(span.back()) + "] has gaps");
    }
    for (const auto& e : enc.rules[i]) {
      if (!e.is_node() || e.index == i) continue;
      for (const auto& f : enc.rules[e.index]) {
        if (!enc.contains(i, f)) {
          error(name, "nesting violated: " + element_name(f) + " is under " + element_name(e) + " but not under " + name);
          break;
        }
      }
    }
  }

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < m; ++i)
    if (ancestors_of(Element::node(i), enc).empty()) roots.push_back(i);
  if (roots.size() != 1) {
    error("encoding", "expected exactly one root, found " + std::to_string(roots.size()));
  } else if (enc.rules[roots[0]].size() != n + m) {
    error(element_name(Element::node(roots[0])), "root does not cover every element");
  }

  auto check_parent = [&](const Element& x) {
    try {
      const auto p = parent_of(x, enc);
      if (!p && x.is_node() && roots.size() == 1 && x.index != roots[0]) {
        error(element_name(x), "unique-parent violated: no parent");
      }
    } catch (const InvalidTreeError& e) {
      error(element_name(x), std::string("unique-parent violated: ") + e.what());
    }
  };
  for (std::size_t i = 0; i < m; ++i) check_parent(Element::node(i));
  for (std::size_t j = 0; j < n; ++j) check_parent(Element::leaf(j));
  return out;
}

inline std::string describe(const Diagnostics& d) {
  std::string s;
  for (const auto& x : d) {
    if (!s.empty()) s += "; ";
    s += x.element + ": " + x.message;
  }
  return s;
}

/// Inverse transformation I: rebuilds the tree from parent links, ordering
/// siblings by the leftmost leaf they cover.
inline ParseTree decode_tree(const TreeEncoding& enc) {
  const Diagnostics diag = validate(enc);
  if (!diag.empty()) throw InvalidTreeError(describe(diag));
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();

  std::vector<std::size_t> leftmost(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (const auto& e : enc.rules[i])
      if (e.is_leaf()) leftmost[i] = std::min(leftmost[i], e.index);

  std::vector<std::vector<Element>> children(m);
  std::size_t root = m;
  for (std::size_t i = 0; i < m; ++i) {
    const auto p = parent_of(Element::node(i), enc);
    if (p) children[*p].push_back(Element::node(i));
    else root = i;
  }
  for (std::size_t j = 0; j < n; ++j) children[*parent_of(Element::leaf(j), enc)].push_back(Element::leaf(j));

  auto key = [&](const Element& e) { return e.is_leaf() ? e.index : leftmost[e.index]; };
  for (auto& c : children) std::sort(c.begin(), c.end(), [&](const Element& a, const Element& b) { return key(a) < key(b); });

  auto build = [&](auto&& self, std::size_t i) -> ParseTree {
    ParseTree t{enc.nodes[i], {}};
    for (const auto& c : children[i]) {
      if (c.is_leaf()) t.children.push_back(ParseTree::leaf(enc.leaves[c.index]));
      else t.children.push_back(self(self, c.index));
    }
    return t;
  };
  return build(build, root);
}

}  // namespace treeattn

#endif  // TREEATTN_ENCODING_HPP
