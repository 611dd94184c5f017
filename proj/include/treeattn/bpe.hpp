// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_BPE_HPP
#define TREEATTN_BPE_HPP

#include <cstddef>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "treeattn/error.hpp"
#include "treeattn/tree.hpp"

namespace treeattn {

using Splitter = std::function<std::vector<std::string>(const std::string&)>;

/// Merge table in the usual subword-nmt format: one "left right" pair per
/// line in priority order, an optional "#version" header line. Segments
/// mark non-final pieces with "@@".
class BpeCodes {
 public:
  static BpeCodes parse(std::istream& in) {
    BpeCodes codes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.rfind("#version", 0) == 0) continue;
      std::istringstream ls(line);
      std::string a, b, extra;
      if (!(ls >> a >> b) || (ls >> extra)) {
        throw DataError("bpe codes line " + std::to_string(lineno) + ": expected two symbols");
      }
      codes.ranks_.emplace(std::make_pair(a, b), codes.ranks_.size());
    }
    return codes;
  }

  static BpeCodes from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  std::size_t size() const { return ranks_.size(); }

  std::vector<std::string> segment(const std::string& word) const {
    if (word.empty()) return {};
    std::vector<std::string> sym;
    for (char c : word) sym.emplace_back(1, c);
    sym.back() += "</w>";
    for (;;) {
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = ranks_.find({sym[i], sym[i + 1]});
        if (it != ranks_.end() && it->second < best) best = it->second;
      }
      if (best == std::numeric_limits<std::size_t>::max()) break;
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size()) {
          auto it = ranks_.find({sym[i], sym[i + 1]});
          if (it != ranks_.end() && it->second == best) {
            merged.push_back(sym[i] + sym[i + 1]);
            i += 2;
            continue;
          }
        }
        merged.push_back(sym[i]);
        ++i;
      }
      sym = std::move(merged);
    }
    std::string& last = sym.back();
    last.erase(last.size() - 4);
    if (last.empty()) sym.pop_back();
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) sym[i] += "@@";
    return sym;
  }

  Splitter splitter() const {
    return [this](const std::string& w) { return segment(w); };
  }

 private:
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

inline constexpr const char* kWordLabel = "WORD";

namespace detail {

inline std::vector<ParseTree> bpe_pieces(const std::string& token, const std::string& label, const Splitter& split) {
  std::vector<std::string> pieces = split(token);
  if (pieces.empty()) throw DataError("splitter returned no pieces for token '" + token + "'");
  std::vector<ParseTree> out;
  for (auto& p : pieces) {
    if (p.empty()) throw DataError("splitter returned an empty piece for token '" + token + "'");
    out.push_back(ParseTree::node(label + "-BPE", {ParseTree::leaf(std::move(p))}));
  }
  return out;
}

inline ParseTree bpe_split(const ParseTree& t, const Splitter& split) {
  if (t.is_preterminal()) {
    auto pieces = detail::bpe_pieces(t.children[0].label, t.label, split);
    if (pieces.size() == 1) return ParseTree::node(t.label, {std::move(pieces[0].children[0])});
    return ParseTree::node(t.label, std::move(pieces));
  }
  ParseTree out{t.label, {}};
  for (const auto& c : t.children) {
    if (c.is_leaf()) {
      // a word hanging directly under a phrase gets its own WORD subtree
      auto pieces = detail::bpe_pieces(c.label, kWordLabel, split);
      if (pieces.size() == 1) out.children.push_back(std::move(pieces[0].children[0]));
      else out.children.push_back(ParseTree::node(kWordLabel, std::move(pieces)));
    } else {
      out.children.push_back(bpe_split(c, split));
    }
  }
  return out;
}

}  // namespace detail

/// Replaces every multi-piece word by a subtree: the preterminal P keeps its
/// label and gets one "P-BPE" child per subword piece. Single-piece words
/// are left untouched.
inline ParseTree apply_bpe_split(const ParseTree& t, const Splitter& split) {
  if (t.is_leaf()) throw InvalidTreeError("apply_bpe_split needs a tree, not a bare token");
  return detail::bpe_split(t, split);
}

}  // namespace treeattn

#endif  // TREEATTN_BPE_HPP
