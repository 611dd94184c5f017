// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_SYNTHETIC_HPP
#define TREEATTN_SYNTHETIC_HPP

// Nested MIN / MAX / NEG expressions over leaves (x +1) and (x -1). The
// class is the value of the root: 1 for +1, 0 for -1. The token sequence
// alone does not determine it; the operators live only in node labels.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "treeattn/data.hpp"
#include "treeattn/error.hpp"
#include "treeattn/tree.hpp"

namespace treeattn {

struct SyntheticOptions {
  std::size_t max_depth = 4;  // operator levels, root included
  std::size_t max_arity = 3;  // for MIN and MAX
  std::size_t min_leaves = 3;
  std::size_t max_leaves = 12;
  double leaf_prob = 0.3;     // chance a non-root child is a leaf before max_depth
  std::uint64_t seed = 1;
};

/// Value of a synthetic expression tree (+1 or -1).
inline int synthetic_value(const ParseTree& t) {
  if (t.is_leaf()) {
    if (t.label == "+1") return 1;
    if (t.label == "-1") return -1;
    throw DataError("synthetic leaf '" + t.label + "' is not +1 or -1");
  }
  if (t.label == "x") {
    if (t.children.size() != 1) throw DataError("x must wrap one value");
    return synthetic_value(t.children[0]);
  }
  if (t.children.empty()) throw DataError("operator without operands");
  if (t.label == "NEG") {
    if (t.children.size() != 1) throw DataError("NEG takes one operand");
    return -synthetic_value(t.children[0]);
  }
  if (t.label == "MIN" || t.label == "MAX") {
    int v = synthetic_value(t.children[0]);
    for (std::size_t k = 1; k < t.children.size(); ++k) {
      const int c = synthetic_value(t.children[k]);
      v = t.label == "MIN" ? std::min(v, c) : std::max(v, c);
    }
    return v;
  }
  throw DataError("unknown synthetic operator '" + t.label + "'");
}

namespace detail {

inline ParseTree synthetic_subtree(std::size_t depth, const SyntheticOptions& opt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool leaf = depth > 1 && (depth > opt.max_depth || unit(rng) < opt.leaf_prob);
  if (leaf) return ParseTree::node("x", {ParseTree::leaf(unit(rng) < 0.5 ? "+1" : "-1")});
  const double r = unit(rng);
  if (r < 0.2) return ParseTree::node("NEG", {synthetic_subtree(depth + 1, opt, rng)});
  std::uniform_int_distribution<std::size_t> arity(2, std::max<std::size_t>(2, opt.max_arity));
  const std::size_t k = arity(rng);
  std::vector<ParseTree> kids;
  for (std::size_t i = 0; i < k; ++i) kids.push_back(synthetic_subtree(depth + 1, opt, rng));
  return ParseTree::node(r < 0.6 ? "MIN" : "MAX", std::move(kids));
}

}  // namespace detail

/// `size` documents with exactly balanced classes (rejection sampling).
inline std::vector<Document> make_synthetic_dataset(std::size_t size, const SyntheticOptions& opt) {
  if (opt.max_depth == 0 || opt.min_leaves > opt.max_leaves) throw ConfigError("invalid synthetic options");
  std::mt19937_64 rng(opt.seed);
  const std::size_t per_class[2] = {size / 2, size - size / 2};
  std::size_t have[2] = {0, 0};
  std::vector<Document> docs;
  docs.reserve(size);
  std::size_t attempts = 0;
  while (docs.size() < size) {
    if (++attempts > 1000 * (size + 10)) throw DataError("synthetic sampler could not meet its constraints");
    ParseTree t = detail::synthetic_subtree(1, opt, rng);
    const std::size_t leaves = leaf_tokens(t).size();
    if (leaves < opt.min_leaves || leaves > opt.max_leaves) continue;
    const std::size_t label = synthetic_value(t) > 0 ? 1 : 0;
    if (have[label] >= per_class[label]) continue;
    ++have[label];
    docs.push_back({label, {std::move(t)}});
  }
  return docs;
}

/// Settings for the synthetic task: unary NEG chains must survive normalization.
inline ModelConfig synthetic_pipeline(ModelConfig cfg) {
  cfg.collapse_unary = false;
  cfg.drop_preterminals = true;
  return cfg;
}

}  // namespace treeattn

#endif  // TREEATTN_SYNTHETIC_HPP
