// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_VERIFY_RANDOM_TREE_HPP
#define TREEATTN_VERIFY_RANDOM_TREE_HPP

#include <algorithm>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "treeattn/tree.hpp"

namespace treeattn::verify {

namespace detail {

inline ParseTree grow(std::size_t leaves, std::size_t max_arity, std::mt19937_64& rng, std::size_t& next_leaf,
                      std::size_t& next_node) {
  std::string label = "X" + std::to_string(next_node++);
  std::uniform_int_distribution<std::size_t> arity_dist(1, std::max<std::size_t>(max_arity, 2));
  const std::size_t arity = std::min(arity_dist(rng), leaves);
  std::vector<ParseTree> kids;
  if (leaves == 1 && std::bernoulli_distribution(0.6)(rng)) {
    kids.push_back(ParseTree::leaf("w" + std::to_string(next_leaf++)));
    return ParseTree::node(std::move(label), std::move(kids));
  }
  // split `leaves` into `arity` positive parts; each part is a leaf or a subtree
  std::vector<std::size_t> cuts;
  std::vector<std::size_t> pool(leaves - 1);
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k + 1;
  std::shuffle(pool.begin(), pool.end(), rng);
  cuts.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(arity - 1));
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(leaves);
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    const std::size_t part = c - prev;
    prev = c;
    if (part == 1 && std::bernoulli_distribution(0.5)(rng)) {
      kids.push_back(ParseTree::leaf("w" + std::to_string(next_leaf++)));
    } else {
      kids.push_back(grow(part, max_arity, rng, next_leaf, next_node));
    }
  }
  return ParseTree::node(std::move(label), std::move(kids));
}

}  // namespace detail

/// Random constituency tree with exactly `leaves` leaves and arities in
/// [1, max_arity]; unary chains occur.
inline ParseTree random_tree(std::size_t leaves, std::size_t max_arity, std::mt19937_64& rng) {
  std::size_t next_leaf = 0, next_node = 0;
  return detail::grow(leaves, max_arity, rng, next_leaf, next_node);
}

}  // namespace treeattn::verify

#endif  // TREEATTN_VERIFY_RANDOM_TREE_HPP
