// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_TESTS_SUPPORT_HPP
#define TREEATTN_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "treeattn/tensor.hpp"
#include "treeattn/tree.hpp"
#include "treeattn/verify/random_tree.hpp"

namespace treeattn::testing {

inline std::vector<double> random_values(std::size_t count, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(count);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, bool trainable = false) {
  auto v = random_values(shape_size(shape), rng);
  return trainable ? Tensor<double>::parameter(std::move(shape), std::move(v))
                   : Tensor<double>::from_data(std::move(shape), std::move(v));
}

using verify::random_tree;

/// Balanced binary tree over n leaves.
inline ParseTree balanced_tree(std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return ParseTree::node("P", {ParseTree::leaf("t" + std::to_string(lo))});
  if (hi - lo == 2) {
    return ParseTree::node("B", {ParseTree::leaf("t" + std::to_string(lo)), ParseTree::leaf("t" + std::to_string(lo + 1))});
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return ParseTree::node("B", {balanced_tree(lo, mid), balanced_tree(mid, hi)});
}

/// g over (leaf c, h), h over (leaf d, leaf e).
inline ParseTree gh_tree() {
  return parse_bracketed("(g c (h d e))");
}

}  // namespace treeattn::testing

#endif  // TREEATTN_TESTS_SUPPORT_HPP
