// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_VERIFY_SET_ORACLES_HPP
#define TREEATTN_VERIFY_SET_ORACLES_HPP

// Brute-force references for the accumulation kernels. Every quantity is
// recomputed from the rule sets by explicit membership tests; nothing here
// uses BranchSets, leaf spans or running sums. Plain vectors in and out.

#include <cstddef>
#include <vector>

#include "treeattn/encoding.hpp"

namespace treeattn::verify {

/// V_j^i: nodes t with t in R(i) and leaf j in R(t).
inline std::vector<std::size_t> branch_nodes(const TreeEncoding& enc, std::size_t i, std::size_t j) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < enc.num_nodes(); ++t)
    if (enc.contains(i, Element::node(t)) && enc.contains(t, Element::leaf(j))) out.push_back(t);
  return out;
}

/// H_j^i: leaves t <= j in R(i).
inline std::size_t horizontal_count(const TreeEncoding& enc, std::size_t i, std::size_t j) {
  std::size_t c = 0;
  for (std::size_t t = 0; t <= j; ++t) c += enc.contains(i, Element::leaf(t)) ? 1 : 0;
  return c;
}

inline std::size_t covered_leaves(const TreeEncoding& enc, std::size_t i) {
  std::size_t c = 0;
  for (std::size_t j = 0; j < enc.num_leaves(); ++j) c += enc.contains(i, Element::leaf(j)) ? 1 : 0;
  return c;
}

/// S as (m+1)·n·d.
inline std::vector<double> interpolate(const std::vector<double>& l, const std::vector<double>& nv,
                                       const TreeEncoding& enc, std::size_t d) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
  std::vector<double> s((m + 1) * n * d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < d; ++k) s[j * d + k] = l[j * d + k];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (enc.contains(i, Element::leaf(j)))
        for (std::size_t k = 0; k < d; ++k) s[((i + 1) * n + j) * d + k] = nv[i * d + k];
  return s;
}

/// E as (m+1)·n·d from tables stored rows × d/2; counts clip to `rows`.
inline std::vector<double> hier_embeddings(const TreeEncoding& enc, const std::vector<double>& ev,
                                           const std::vector<double>& eh, std::size_t rows, std::size_t d) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), h = d / 2;
  std::vector<double> e((m + 1) * n * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!enc.contains(i, Element::leaf(j))) continue;
      std::size_t v = branch_nodes(enc, i, j).size();
      std::size_t hz = horizontal_count(enc, i, j);
      v = (v > rows ? rows : v) - 1;
      hz = (hz > rows ? rows : hz) - 1;
      for (std::size_t k = 0; k < h; ++k) {
        e[((i + 1) * n + j) * d + k] = ev[v * h + k];
        e[((i + 1) * n + j) * d + h + k] = eh[hz * h + k];
      }
    }
  }
  return e;
}

/// Ŝ as m·n·d: mean over the branch C_j^i = {leaf row} ∪ {S_{t+1,j} : t in V_j^i}.
inline std::vector<double> upward_cumavg(const std::vector<double>& s, const TreeEncoding& enc, std::size_t d) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
  std::vector<double> out(m * n * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!enc.contains(i, Element::leaf(j))) continue;
      const auto v = branch_nodes(enc, i, j);
      for (std::size_t k = 0; k < d; ++k) {
        double acc = s[j * d + k];
        for (std::size_t t : v) acc += s[((t + 1) * n + j) * d + k];
        out[(i * n + j) * d + k] = acc / static_cast<double>(v.size() + 1);
      }
    }
  }
  return out;
}

/// n̄ as m·d.
inline std::vector<double> weighted_aggregate(const std::vector<double>& shat, const std::vector<double>& w,
                                              const TreeEncoding& enc, std::size_t d) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double cnt = static_cast<double>(covered_leaves(enc, i));
    for (std::size_t j = 0; j < n; ++j)
      if (enc.contains(i, Element::leaf(j)))
        for (std::size_t k = 0; k < d; ++k) out[i * d + k] += w[j] * shat[(i * n + j) * d + k] / cnt;
  }
  return out;
}

/// Subtree mask over [nodes; leaves] × [nodes; leaves].
inline std::vector<bool> subtree_mask(const TreeEncoding& enc) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), a = n + m;
  std::vector<bool> out(a * a, false);
  for (std::size_t q = 0; q < a; ++q) {
    for (std::size_t k = 0; k < a; ++k) {
      const Element key = k < m ? Element::node(k) : Element::leaf(k - m);
      out[q * a + k] = q < m ? enc.contains(q, key) : key.is_leaf();
    }
  }
  return out;
}

}  // namespace treeattn::verify

#endif  // TREEATTN_VERIFY_SET_ORACLES_HPP
