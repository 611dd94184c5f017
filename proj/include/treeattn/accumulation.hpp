// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_ACCUMULATION_HPP
#define TREEATTN_ACCUMULATION_HPP

// Hierarchical accumulation: interpolation of leaf/node states into the
// (m+1)×n×d tensor S, upward cumulative averaging along root-to-leaf
// branches, hierarchical (vertical/horizontal) embeddings, and weighted
// aggregation of branch vectors into one vector per node.
//
// The staged functions (interpolate, upward_cumavg, build_hier_embeddings,
// weighted_aggregate) materialize the dense tensors and are value-only.
// accumulate() is the fused, differentiable kernel used by the attention
// layers; it touches only the occupied (node, leaf) pairs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "treeattn/encoding.hpp"
#include "treeattn/error.hpp"
#include "treeattn/op_counter.hpp"
#include "treeattn/ops.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

/// Per-tree index of branch sets. For node i and covered leaf j:
///   |V_j^i| = ancestors of j from its parent up to and including i,
///   |C_j^i| = |V_j^i| + 1 (the branch with the leaf),
///   |H_j^i| = position of j inside i's leaf span, counted from 1.
class BranchSets {
 public:
  BranchSets() = default;

  explicit BranchSets(const TreeEncoding& enc) : n_(enc.num_leaves()), m_(enc.num_nodes()) {
    if (enc.rules.size() != m_) throw InvalidTreeError("rules/nodes size mismatch");
    lo_.assign(m_, n_);
    hi_.assign(m_, 0);
    depth_.assign(m_, 0);
    std::vector<std::vector<std::size_t>> anc(n_);
    for (std::size_t i = 0; i < m_; ++i) {
      for (const auto& e : enc.rules[i]) {
        if (e.is_leaf()) {
          if (e.index >= n_) throw InvalidTreeError("leaf index out of range");
          lo_[i] = std::min(lo_[i], e.index);
          hi_[i] = std::max(hi_[i], e.index + 1);
          anc[e.index].push_back(i);
        } else if (e.index != i) {
          if (e.index >= m_) throw InvalidTreeError("node index out of range");
          ++depth_[e.index];
        }
      }
      if (hi_[i] <= lo_[i]) throw InvalidTreeError("node " + std::to_string(i) + " covers no leaves");
      if (hi_[i] - lo_[i] != covered_count(enc, i)) throw InvalidTreeError("node " + std::to_string(i) + " has a non-contiguous span");
    }
    offset_.assign(n_ + 1, 0);
    for (std::size_t j = 0; j < n_; ++j) {
      auto& a = anc[j];
      if (a.empty()) throw InvalidTreeError("leaf " + std::to_string(j) + " has no ancestor");
      // ancestors form a chain; deeper nodes have smaller rule sets
      std::sort(a.begin(), a.end(), [&enc](std::size_t x, std::size_t y) { return enc.rules[x].size() < enc.rules[y].size(); });
      offset_[j + 1] = offset_[j] + a.size();
      path_.insert(path_.end(), a.begin(), a.end());
    }
  }

  /// Index for n leaves and no phrase nodes.
  static BranchSets leaves_only(std::size_t n) {
    BranchSets bs;
    bs.n_ = n;
    bs.offset_.assign(n + 1, 0);
    return bs;
  }

  std::size_t num_leaves() const { return n_; }
  std::size_t num_nodes() const { return m_; }
  std::size_t span_begin(std::size_t i) const { return lo_[i]; }
  std::size_t span_end(std::size_t i) const { return hi_[i]; }
  std::size_t leaf_count(std::size_t i) const { return hi_[i] - lo_[i]; }
  std::size_t depth(std::size_t i) const { return depth_[i]; }
  bool covers(std::size_t i, std::size_t j) const { return lo_[i] <= j && j < hi_[i]; }

  /// Ancestors of leaf j, lowest first.
  std::span<const std::size_t> path(std::size_t j) const {
    return {path_.data() + offset_[j], offset_[j + 1] - offset_[j]};
  }

  std::size_t vertical(std::size_t i, std::size_t j) const { return path(j).size() - depth_[i]; }
  std::size_t horizontal(std::size_t i, std::size_t j) const { return j - lo_[i] + 1; }
  std::size_t branch(std::size_t i, std::size_t j) const { return vertical(i, j) + 1; }

  /// Number of occupied (node, leaf) pairs.
  std::size_t pair_count() const { return path_.size(); }

 private:
  static std::size_t covered_count(const TreeEncoding& enc, std::size_t i) {
    return static_cast<std::size_t>(
        std::count_if(enc.rules[i].begin(), enc.rules[i].end(), [](const Element& e) { return e.is_leaf(); }));
  }

  std::size_t n_ = 0, m_ = 0;
  std::vector<std::size_t> lo_, hi_, depth_;
  std::vector<std::size_t> offset_, path_;
};

/// Shared vertical and horizontal embedding tables, each |E| × d/2.
template <typename T>
struct HierEmbedTable {
  Tensor<T> vertical;
  Tensor<T> horizontal;

  std::size_t size() const { return vertical.rows(); }
  std::size_t half_width() const { return vertical.cols(); }

  static HierEmbedTable create(std::size_t rows, std::size_t half_width, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    auto draw = [&] {
      std::vector<T> v(rows * half_width);
      for (auto& x : v) x = static_cast<T>(dist(rng));
      return Tensor<T>::parameter({rows, half_width}, std::move(v));
    };
    HierEmbedTable t;
    t.vertical = draw();
    t.horizontal = draw();
    return t;
  }

  static HierEmbedTable zeros(std::size_t rows, std::size_t half_width) {
    return {Tensor<T>::parameter({rows, half_width}, std::vector<T>(rows * half_width, T(0))),
            Tensor<T>::parameter({rows, half_width}, std::vector<T>(rows * half_width, T(0)))};
  }

  void validate() const {
    if (!vertical.defined() || !horizontal.defined() || vertical.rank() != 2 || vertical.shape() != horizontal.shape()) {
      throw DimensionError("hierarchical embedding tables must share shape |E| x d/2");
    }
    if (vertical.rows() == 0) throw DimensionError("hierarchical embedding tables need at least one row");
  }
};

/// Table row for a 1-based count; counts beyond |E| saturate at the last row.
inline std::size_t embed_row(std::size_t count, std::size_t table_rows) { return std::min(count, table_rows) - 1; }

/// Dense S with its structural occupancy (row 0 holds the leaves).
template <typename T>
struct Interpolated {
  Tensor<T> values;                    // (m+1) × n × d
  std::vector<std::uint8_t> occupancy; // (m+1) × n

  std::size_t rows() const { return values.dim(0); }
  std::size_t cols() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
  bool occupied(std::size_t r, std::size_t j) const { return occupancy[r * cols() + j] != 0; }
};

namespace detail {

template <typename T>
void require_tree_inputs(const Tensor<T>& leaves, const Tensor<T>& nodes, const BranchSets& bs, const char* op) {
  if (leaves.rank() != 2 || nodes.rank() != 2 || leaves.rows() != bs.num_leaves() || nodes.rows() != bs.num_nodes() ||
      leaves.cols() != nodes.cols()) {
    throw DimensionError(std::string(op) + ": leaves " + shape_string(leaves.shape()) + " / nodes " +
                         shape_string(nodes.shape()) + " vs tree with " + std::to_string(bs.num_leaves()) +
                         " leaves and " + std::to_string(bs.num_nodes()) + " nodes");
  }
}

}  // namespace detail

/// F: row 0 = leaves; row i+1 column j = node i when leaf j is in its subtree, else 0.
template <typename T>
Interpolated<T> interpolate(const Tensor<T>& leaves, const Tensor<T>& nodes, const TreeEncoding& enc) {
  const BranchSets bs(enc);
  detail::require_tree_inputs(leaves, nodes, bs, "interpolate");
  const std::size_t n = bs.num_leaves(), m = bs.num_nodes(), d = leaves.cols();
  std::vector<T> v((m + 1) * n * d, T(0));
  std::vector<std::uint8_t> occ((m + 1) * n, 0);
  const auto lv = leaves.values(), nv = nodes.values();
  std::copy(lv.begin(), lv.end(), v.begin());
  std::fill_n(occ.begin(), n, 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = bs.span_begin(i); j < bs.span_end(i); ++j) {
      std::copy_n(nv.data() + i * d, d, v.data() + ((i + 1) * n + j) * d);
      occ[(i + 1) * n + j] = 1;
    }
  }
  return {Tensor<T>::from_data({m + 1, n, d}, std::move(v)), std::move(occ)};
}

/// E: [e^v_{|V|}; e^h_{|H|}] on occupied node rows, zero on the leaf row and elsewhere.
template <typename T>
Tensor<T> build_hier_embeddings(const TreeEncoding& enc, const HierEmbedTable<T>& table) {
  table.validate();
  const BranchSets bs(enc);
  const std::size_t n = bs.num_leaves(), m = bs.num_nodes(), h = table.half_width(), d = 2 * h, rows = table.size();
  std::vector<T> v((m + 1) * n * d, T(0));
  const auto ev = table.vertical.values(), eh = table.horizontal.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = bs.span_begin(i); j < bs.span_end(i); ++j) {
      T* dst = v.data() + ((i + 1) * n + j) * d;
      std::copy_n(ev.data() + embed_row(bs.vertical(i, j), rows) * h, h, dst);
      std::copy_n(eh.data() + embed_row(bs.horizontal(i, j), rows) * h, h, dst + h);
    }
  }
  return Tensor<T>::from_data({m + 1, n, d}, std::move(v));
}

/// S + E, keeping S's occupancy.
template <typename T>
Interpolated<T> add_embeddings(const Interpolated<T>& s, const Tensor<T>& e) {
  if (s.values.shape() != e.shape()) {
    throw DimensionError("add_embeddings: " + shape_string(s.values.shape()) + " vs " + shape_string(e.shape()));
  }
  std::vector<T> v(s.values.vec());
  const auto ev = e.values();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += ev[k];
  return {Tensor<T>::from_data(s.values.shape(), std::move(v)), s.occupancy};
}

/// U: for every occupied (i, j), the mean of the leaf row and every node row
/// on the branch from node i down to leaf j, via running sums along each
/// root-to-leaf path. Unoccupied entries are exactly 0; the leaf row is dropped.
template <typename T>
Tensor<T> upward_cumavg(const Interpolated<T>& s, const TreeEncoding& enc) {
  const BranchSets bs(enc);
  const std::size_t n = bs.num_leaves(), m = bs.num_nodes();
  if (s.values.rank() != 3 || s.rows() != m + 1 || s.cols() != n) {
    throw DimensionError("upward_cumavg: S " + shape_string(s.values.shape()) + " does not match the tree");
  }
  const std::size_t d = s.width();
  const auto sv = s.values.values();
  std::vector<T> out(m * n * d, T(0));
  std::vector<T> run(d);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy_n(sv.data() + j * d, d, run.begin());
    const auto path = bs.path(j);
    for (std::size_t p = 0; p < path.size(); ++p) {
      const std::size_t i = path[p];
      const T* x = sv.data() + ((i + 1) * n + j) * d;
      const T inv = T(1) / T(p + 2);
      T* dst = out.data() + (i * n + j) * d;
      for (std::size_t k = 0; k < d; ++k) {
        run[k] += x[k];
        dst[k] = run[k] * inv;
      }
    }
  }
  return Tensor<T>::from_data({m, n, d}, std::move(out));
}

/// V: node i = (1/|span_i|) Σ_{j in span_i} w_j · Ŝ_ij.
template <typename T>
Tensor<T> weighted_aggregate(const Tensor<T>& shat, const Tensor<T>& w, const TreeEncoding& enc) {
  const BranchSets bs(enc);
  const std::size_t n = bs.num_leaves(), m = bs.num_nodes();
  if (shat.rank() != 3 || shat.dim(0) != m || shat.dim(1) != n || w.size() != n) {
    throw DimensionError("weighted_aggregate: Ŝ " + shape_string(shat.shape()) + ", w " + shape_string(w.shape()) +
                         " do not match the tree");
  }
  const std::size_t d = shat.dim(2);
  const auto sv = shat.values(), wv = w.values();
  std::vector<T> out(m * d, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t cnt = bs.leaf_count(i);
    if (cnt == 0) throw InvalidTreeError("node " + std::to_string(i) + " covers no leaves");
    for (std::size_t j = bs.span_begin(i); j < bs.span_end(i); ++j) {
      const T* x = sv.data() + (i * n + j) * d;
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += wv[j] * x[k];
    }
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] /= T(cnt);
  }
  return Tensor<T>::from_data({m, d}, std::move(out));
}

/// Fused V(U(F(L, N) [+ E]), w) with reverse-mode support for L, N, w and
/// both embedding tables. Pass `table == nullptr` to leave out E.
template <typename T>
Tensor<T> accumulate(const Tensor<T>& leaves, const Tensor<T>& nodes, const BranchSets& bs, const Tensor<T>& w,
                     const HierEmbedTable<T>* table) {
  detail::require_tree_inputs(leaves, nodes, bs, "accumulate");
  const std::size_t n = bs.num_leaves(), m = bs.num_nodes(), d = leaves.cols();
  if (w.size() != n) throw DimensionError("accumulate: w " + shape_string(w.shape()) + " for " + std::to_string(n) + " leaves");
  std::size_t rows = 0, h = 0;
  if (table) {
    table->validate();
    rows = table->size();
    h = table->half_width();
    if (2 * h != d) {
      throw DimensionError("accumulate: embedding width 2x" + std::to_string(h) + " vs model width " + std::to_string(d));
    }
  }

  // x_{t,j} = n_t (+ E_{t,j}); Ŝ_{t,j} = (l_j + Σ_{path up to t} x) / (p + 2)
  auto branch_add = [&](T* run, const T* nv, const T* ev, const T* eh, std::size_t t, std::size_t p, std::size_t j) {
    const T* nt = nv + t * d;
    for (std::size_t k = 0; k < d; ++k) run[k] += nt[k];
    if (table) {
      const T* v = ev + embed_row(p + 1, rows) * h;
      const T* hz = eh + embed_row(j - bs.span_begin(t) + 1, rows) * h;
      for (std::size_t k = 0; k < h; ++k) {
        run[k] += v[k];
        run[h + k] += hz[k];
      }
    }
  };

  const T* lv = leaves.values().data();
  const T* nv = nodes.values().data();
  const T* wv = w.values().data();
  const T* ev = table ? table->vertical.values().data() : nullptr;
  const T* eh = table ? table->horizontal.values().data() : nullptr;
  std::vector<T> out(m * d, T(0));
  std::vector<T> run(d);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy_n(lv + j * d, d, run.begin());
    const auto path = bs.path(j);
    for (std::size_t p = 0; p < path.size(); ++p) {
      const std::size_t t = path[p];
      branch_add(run.data(), nv, ev, eh, t, p, j);
      const T coef = wv[j] / (T(p + 2) * T(bs.leaf_count(t)));
      T* dst = out.data() + t * d;
      for (std::size_t k = 0; k < d; ++k) dst[k] += coef * run[k];
    }
  }
  count_mul_add(bs.pair_count() * (table ? 3 : 2) * d + bs.pair_count());

  std::vector<Tensor<T>> inputs{leaves, nodes, w};
  if (table) {
    inputs.push_back(table->vertical);
    inputs.push_back(table->horizontal);
  }
  const bool with_table = table != nullptr;
  return make_result<T>({m, d}, std::move(out), inputs, [bs, n, d, h, rows, with_table](Node<T>& self) {
    const T* lv = self.parents[0]->value.data();
    const T* nv = self.parents[1]->value.data();
    const T* wv = self.parents[2]->value.data();
    const T* ev = with_table ? self.parents[3]->value.data() : nullptr;
    const T* eh = with_table ? self.parents[4]->value.data() : nullptr;
    auto* gl = parent_grad(self, 0);
    auto* gn = parent_grad(self, 1);
    auto* gw = parent_grad(self, 2);
    auto* gv = with_table ? parent_grad(self, 3) : nullptr;
    auto* gh = with_table ? parent_grad(self, 4) : nullptr;
    const T* gout = self.grad.data();

    std::vector<T> run(d), acc(d);
    for (std::size_t j = 0; j < n; ++j) {
      const auto path = bs.path(j);
      // forward replay for dL/dw_j
      if (gw) {
        std::copy_n(lv + j * d, d, run.begin());
        T dw = 0;
        for (std::size_t p = 0; p < path.size(); ++p) {
          const std::size_t t = path[p];
          const T* nt = nv + t * d;
          for (std::size_t k = 0; k < d; ++k) run[k] += nt[k];
          if (with_table) {
            const T* v = ev + embed_row(p + 1, rows) * h;
            const T* hz = eh + embed_row(j - bs.span_begin(t) + 1, rows) * h;
            for (std::size_t k = 0; k < h; ++k) {
              run[k] += v[k];
              run[h + k] += hz[k];
            }
          }
          const T coef = T(1) / (T(p + 2) * T(bs.leaf_count(t)));
          T dot = 0;
          for (std::size_t k = 0; k < d; ++k) dot += gout[t * d + k] * run[k];
          dw += coef * dot;
        }
        (*gw)[j] += dw;
      }
      // top-down: every x on the branch feeds all running sums above it
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t p = path.size(); p-- > 0;) {
        const std::size_t t = path[p];
        const T coef = wv[j] / (T(p + 2) * T(bs.leaf_count(t)));
        for (std::size_t k = 0; k < d; ++k) acc[k] += coef * gout[t * d + k];
        if (gn)
          for (std::size_t k = 0; k < d; ++k) (*gn)[t * d + k] += acc[k];
        if (gv) {
          T* dst = gv->data() + embed_row(p + 1, rows) * h;
          for (std::size_t k = 0; k < h; ++k) dst[k] += acc[k];
        }
        if (gh) {
          T* dst = gh->data() + embed_row(j - bs.span_begin(t) + 1, rows) * h;
          for (std::size_t k = 0; k < h; ++k) dst[k] += acc[h + k];
        }
      }
      if (gl)
        for (std::size_t k = 0; k < d; ++k) (*gl)[j * d + k] += acc[k];
    }
  });
}

template <typename T>
Tensor<T> accumulate(const Tensor<T>& leaves, const Tensor<T>& nodes, const TreeEncoding& enc, const Tensor<T>& w,
                     const HierEmbedTable<T>* table, bool use_embeddings) {
  return accumulate(leaves, nodes, BranchSets(enc), w, use_embeddings ? table : nullptr);
}

}  // namespace treeattn

#endif  // TREEATTN_ACCUMULATION_HPP
