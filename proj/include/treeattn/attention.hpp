// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_ATTENTION_HPP
#define TREEATTN_ATTENTION_HPP

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "treeattn/accumulation.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/error.hpp"
#include "treeattn/ops.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

template <typename T>
Tensor<T> uniform_parameter(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(shape_size(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> normal_parameter(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(shape_size(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

/// Projections of one attention block. Projections carry no bias; `u` is
/// the w-producing vector and exists only in tree-based blocks.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> u;
  std::size_t heads = 1;
  double dropout = 0.0;

  std::size_t width() const { return wq.rows(); }
  bool tree_based() const { return u.defined(); }

  static AttentionParams create(std::size_t d, std::size_t heads, bool with_u, std::mt19937_64& rng) {
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionParams p;
    p.wq = uniform_parameter<T>({d, d}, bound, rng);
    p.wk = uniform_parameter<T>({d, d}, bound, rng);
    p.wv = uniform_parameter<T>({d, d}, bound, rng);
    p.wo = uniform_parameter<T>({d, d}, bound, rng);
    if (with_u) p.u = uniform_parameter<T>({d, 1}, bound, rng);
    p.heads = heads;
    return p;
  }

  void validate() const {
    const std::size_t d = wq.rows();
    for (const auto* t : {&wq, &wk, &wv, &wo}) {
      if (t->rank() != 2 || t->rows() != d || t->cols() != d) throw DimensionError("attention projections must be d x d");
    }
    if (heads == 0 || d % heads != 0) throw DimensionError("width " + std::to_string(d) + " not divisible by heads");
    if (u.defined() && u.size() != d) throw DimensionError("u must have d entries");
  }
};

/// FFN and the two layer norms of the layer function φ.
template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  double dropout = 0.0;

  static FfnParams create(std::size_t d, std::size_t d_ffn, std::mt19937_64& rng) {
    FfnParams p;
    p.w1 = uniform_parameter<T>({d, d_ffn}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    p.b1 = Tensor<T>::parameter({d_ffn}, std::vector<T>(d_ffn, T(0)));
    p.w2 = uniform_parameter<T>({d_ffn, d}, 1.0 / std::sqrt(static_cast<double>(d_ffn)), rng);
    p.b2 = Tensor<T>::parameter({d}, std::vector<T>(d, T(0)));
    p.ln1_gain = Tensor<T>::parameter({d}, std::vector<T>(d, T(1)));
    p.ln1_bias = Tensor<T>::parameter({d}, std::vector<T>(d, T(0)));
    p.ln2_gain = Tensor<T>::parameter({d}, std::vector<T>(d, T(1)));
    p.ln2_bias = Tensor<T>::parameter({d}, std::vector<T>(d, T(0)));
    return p;
  }
};

/// Post-softmax weights captured during a forward pass. Keys and queries are
/// ordered nodes first; `node_keys` / `node_queries` give the split points.
struct AttentionRecord {
  std::string site;
  std::size_t heads = 0, rows = 0, cols = 0;
  std::size_t node_queries = 0, node_keys = 0;
  std::vector<double> weights;  // heads × rows × cols
};

/// Per-pass state: dropout randomness (none when rng is null) and an
/// optional sink for attention weights.
struct ForwardContext {
  std::mt19937_64* rng = nullptr;
  std::vector<AttentionRecord>* trace = nullptr;
};

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.rng || rate <= 0.0) return x;
  return dropout(x, rate, *ctx.rng);
}

struct EncoderFlags {
  bool use_hier_embeddings = true;
  bool use_subtree_mask = true;
  // Leaf queries skip the node keys that the subtree mask removes anyway.
  bool skip_masked_leaf_queries = false;
};

/// Subtree mask over [nodes; leaves]: node i sees R(i), a leaf sees every leaf.
inline Mask build_subtree_mask(const TreeEncoding& enc) {
  const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
  Mask mask(m + n, m + n);
  for (std::size_t i = 0; i < m; ++i)
    for (const auto& e : enc.rules[i]) mask.set(i, e.is_node() ? e.index : m + e.index);
  for (std::size_t q = m; q < m + n; ++q)
    for (std::size_t k = m; k < m + n; ++k) mask.set(q, k);
  return mask;
}

namespace detail {

template <typename T>
std::vector<Tensor<T>> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t dh = x.cols() / heads;
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < heads; ++h) out.push_back(slice(x, 1, h * dh, dh));
  return out;
}

template <typename T>
std::vector<Tensor<T>> head_logits(const Tensor<T>& qp, const Tensor<T>& kp, std::size_t heads) {
  const std::size_t dh = qp.cols() / heads;
  const T s = T(1) / std::sqrt(static_cast<T>(dh));
  auto qs = split_heads(qp, heads), ks = split_heads(kp, heads);
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < heads; ++h) out.push_back(scale(matmul_nt(qs[h], ks[h]), s));
  return out;
}

template <typename T>
void record(const ForwardContext& ctx, std::string site, const std::vector<Tensor<T>>& probs, std::size_t node_queries,
            std::size_t node_keys) {
  if (!ctx.trace) return;
  AttentionRecord r;
  r.site = std::move(site);
  r.heads = probs.size();
  r.rows = probs[0].rows();
  r.cols = probs[0].cols();
  r.node_queries = node_queries;
  r.node_keys = node_keys;
  for (const auto& p : probs)
    for (T v : p.values()) r.weights.push_back(static_cast<double>(v));
  ctx.trace->push_back(std::move(r));
}

/// softmax(logits_h [masked]) · values_h per head, heads concatenated.
template <typename T>
Tensor<T> attend(const std::vector<Tensor<T>>& logits, const Tensor<T>& values, const Mask* mask,
                 const AttentionParams<T>& p, const ForwardContext& ctx, const char* site, std::size_t node_queries,
                 std::size_t node_keys) {
  const auto vs = split_heads(values, p.heads);
  std::vector<Tensor<T>> probs, outs;
  for (std::size_t h = 0; h < p.heads; ++h) {
    std::vector<std::size_t> dead;
    probs.push_back(mask ? masked_softmax_rows(logits[h], *mask, &dead) : softmax_rows(logits[h]));
    if (!dead.empty()) throw NumericError(std::string(site) + ": query row " + std::to_string(dead[0]) + " has no visible key");
  }
  record(ctx, site, probs, node_queries, node_keys);
  for (std::size_t h = 0; h < p.heads; ++h) outs.push_back(matmul(maybe_dropout(probs[h], p.dropout, ctx), vs[h]));
  return p.heads == 1 ? outs[0] : concat(outs, 1);
}

template <typename T>
Tensor<T> leaf_weights(const Tensor<T>& leaves, const Tensor<T>& u) {
  return reshape(matmul(leaves, u), {leaves.rows()});
}

template <typename T>
void require_width(const Tensor<T>& x, std::size_t d, const char* what) {
  if (x.rank() != 2 || x.cols() != d) {
    throw DimensionError(std::string(what) + " " + shape_string(x.shape()) + " does not have width " + std::to_string(d));
  }
}

}  // namespace detail

/// Per-head scaled affinities (q W_Q)(k W_K)^T / sqrt(d/h), stacked to h × a × b.
template <typename T>
Tensor<T> affinity(const Tensor<T>& q_in, const Tensor<T>& k_in, const AttentionParams<T>& p) {
  p.validate();
  detail::require_width(q_in, p.width(), "queries");
  detail::require_width(k_in, p.width(), "keys");
  return stack(detail::head_logits(matmul(q_in, p.wq), matmul(k_in, p.wk), p.heads));
}

/// φ(O, Q) = LN(FFN(LN(O + Q)) + LN(O + Q)), FFN = W2 relu(W1 x + b1) + b2.
template <typename T>
Tensor<T> transformer_layer_phi(const Tensor<T>& o, const Tensor<T>& q, const FfnParams<T>& f,
                                const ForwardContext& ctx = {}) {
  if (o.shape() != q.shape()) {
    throw DimensionError("phi: output " + shape_string(o.shape()) + " vs residual " + shape_string(q.shape()));
  }
  auto x = layer_norm(add(maybe_dropout(o, f.dropout, ctx), q), f.ln1_gain, f.ln1_bias);
  auto hidden = relu(add_bias(matmul(x, f.w1), f.b1));
  auto y = add_bias(matmul(hidden, f.w2), f.b2);
  return layer_norm(add(maybe_dropout(y, f.dropout, ctx), x), f.ln2_gain, f.ln2_bias);
}

/// Baseline multi-head attention softmax(A)(V W_V) W_O; `causal` hides j > i.
template <typename T>
Tensor<T> standard_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                             const AttentionParams<T>& p, bool causal, const ForwardContext& ctx = {}) {
  p.validate();
  detail::require_width(q_in, p.width(), "queries");
  detail::require_width(k_in, p.width(), "keys");
  detail::require_width(v_in, p.width(), "values");
  if (k_in.rows() != v_in.rows()) throw DimensionError("keys and values differ in length");
  if (causal && q_in.rows() != k_in.rows()) throw DimensionError("causal attention needs as many queries as keys");
  const auto logits = detail::head_logits(matmul(q_in, p.wq), matmul(k_in, p.wk), p.heads);
  const Mask mask = causal ? Mask::causal(q_in.rows()) : Mask();
  auto att = detail::attend(logits, matmul(v_in, p.wv), causal ? &mask : nullptr, p, ctx, causal ? "self-causal" : "self",
                            0, 0);
  return matmul(att, p.wo);
}

template <typename T>
struct TreeStates {
  Tensor<T> leaves;  // n × d
  Tensor<T> nodes;   // m × d
};

/// Tree self-attention before φ: rows [N; L] of Att W_O. Queries and keys
/// are [N; L]; values are [accumulate(L W_V, N W_V, w = L u_s); L W_V].
template <typename T>
Tensor<T> tree_self_attention(const Tensor<T>& leaves, const Tensor<T>& nodes, const BranchSets& bs,
                              const Mask& subtree_mask, const AttentionParams<T>& p, const HierEmbedTable<T>* table,
                              const EncoderFlags& flags, const ForwardContext& ctx = {}) {
  p.validate();
  const std::size_t d = p.width(), n = leaves.rows(), m = nodes.defined() ? nodes.rows() : 0;
  detail::require_width(leaves, d, "leaves");
  if (m > 0) detail::require_width(nodes, d, "nodes");
  if (bs.num_leaves() != n || bs.num_nodes() != m) throw DimensionError("encoder input does not match the tree");
  if (!p.tree_based()) throw ConfigError("encoder tree attention needs u_s");

  const Tensor<T> lv = matmul(leaves, p.wv);
  if (m == 0) {
    const auto logits = detail::head_logits(matmul(leaves, p.wq), matmul(leaves, p.wk), p.heads);
    return matmul(detail::attend(logits, lv, static_cast<const Mask*>(nullptr), p, ctx, "encoder", 0, 0), p.wo);
  }

  const Tensor<T> w = detail::leaf_weights(leaves, p.u);
  const Tensor<T> nbar = accumulate(lv, matmul(nodes, p.wv), bs, w, flags.use_hier_embeddings ? table : nullptr);
  const Tensor<T> values = concat<T>({nbar, lv}, 0);
  const Tensor<T> x = concat<T>({nodes, leaves}, 0);
  const Tensor<T> kp = matmul(x, p.wk);

  Tensor<T> att;
  if (flags.use_subtree_mask && flags.skip_masked_leaf_queries) {
    const auto node_logits = detail::head_logits(matmul(nodes, p.wq), kp, p.heads);
    Mask node_rows(m, m + n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < m + n; ++k) node_rows.set(i, k, subtree_mask(i, k));
    auto att_n = detail::attend(node_logits, values, &node_rows, p, ctx, "encoder-nodes", m, m);
    const auto leaf_logits = detail::head_logits(matmul(leaves, p.wq), slice(kp, 0, m, n), p.heads);
    auto att_l = detail::attend(leaf_logits, lv, static_cast<const Mask*>(nullptr), p, ctx, "encoder-leaves", 0, 0);
    att = concat<T>({att_n, att_l}, 0);
  } else {
    if (flags.use_subtree_mask && (subtree_mask.rows() != m + n || subtree_mask.cols() != m + n)) {
      throw DimensionError("subtree mask does not match the tree");
    }
    const auto logits = detail::head_logits(matmul(x, p.wq), kp, p.heads);
    att = detail::attend(logits, values, flags.use_subtree_mask ? &subtree_mask : nullptr, p, ctx, "encoder", m, m);
  }
  return matmul(att, p.wo);
}

/// One encoder layer: φ over the tree self-attention, shared FFN for nodes and leaves.
template <typename T>
TreeStates<T> encoder_tree_self_attention(const Tensor<T>& leaves, const Tensor<T>& nodes, const BranchSets& bs,
                                          const Mask& subtree_mask, const AttentionParams<T>& p, const FfnParams<T>& f,
                                          const HierEmbedTable<T>* table, const EncoderFlags& flags,
                                          const ForwardContext& ctx = {}) {
  const Tensor<T> o = tree_self_attention(leaves, nodes, bs, subtree_mask, p, table, flags, ctx);
  const std::size_t n = leaves.rows(), m = bs.num_nodes();
  if (m == 0) return {transformer_layer_phi(o, leaves, f, ctx), nodes};
  const Tensor<T> out = transformer_layer_phi(o, concat<T>({nodes, leaves}, 0), f, ctx);
  return {slice(out, 0, m, n), slice(out, 0, 0, m)};
}

template <typename T>
TreeStates<T> encoder_tree_self_attention(const Tensor<T>& leaves, const Tensor<T>& nodes, const TreeEncoding& enc,
                                          const AttentionParams<T>& p, const FfnParams<T>& f,
                                          const HierEmbedTable<T>* table, const EncoderFlags& flags,
                                          const ForwardContext& ctx = {}) {
  const BranchSets bs = enc.num_nodes() == 0 ? BranchSets::leaves_only(enc.num_leaves()) : BranchSets(enc);
  return encoder_tree_self_attention(leaves, nodes, bs, build_subtree_mask(enc), p, f, table, flags, ctx);
}

/// Target queries over source [N; L] with no mask; values built with w = L u_c.
/// Returns Att W_O (the caller applies φ).
template <typename T>
Tensor<T> decoder_cross_attention(const Tensor<T>& q, const Tensor<T>& leaves, const Tensor<T>& nodes,
                                  const BranchSets& bs, const AttentionParams<T>& p, const HierEmbedTable<T>* table,
                                  const ForwardContext& ctx = {}) {
  p.validate();
  const std::size_t d = p.width(), m = nodes.defined() ? nodes.rows() : 0;
  detail::require_width(q, d, "queries");
  detail::require_width(leaves, d, "leaves");
  if (!p.tree_based()) throw ConfigError("decoder tree cross-attention needs u_c");
  if (bs.num_leaves() != leaves.rows() || bs.num_nodes() != m) throw DimensionError("cross-attention source does not match the tree");
  const Tensor<T> lv = matmul(leaves, p.wv);
  Tensor<T> keys = leaves, values = lv;
  if (m > 0) {
    const Tensor<T> nbar = accumulate(lv, matmul(nodes, p.wv), bs, detail::leaf_weights(leaves, p.u), table);
    keys = concat<T>({nodes, leaves}, 0);
    values = concat<T>({nbar, lv}, 0);
  }
  const auto logits = detail::head_logits(matmul(q, p.wq), matmul(keys, p.wk), p.heads);
  auto att = detail::attend(logits, values, static_cast<const Mask*>(nullptr), p, ctx, "cross", 0, m);
  return matmul(att, p.wo);
}

}  // namespace treeattn

#endif  // TREEATTN_ATTENTION_HPP
