// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_VERIFY_CHECKS_HPP
#define TREEATTN_VERIFY_CHECKS_HPP

// Seeded property sweeps shared by the acceptance runner and the CLI. Each
// returns the worst observed discrepancy; callers compare against tolerances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "treeattn/accumulation.hpp"
#include "treeattn/attention.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/tree.hpp"
#include "treeattn/verify/random_tree.hpp"
#include "treeattn/verify/set_oracles.hpp"

namespace treeattn::verify {

struct SweepResult {
  double worst = 0.0;       // largest discrepancy seen
  std::size_t cases = 0;
  std::size_t failures = 0;  // cases that broke an exact property
  std::string first_failure;
};

namespace detail {

inline double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Tensor<double> random_matrix(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

}  // namespace detail

/// decode(encode(t)) == t and validate() is clean, over seeded random trees.
inline SweepResult roundtrip_sweep(std::size_t count, std::size_t max_leaves, std::size_t max_arity, std::uint64_t seed) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> leaves(1, max_leaves);
  for (std::size_t k = 0; k < count; ++k) {
    const ParseTree t = random_tree(leaves(rng), max_arity, rng);
    const TreeEncoding enc = encode_tree(t);
    ++r.cases;
    bool ok = validate(enc).empty();
    if (ok) {
      try {
        ok = decode_tree(enc) == t;
      } catch (const Error&) {
        ok = false;
      }
    }
    if (!ok && r.failures++ == 0) r.first_failure = to_bracketed(t);
  }
  r.worst = static_cast<double>(r.failures);
  return r;
}

/// Hand-built broken encodings (multi-parent, non-contiguous span, missing
/// self-membership, two roots); counts those that validate() fails to flag.
inline SweepResult invalid_encodings_sweep() {
  SweepResult r;
  std::vector<std::pair<std::string, TreeEncoding>> bad;
  {
    auto enc = encode_tree(parse_bracketed("(r (a x y) (b z))"));
    enc.rules[1].push_back(Element::leaf(1));
    std::sort(enc.rules[1].begin(), enc.rules[1].end());
    bad.emplace_back("multi-parent", enc);
  }
  {
    auto enc = encode_tree(parse_bracketed("(r (a x) y z)"));
    enc.rules[0].push_back(Element::leaf(2));
    std::sort(enc.rules[0].begin(), enc.rules[0].end());
    bad.emplace_back("non-contiguous", enc);
  }
  {
    auto enc = encode_tree(parse_bracketed("(g c (h d e))"));
    enc.rules[0].erase(std::find(enc.rules[0].begin(), enc.rules[0].end(), Element::node(0)));
    bad.emplace_back("self-membership", enc);
  }
  bad.emplace_back("two-roots", TreeEncoding{{"a", "b"},
                                             {"X", "Y"},
                                             {{Element::node(0), Element::leaf(0)}, {Element::node(1), Element::leaf(1)}}});
  for (const auto& [name, enc] : bad) {
    ++r.cases;
    if (validate(enc).empty() && r.failures++ == 0) r.first_failure = name;
  }
  r.worst = static_cast<double>(r.failures);
  return r;
}

/// Staged and fused accumulation kernels against the set-enumeration oracles.
inline SweepResult kernel_oracle_sweep(std::size_t count, std::size_t max_leaves, std::size_t max_d, std::uint64_t seed) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const TreeEncoding enc = encode_tree(random_tree(1 + rng() % max_leaves, 4, rng));
    const std::size_t d = 2 * (1 + rng() % std::max<std::size_t>(max_d / 2, 1));
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), rows = 1 + rng() % 5;
    const auto l = detail::random_matrix({n, d}, rng), nv = detail::random_matrix({m, d}, rng);
    const auto w = detail::random_matrix({n}, rng);
    const auto table = HierEmbedTable<double>::create(rows, d / 2, rng, 1.0);

    const auto s = treeattn::interpolate(l, nv, enc);
    const auto s_ref = interpolate(l.vec(), nv.vec(), enc, d);
    const auto e = build_hier_embeddings(enc, table);
    const auto e_ref = hier_embeddings(enc, table.vertical.vec(), table.horizontal.vec(), rows, d);
    const auto shat = treeattn::upward_cumavg(add_embeddings(s, e), enc);
    std::vector<double> se_ref(s_ref);
    for (std::size_t q = 0; q < se_ref.size(); ++q) se_ref[q] += e_ref[q];
    const auto shat_ref = upward_cumavg(se_ref, enc, d);
    const auto nbar = treeattn::weighted_aggregate(shat, w, enc);
    const auto nbar_ref = weighted_aggregate(shat_ref, w.vec(), enc, d);
    const auto fused = accumulate(l, nv, enc, w, &table, true);
    const double worst = std::max({detail::max_abs_diff(s.values.values(), s_ref),
                                   detail::max_abs_diff(e.values(), e_ref),
                                   detail::max_abs_diff(shat.values(), shat_ref),
                                   detail::max_abs_diff(nbar.values(), nbar_ref),
                                   detail::max_abs_diff(fused.values(), nbar_ref)});
    r.worst = std::max(r.worst, worst);
    ++r.cases;
  }
  return r;
}

struct GhValues {
  std::vector<double> shat;  // 2 × 3, rows h then g
  double nbar_h = 0.0, nbar_g = 0.0, fused_h = 0.0, fused_g = 0.0;
};

/// Tree (g c (h d e)) with leaves (1, 2, 3), h = 5, g = 4, w = 1, width 1.
inline GhValues gh_fixture() {
  const TreeEncoding enc = encode_tree(parse_bracketed("(g c (h d e))"));
  const auto l = Tensor<double>::from_data({3, 1}, {1, 2, 3});
  const auto n = Tensor<double>::from_data({2, 1}, {5, 4});
  const auto w = Tensor<double>::full({3}, 1.0);
  const auto shat = treeattn::upward_cumavg(treeattn::interpolate(l, n, enc), enc);
  const auto nbar = treeattn::weighted_aggregate(shat, w, enc);
  const auto fused = accumulate(l, n, enc, w, static_cast<const HierEmbedTable<double>*>(nullptr), false);
  return {shat.vec(), nbar.at(0), nbar.at(1), fused.at(0), fused.at(1)};
}

/// Encoder attention under the subtree mask: worst |weight| at a disallowed
/// position and worst |row sum − 1|. Cross-attention rows are folded into
/// the row-sum figure.
struct MaskSweep {
  double worst_masked = 0.0;
  double worst_row = 0.0;
  double worst_cross_row = 0.0;
  std::size_t cases = 0;
};

inline MaskSweep masking_sweep(std::size_t count, std::size_t max_leaves, std::uint64_t seed) {
  MaskSweep r;
  std::mt19937_64 rng(seed);
  const std::size_t d = 8, heads = 2;
  auto attn = AttentionParams<double>::create(d, heads, true, rng);
  auto cross = AttentionParams<double>::create(d, heads, true, rng);
  auto ffn = FfnParams<double>::create(d, 2 * d, rng);
  auto table = HierEmbedTable<double>::create(5, d / 2, rng, 0.5);
  for (std::size_t k = 0; k < count; ++k) {
    const TreeEncoding enc = encode_tree(random_tree(1 + rng() % max_leaves, 4, rng));
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), a = n + m;
    const auto l = detail::random_matrix({n, d}, rng), nv = detail::random_matrix({m, d}, rng);
    std::vector<AttentionRecord> trace;
    const ForwardContext ctx{nullptr, &trace};
    encoder_tree_self_attention(l, nv, enc, attn, ffn, &table, EncoderFlags{}, ctx);
    const auto allowed = subtree_mask(enc);
    for (const auto& rec : trace) {
      for (std::size_t h = 0; h < rec.heads; ++h)
        for (std::size_t i = 0; i < a; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < a; ++j) {
            const double wgt = rec.weights[(h * a + i) * a + j];
            if (!allowed[i * a + j]) r.worst_masked = std::max(r.worst_masked, std::abs(wgt));
            row += wgt;
          }
          r.worst_row = std::max(r.worst_row, std::abs(row - 1.0));
        }
    }
    trace.clear();
    const std::size_t t = 1 + rng() % 4;
    decoder_cross_attention(detail::random_matrix({t, d}, rng), l, nv, BranchSets(enc), cross, &table, ctx);
    for (const auto& rec : trace)
      for (std::size_t h = 0; h < rec.heads; ++h)
        for (std::size_t i = 0; i < rec.rows; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < rec.cols; ++j) row += rec.weights[(h * rec.rows + i) * rec.cols + j];
          r.worst_cross_row = std::max(r.worst_cross_row, std::abs(row - 1.0));
        }
    ++r.cases;
  }
  return r;
}

}  // namespace treeattn::verify

#endif  // TREEATTN_VERIFY_CHECKS_HPP
