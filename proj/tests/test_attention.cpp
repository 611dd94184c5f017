// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "treeattn/attention.hpp"
#include "treeattn/gradcheck.hpp"
#include "treeattn/verify/set_oracles.hpp"

using namespace treeattn;
using treeattn::testing::gh_tree;
using treeattn::testing::random_tensor;
using treeattn::testing::random_tree;
using T = Tensor<double>;

namespace {

using Mat = std::vector<double>;

Mat mm(const Mat& a, const Mat& b, std::size_t p, std::size_t q, std::size_t r) {
  Mat c(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < q; ++k) c[i * r + j] += a[i * q + k] * b[k * r + j];
  return c;
}

// Loop-level multi-head attention: softmax over allowed keys per head, then W_O.
Mat mha_oracle(const Mat& q, const Mat& k, const Mat& v, std::size_t a, std::size_t b, std::size_t d,
               const AttentionParams<double>& p, const std::vector<bool>* allowed) {
  const Mat qp = mm(q, p.wq.vec(), a, d, d), kp = mm(k, p.wk.vec(), b, d, d), vp = mm(v, p.wv.vec(), b, d, d);
  const std::size_t dh = d / p.heads;
  Mat out(a * d, 0.0);
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (std::size_t i = 0; i < a; ++i) {
      std::vector<double> s(b, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < b; ++j) {
        if (allowed && !(*allowed)[i * b + j]) continue;
        for (std::size_t c = 0; c < dh; ++c) s[j] += qp[i * d + h * dh + c] * kp[j * d + h * dh + c];
        s[j] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < b; ++j) {
        s[j] = (allowed && !(*allowed)[i * b + j]) ? 0.0 : std::exp(s[j] - mx);
        z += s[j];
      }
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i * d + h * dh + c] += s[j] / z * vp[j * d + h * dh + c];
    }
  }
  return mm(out, p.wo.vec(), a, d, d);
}

double max_abs_diff(std::span<const double> a, const Mat& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

T identity(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return T::parameter({d, d}, v);
}

AttentionParams<double> identity_params(std::size_t d, std::mt19937_64& rng) {
  AttentionParams<double> p;
  p.wq = identity(d);
  p.wk = identity(d);
  p.wv = identity(d);
  p.wo = identity(d);
  p.u = random_tensor({d, 1}, rng, true);
  return p;
}

struct Layer {
  AttentionParams<double> attn;
  FfnParams<double> ffn;
  HierEmbedTable<double> table;
};

Layer make_layer(std::size_t d, std::size_t heads, std::mt19937_64& rng, std::size_t rows = 6) {
  Layer l{AttentionParams<double>::create(d, heads, true, rng), FfnParams<double>::create(d, 2 * d, rng),
          HierEmbedTable<double>::create(rows, d / 2, rng, 0.5)};
  // non-trivial affine LN parameters exercise their gradients
  for (auto* t : {&l.ffn.ln1_gain, &l.ffn.ln2_gain, &l.ffn.b1})
    for (auto& x : t->mutable_values()) x += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  return l;
}

TreeEncoding permute_nodes(const TreeEncoding& enc, const std::vector<std::size_t>& perm) {
  TreeEncoding out = enc;
  for (std::size_t i = 0; i < enc.num_nodes(); ++i) {
    out.nodes[perm[i]] = enc.nodes[i];
    std::vector<Element> r;
    for (const auto& e : enc.rules[i]) r.push_back(e.is_node() ? Element::node(perm[e.index]) : e);
    std::sort(r.begin(), r.end());
    out.rules[perm[i]] = r;
  }
  return out;
}

}  // namespace

TEST(SubtreeMask, GhRows) {
  const auto enc = encode_tree(gh_tree());
  const Mask m = build_subtree_mask(enc);
  // order: h, g, c, d, e
  const std::vector<std::vector<int>> want{{1, 0, 0, 1, 1}, {1, 1, 1, 1, 1}, {0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(m(i, j), want[i][j] == 1) << i << "," << j;
}

TEST(SubtreeMask, MatchesOracleAndNoEmptyRows) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) {
    const auto enc = encode_tree(random_tree(1 + rng() % 16, 4, rng));
    const Mask m = build_subtree_mask(enc);
    const auto ref = verify::subtree_mask(enc);
    const std::size_t a = enc.num_leaves() + enc.num_nodes();
    for (std::size_t i = 0; i < a; ++i) {
      EXPECT_GT(m.row_count(i), 0u);
      for (std::size_t j = 0; j < a; ++j) ASSERT_EQ(m(i, j), ref[i * a + j]);
    }
  }
}

TEST(Affinity, IdentityGramAndZeroKeys) {
  std::mt19937_64 rng(1);
  const std::size_t d = 3;
  auto p = identity_params(d, rng);
  auto e = T::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto a = affinity(e, e, p);
  EXPECT_EQ(a.shape(), (Shape{1, 3, 3}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.at(i * 3 + j), i == j ? 1 / std::sqrt(3.0) : 0.0, 1e-15);
  auto z = affinity(e, T::zeros({2, 3}), p);
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Affinity, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  const std::size_t d = 8, heads = 2, a = 3, b = 5;
  auto p = AttentionParams<double>::create(d, heads, false, rng);
  auto q = random_tensor({a, d}, rng), k = random_tensor({b, d}, rng);
  auto got = affinity(q, k, p);
  const Mat qp = mm(q.vec(), p.wq.vec(), a, d, d), kp = mm(k.vec(), p.wk.vec(), b, d, d);
  Mat want(heads * a * b, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t c = 0; c < 4; ++c) want[(h * a + i) * b + j] += qp[i * d + h * 4 + c] * kp[j * d + h * 4 + c];
        want[(h * a + i) * b + j] /= 2.0;
      }
  EXPECT_LT(max_abs_diff(got.values(), want), 1e-12);
  EXPECT_THROW(affinity(T::zeros({2, 4}), k, p), DimensionError);
}

TEST(StandardAttention, SingleKeyCausalAndOracle) {
  std::mt19937_64 rng(3);
  const std::size_t d = 8;
  auto p = AttentionParams<double>::create(d, 2, false, rng);
  auto q = random_tensor({3, d}, rng), v = random_tensor({1, d}, rng);
  auto out = standard_attention(q, v, v, p, false);
  const Mat vrow = mm(mm(v.vec(), p.wv.vec(), 1, d, d), p.wo.vec(), 1, d, d);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out.at(i, k), vrow[k], 1e-12);

  auto x = random_tensor({4, d}, rng);
  auto causal = standard_attention(x, x, x, p, true);
  const Mat first = mm(mm(Mat(x.vec().begin(), x.vec().begin() + d), p.wv.vec(), 1, d, d), p.wo.vec(), 1, d, d);
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(causal.at(0, k), first[k], 1e-12);

  std::vector<bool> lower(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) lower[i * 4 + j] = j <= i;
  EXPECT_LT(max_abs_diff(causal.values(), mha_oracle(x.vec(), x.vec(), x.vec(), 4, 4, d, p, &lower)), 1e-12);
  auto k = random_tensor({5, d}, rng);
  EXPECT_LT(max_abs_diff(standard_attention(q, k, k, p, false).values(), mha_oracle(q.vec(), k.vec(), k.vec(), 3, 5, d, p, nullptr)),
            1e-12);
}

TEST(Phi, ZeroOutputShapeAndGradient) {
  std::mt19937_64 rng(5);
  const std::size_t d = 6;
  auto f = FfnParams<double>::create(d, 10, rng);
  auto q = random_tensor({4, d}, rng, true);
  auto zero = T::zeros({4, d});
  auto x = layer_norm(q, f.ln1_gain, f.ln1_bias);
  auto want = layer_norm(add(add_bias(matmul(relu(add_bias(matmul(x, f.w1), f.b1)), f.w2), f.b2), x), f.ln2_gain, f.ln2_bias);
  EXPECT_EQ(transformer_layer_phi(zero, q, f).vec(), want.vec());
  auto o = random_tensor({4, d}, rng, true);
  EXPECT_EQ(transformer_layer_phi(o, q, f).shape(), q.shape());
  EXPECT_THROW(transformer_layer_phi(T::zeros({3, d}), q, f), DimensionError);
  auto c = random_tensor({4, d}, rng);
  auto r = finite_diff_check<double>([&] { return sum(mul(transformer_layer_phi(o, q, f), c)); },
                                     {o, q, f.w1, f.b1, f.w2, f.b2, f.ln1_gain, f.ln1_bias, f.ln2_gain, f.ln2_bias});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(EncoderAttention, MaskedWeightsExactlyZero) {
  std::mt19937_64 rng(6);
  const std::size_t d = 8;
  auto layer = make_layer(d, 2, rng);
  for (int k = 0; k < 100; ++k) {
    const auto enc = encode_tree(random_tree(1 + rng() % 12, 4, rng));
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), a = n + m;
    auto l = random_tensor({n, d}, rng), nv = random_tensor({m, d}, rng);
    std::vector<AttentionRecord> trace;
    ForwardContext ctx{nullptr, &trace};
    encoder_tree_self_attention(l, nv, enc, layer.attn, layer.ffn, &layer.table, EncoderFlags{}, ctx);
    ASSERT_EQ(trace.size(), 1u);
    const auto allowed = verify::subtree_mask(enc);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < a; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < a; ++j) {
          const double wgt = trace[0].weights[(h * a + i) * a + j];
          if (!allowed[i * a + j]) {
            ASSERT_EQ(wgt, 0.0);
          }
          row += wgt;
        }
        ASSERT_NEAR(row, 1.0, 1e-12);
      }
  }
}

TEST(EncoderAttention, SingleRootCompositionOracle) {
  std::mt19937_64 rng(7);
  const std::size_t d = 4, n = 4;
  auto p = identity_params(d, rng);
  auto table = HierEmbedTable<double>::create(3, d / 2, rng, 1.0);
  const auto enc = encode_tree(parse_bracketed("(R a b c d)"));
  auto l = random_tensor({n, d}, rng), root = random_tensor({1, d}, rng);
  const BranchSets bs(enc);
  auto out = tree_self_attention(l, root, bs, build_subtree_mask(enc), p, &table, EncoderFlags{});

  // n̄ = (1/n) Σ_j w_j (l_j + r + [e^v_1; e^h_j]) / 2, w_j = l_j · u
  Mat nbar(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double w = 0;
    for (std::size_t k = 0; k < d; ++k) w += l.at(j, k) * p.u.at(k);
    for (std::size_t k = 0; k < d; ++k) {
      const double e = k < d / 2 ? table.vertical.at(0, k) : table.horizontal.at(std::min<std::size_t>(j, 2), k - d / 2);
      nbar[k] += w * (l.at(j, k) + root.at(0, k) + e) / 2.0 / n;
    }
  }
  // root row: softmax over keys {root, a..d} of x_root · x_key / sqrt(d)
  std::vector<Mat> keys{Mat(root.vec())}, vals{nbar};
  for (std::size_t j = 0; j < n; ++j) {
    keys.emplace_back(l.vec().begin() + j * d, l.vec().begin() + (j + 1) * d);
    vals.push_back(keys.back());
  }
  std::vector<double> s;
  for (const auto& kv : keys) s.push_back(std::inner_product(kv.begin(), kv.end(), root.vec().begin(), 0.0) / 2.0);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0;
  for (auto& x : s) z += (x = std::exp(x - mx));
  Mat want(d, 0.0);
  for (std::size_t t = 0; t < s.size(); ++t)
    for (std::size_t k = 0; k < d; ++k) want[k] += s[t] / z * vals[t][k];
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out.at(0, k), want[k], 1e-12);
}

TEST(EncoderAttention, LayerGradientsFiveLeaves) {
  std::mt19937_64 rng(8);
  const std::size_t d = 8;
  auto layer = make_layer(d, 2, rng, 3);
  const auto enc = encode_tree(parse_bracketed("(S (NP a b) (VP c (PP d e)))"));
  const std::size_t n = 5, m = enc.num_nodes();
  auto l = random_tensor({n, d}, rng, true), nv = random_tensor({m, d}, rng, true);
  auto cl = random_tensor({n, d}, rng), cn = random_tensor({m, d}, rng);
  for (bool masked : {true, false}) {
    EncoderFlags flags;
    flags.use_subtree_mask = masked;
    auto f = [&] {
      auto out = encoder_tree_self_attention(l, nv, enc, layer.attn, layer.ffn, &layer.table, flags);
      return add(sum(mul(out.leaves, cl)), sum(mul(out.nodes, cn)));
    };
    const auto& a = layer.attn;
    const auto& ff = layer.ffn;
    auto r = finite_diff_check<double>(f, {l, nv, a.wq, a.wk, a.wv, a.wo, a.u, ff.w1, ff.b1, ff.w2, ff.b2, ff.ln1_gain,
                                           ff.ln1_bias, ff.ln2_gain, ff.ln2_bias, layer.table.vertical,
                                           layer.table.horizontal});
    EXPECT_LT(r.max_rel_error, 1e-5) << "masked=" << masked << " param " << r.worst_param;
  }
}

TEST(EncoderAttention, NodeFreeReducesToStandardAttention) {
  std::mt19937_64 rng(9);
  const std::size_t d = 8, n = 6;
  auto layer = make_layer(d, 4, rng);
  auto zero = HierEmbedTable<double>::zeros(6, d / 2);
  TreeEncoding flat{{"a", "b", "c", "d", "e", "f"}, {}, {}};
  auto l = random_tensor({n, d}, rng);
  EncoderFlags flags;
  flags.use_subtree_mask = false;
  auto got = encoder_tree_self_attention(l, T(), flat, layer.attn, layer.ffn, &zero, flags);
  auto want = transformer_layer_phi(standard_attention(l, l, l, layer.attn, false), l, layer.ffn);
  EXPECT_LT(max_abs_diff(got.leaves.values(), want.vec()), 1e-12);
}

TEST(EncoderAttention, HeadSplitEquivalence) {
  std::mt19937_64 rng(10);
  const std::size_t d = 8, heads = 4, dh = 2;
  for (int k = 0; k < 20; ++k) {
    const auto enc = encode_tree(random_tree(1 + rng() % 10, 3, rng));
    const BranchSets bs(enc);
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
    auto l = random_tensor({n, d}, rng), nv = random_tensor({m, d}, rng), w = random_tensor({n}, rng);
    auto full = accumulate<double>(l, nv, bs, w, nullptr);
    for (std::size_t h = 0; h < heads; ++h) {
      auto part = accumulate<double>(slice(l, 1, h * dh, dh), slice(nv, 1, h * dh, dh), bs, w, nullptr);
      EXPECT_LT(max_abs_diff(slice(full, 1, h * dh, dh).values(), part.vec()), 1e-12);
    }
  }
}

TEST(EncoderAttention, NodeOrderInvariance) {
  std::mt19937_64 rng(11);
  const std::size_t d = 8;
  auto layer = make_layer(d, 2, rng);
  for (int k = 0; k < 10; ++k) {
    const auto enc = encode_tree(random_tree(2 + rng() % 10, 4, rng));
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes();
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto penc = permute_nodes(enc, perm);
    auto l = random_tensor({n, d}, rng), nv = random_tensor({m, d}, rng);
    std::vector<double> pv(m * d);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c) pv[perm[i] * d + c] = nv.at(i, c);
    auto a = encoder_tree_self_attention(l, nv, enc, layer.attn, layer.ffn, &layer.table, EncoderFlags{});
    auto b = encoder_tree_self_attention(l, T::from_data({m, d}, pv), penc, layer.attn, layer.ffn, &layer.table, EncoderFlags{});
    EXPECT_LT(max_abs_diff(a.leaves.values(), b.leaves.vec()), 1e-12);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(a.nodes.at(i, c), b.nodes.at(perm[i], c), 1e-12);
  }
}

TEST(EncoderAttention, SkipComputeMatchesFaithfulPath) {
  std::mt19937_64 rng(12);
  const std::size_t d = 8;
  auto layer = make_layer(d, 2, rng);
  for (int k = 0; k < 20; ++k) {
    const auto enc = encode_tree(random_tree(1 + rng() % 12, 4, rng));
    auto l = random_tensor({enc.num_leaves(), d}, rng), nv = random_tensor({enc.num_nodes(), d}, rng);
    EncoderFlags skip;
    skip.skip_masked_leaf_queries = true;
    auto a = encoder_tree_self_attention(l, nv, enc, layer.attn, layer.ffn, &layer.table, EncoderFlags{});
    auto b = encoder_tree_self_attention(l, nv, enc, layer.attn, layer.ffn, &layer.table, skip);
    EXPECT_LT(max_abs_diff(a.leaves.values(), b.leaves.vec()), 1e-12);
    EXPECT_LT(max_abs_diff(a.nodes.values(), b.nodes.vec()), 1e-12);
  }
}

TEST(CrossAttention, RowsSumToOneAndPhraseMass) {
  std::mt19937_64 rng(13);
  const std::size_t d = 8;
  auto p = AttentionParams<double>::create(d, 2, true, rng);
  auto table = HierEmbedTable<double>::create(5, d / 2, rng, 0.5);
  for (int k = 0; k < 50; ++k) {
    const auto enc = encode_tree(random_tree(1 + rng() % 10, 4, rng));
    const BranchSets bs(enc);
    const std::size_t n = enc.num_leaves(), m = enc.num_nodes(), t = 1 + rng() % 4;
    std::vector<AttentionRecord> trace;
    ForwardContext ctx{nullptr, &trace};
    auto out = decoder_cross_attention(random_tensor({t, d}, rng), random_tensor({n, d}, rng),
                                       random_tensor({m, d}, rng), bs, p, &table, ctx);
    EXPECT_EQ(out.shape(), (Shape{t, d}));
    const auto& r = trace.at(0);
    for (std::size_t h = 0; h < r.heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        double node_mass = 0, leaf_mass = 0;
        for (std::size_t j = 0; j < m + n; ++j) (j < r.node_keys ? node_mass : leaf_mass) += r.weights[(h * t + i) * (m + n) + j];
        EXPECT_NEAR(node_mass + leaf_mass, 1.0, 1e-12);
        EXPECT_GE(node_mass, 0.0);
        EXPECT_LE(node_mass, 1.0);
      }
  }
}

TEST(CrossAttention, TwoKeyClosedForm) {
  std::mt19937_64 rng(14);
  const std::size_t d = 2;
  auto p = identity_params(d, rng);
  const auto enc = encode_tree(parse_bracketed("(X a)"));
  auto q = random_tensor({1, d}, rng), l = random_tensor({1, d}, rng), nv = random_tensor({1, d}, rng);
  auto out = decoder_cross_attention<double>(q, l, nv, BranchSets(enc), p, nullptr);
  const double w = l.at(0, 0) * p.u.at(0) + l.at(0, 1) * p.u.at(1);
  const double sn = (q.at(0, 0) * nv.at(0, 0) + q.at(0, 1) * nv.at(0, 1)) / std::sqrt(2.0);
  const double sl = (q.at(0, 0) * l.at(0, 0) + q.at(0, 1) * l.at(0, 1)) / std::sqrt(2.0);
  const double pn = 1.0 / (1.0 + std::exp(sl - sn));
  for (std::size_t k = 0; k < d; ++k) {
    const double nbar = w * (l.at(0, k) + nv.at(0, k)) / 2.0;
    EXPECT_NEAR(out.at(0, k), pn * nbar + (1 - pn) * l.at(0, k), 1e-12);
  }
}
