// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_ANALYSIS_HPP
#define TREEATTN_ANALYSIS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "treeattn/accumulation.hpp"
#include "treeattn/attention.hpp"
#include "treeattn/config.hpp"
#include "treeattn/data.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/error.hpp"
#include "treeattn/gradcheck.hpp"
#include "treeattn/model.hpp"
#include "treeattn/op_counter.hpp"
#include "treeattn/tree.hpp"

namespace treeattn {

// ---------------------------------------------------------------------------
// Gradient check

/// Balanced binary tree over leaves w0..w{n-1}; every internal node is "X".
inline ParseTree balanced_binary_tree(std::size_t n) {
  if (n == 0) throw ContractError("balanced_binary_tree needs at least one leaf");
  std::size_t next = 0;
  auto build = [&next](auto&& self, std::size_t count) -> ParseTree {
    if (count == 1) return ParseTree::leaf("w" + std::to_string(next++));
    const std::size_t left = (count + 1) / 2;
    ParseTree l = self(self, left);
    ParseTree r = self(self, count - left);
    return ParseTree::node("X", {std::move(l), std::move(r)});
  };
  if (n == 1) return ParseTree::node("X", {build(build, 1)});
  return build(build, n);
}

/// Fixed mixed-arity tree with `n` leaves and several phrase labels.
inline ParseTree gradcheck_tree(std::size_t n) {
  if (n == 0) throw ContractError("gradcheck tree needs at least one leaf");
  static const char* labels[] = {"S", "NP", "VP", "PP"};
  std::vector<ParseTree> level;
  for (std::size_t j = 0; j < n; ++j) level.push_back(ParseTree::leaf("t" + std::to_string(j % 4)));
  std::size_t round = 0;
  while (level.size() > 1) {
    std::vector<ParseTree> up;
    const std::size_t group = round % 2 == 0 ? 2 : 3;
    for (std::size_t i = 0; i < level.size(); i += group) {
      std::vector<ParseTree> kids(level.begin() + static_cast<std::ptrdiff_t>(i),
                                  level.begin() + static_cast<std::ptrdiff_t>(std::min(i + group, level.size())));
      up.push_back(kids.size() == 1 && !kids[0].is_leaf() ? std::move(kids[0])
                                                           : ParseTree::node(labels[(round + i) % 4], std::move(kids)));
    }
    level = std::move(up);
    ++round;
  }
  if (level[0].is_leaf()) return ParseTree::node("S", {std::move(level[0])});
  return std::move(level[0]);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
  std::size_t parameters = 0;
  std::vector<std::string> groups;
};

/// Central-difference check over every parameter group of a model built from
/// `cfg` (dropout disabled). Classification loss for task=classify; for
/// task=seq2seq a teacher-forced loss over `prefix_len` target positions.
inline GradCheckResult grad_check_model(ModelConfig cfg, const ParseTree& tree, std::size_t prefix_len = 2,
                                        const FdOptions& fd = {}) {
  cfg.dropout = 0.0;
  cfg.attn_dropout = 0.0;
  cfg.token_vocab = 0;
  cfg.label_vocab = 0;
  if (cfg.task == "seq2seq") {
    cfg.layers_dec = std::max<std::size_t>(cfg.layers_dec, 1);
    cfg.tie_embeddings = true;
  }
  const std::vector<Document> docs{{0, {tree}}};
  const DataVocabs vocabs = build_vocabs(docs, cfg);
  if (cfg.task == "seq2seq") cfg.token_vocab = std::max<std::size_t>(cfg.token_vocab, prefix_len + 2);
  const Example ex = prepare_example(docs[0], cfg, vocabs);
  const TreeModel<double> model(cfg);

  std::function<Tensor<double>()> loss;
  if (cfg.task == "seq2seq") {
    std::vector<std::size_t> in, out;
    for (std::size_t t = 0; t < prefix_len; ++t) {
      in.push_back(t % cfg.token_vocab);
      out.push_back((t + 1) % cfg.token_vocab);
    }
    loss = [&model, &ex, in, out] { return cross_entropy(model.seq2seq_logits(ex.input, in), out); };
  } else {
    loss = [&model, &ex] { return cross_entropy(model.classify_logits(ex.input), {ex.label}); };
  }
  const auto named = model.named_parameters();
  std::vector<Tensor<double>> params;
  GradCheckResult r;
  for (const auto& [name, t] : named) {
    params.push_back(t);
    r.groups.push_back(name);
    r.parameters += t.size();
  }
  const FdReport rep = finite_diff_check<double>(loss, params, fd);
  r.max_rel_error = rep.max_rel_error;
  r.worst_param = named[rep.worst_param].first;
  r.coords_checked = rep.coords_checked;
  return r;
}

// ---------------------------------------------------------------------------
// Attention mass

struct AttentionMass {
  double node_mass = 0.0;   // mean mass a query puts on node keys
  double leaf_mass = 0.0;   // mean mass a query puts on leaf keys
  double node_count_share = 0.0;  // mean m / (m + n)
  double leaf_count_share = 0.0;  // mean n / (m + n)
  double max_row_error = 0.0;     // max |row sum - 1| seen
  std::size_t queries = 0;
};

/// Encoder-only models: node-query rows of encoder self-attention.
/// Seq2seq models: every row of decoder cross-attention (needs targets).
template <typename T>
AttentionMass attention_mass_stats(const TreeModel<T>& model, const std::vector<Example>& data,
                                   const std::vector<std::vector<std::size_t>>& targets = {}) {
  if (!model.config().tree_mode) throw ConfigError("attention mass statistics need a tree-mode model");
  const bool seq = model.config().task == "seq2seq";
  if (seq && targets.size() != data.size()) throw DataError("seq2seq attention statistics need one target per example");
  AttentionMass s;
  double node_sum = 0.0, leaf_sum = 0.0, share = 0.0;
  NoGradScope<T> no_grad;
  for (std::size_t e = 0; e < data.size(); ++e) {
    const auto& x = data[e].input;
    std::vector<AttentionRecord> trace;
    const ForwardContext ctx{nullptr, &trace};
    if (seq) {
      model.seq2seq_logits(x, targets[e], ctx);
    } else {
      model.encode(x, ctx);
    }
    share += static_cast<double>(x.num_nodes()) / static_cast<double>(x.num_nodes() + x.num_leaves());
    for (const auto& r : trace) {
      const bool want = seq ? r.site == "cross" : r.site.rfind("encoder", 0) == 0;
      if (!want) continue;
      const std::size_t qn = seq ? r.rows : std::min(r.node_queries, r.rows);
      for (std::size_t h = 0; h < r.heads; ++h) {
        for (std::size_t q = 0; q < qn; ++q) {
          const double* row = r.weights.data() + (h * r.rows + q) * r.cols;
          double nm = 0.0, lm = 0.0;
          for (std::size_t k = 0; k < r.cols; ++k) (k < r.node_keys ? nm : lm) += row[k];
          node_sum += nm;
          leaf_sum += lm;
          s.max_row_error = std::max(s.max_row_error, std::abs(nm + lm - 1.0));
          ++s.queries;
        }
      }
    }
  }
  if (s.queries > 0) {
    s.node_mass = node_sum / static_cast<double>(s.queries);
    s.leaf_mass = leaf_sum / static_cast<double>(s.queries);
  }
  if (!data.empty()) {
    s.node_count_share = share / static_cast<double>(data.size());
    s.leaf_count_share = 1.0 - s.node_count_share;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Complexity benchmark

struct BenchRow {
  std::size_t n = 0, nodes = 0, pairs = 0;
  std::uint64_t accumulate_ops = 0, layer_ops = 0;
  double accumulate_ns = 0.0, layer_ns = 0.0;  // median over repeats
  double fit = 0.0, residual = 0.0;            // c·n·log2(n) and its relative error
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double c = 0.0;  // least-squares fit of accumulate_ops ≈ c · n · log2(n)
  double max_abs_residual = 0.0;
};

struct BenchOptions {
  std::size_t d = 8;
  std::size_t heads = 1;
  std::size_t d_ffn = 16;
  std::size_t hier_rows = 100;
  std::uint64_t seed = 1;
};

/// Op counts and wall times for accumulate alone and for one full encoder
/// layer forward, on balanced binary trees of each length.
inline BenchReport bench_accumulation(const std::vector<std::size_t>& lengths, std::size_t repeats,
                                      const BenchOptions& opt = {}) {
  BenchReport rep;
  if (repeats == 0) return rep;
  if (!std::is_sorted(lengths.begin(), lengths.end())) throw ContractError("bench lengths must be sorted ascending");
  std::mt19937_64 rng(opt.seed);
  auto params = AttentionParams<double>::create(opt.d, opt.heads, true, rng);
  auto ffn = FfnParams<double>::create(opt.d, opt.d_ffn, rng);
  auto table = HierEmbedTable<double>::create(opt.hier_rows, opt.d / 2, rng, 1.0 / std::sqrt(static_cast<double>(opt.d)));
  NoGradScope<double> no_grad;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  for (const std::size_t n : lengths) {
    if (n < 2) throw ContractError("bench lengths must be at least 2");
    const TreeEncoding enc = encode_tree(balanced_binary_tree(n));
    const BranchSets bs(enc);
    const Mask mask = build_subtree_mask(enc);
    std::normal_distribution<double> dist(0.0, 1.0);
    auto rand = [&](Shape s) {
      std::vector<double> v(shape_size(s));
      for (auto& x : v) x = dist(rng);
      return Tensor<double>::from_data(std::move(s), std::move(v));
    };
    const auto L = rand({n, opt.d}), N = rand({enc.num_nodes(), opt.d}), w = rand({n});
    BenchRow row;
    row.n = n;
    row.nodes = enc.num_nodes();
    row.pairs = bs.pair_count();
    std::vector<double> acc_t, layer_t;
    for (std::size_t r = 0; r < repeats; ++r) {
      OpCounts acc_ops, layer_ops;
      auto t0 = std::chrono::steady_clock::now();
      {
        CountingScope scope(acc_ops);
        accumulate(L, N, bs, w, &table);
      }
      auto t1 = std::chrono::steady_clock::now();
      {
        CountingScope scope(layer_ops);
        encoder_tree_self_attention(L, N, bs, mask, params, ffn, &table, EncoderFlags{});
      }
      auto t2 = std::chrono::steady_clock::now();
      row.accumulate_ops = acc_ops.total();
      row.layer_ops = layer_ops.total();
      acc_t.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
      layer_t.push_back(std::chrono::duration<double, std::nano>(t2 - t1).count());
    }
    row.accumulate_ns = median(acc_t);
    row.layer_ns = median(layer_t);
    rep.rows.push_back(row);
  }
  double num = 0.0, den = 0.0;
  for (const auto& r : rep.rows) {
    const double x = static_cast<double>(r.n) * std::log2(static_cast<double>(r.n));
    num += static_cast<double>(r.accumulate_ops) * x;
    den += x * x;
  }
  rep.c = den > 0 ? num / den : 0.0;
  for (auto& r : rep.rows) {
    r.fit = rep.c * static_cast<double>(r.n) * std::log2(static_cast<double>(r.n));
    r.residual = r.fit > 0 ? (static_cast<double>(r.accumulate_ops) - r.fit) / r.fit : 0.0;
    rep.max_abs_residual = std::max(rep.max_abs_residual, std::abs(r.residual));
  }
  return rep;
}

inline void write_bench_csv(std::ostream& out, const BenchReport& rep, bool with_timing = true) {
  out << "n,nodes,pairs,accumulate_ops,layer_ops,nlogn_fit,fit_residual";
  if (with_timing) out << ",accumulate_ns,layer_ns";
  out << '\n';
  for (const auto& r : rep.rows) {
    out << r.n << ',' << r.nodes << ',' << r.pairs << ',' << r.accumulate_ops << ',' << r.layer_ops << ',' << r.fit
        << ',' << r.residual;
    if (with_timing) out << ',' << r.accumulate_ns << ',' << r.layer_ns;
    out << '\n';
  }
}

}  // namespace treeattn

#endif  // TREEATTN_ANALYSIS_HPP
