// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "treeattn/analysis.hpp"
#include "treeattn/data.hpp"
#include "treeattn/synthetic.hpp"
#include "treeattn/train.hpp"

namespace treeattn {
namespace {

// ---------------------------------------------------------------------------
// corpus

TEST(Corpus, ReadWriteRoundTrip) {
  std::istringstream in("# header\n1\t(S (NP a) (VP b))\n\n0\t(S x)\t(S (A y z))\n");
  const auto docs = read_corpus(in);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].label, 1u);
  EXPECT_EQ(docs[1].trees.size(), 2u);
  std::ostringstream out;
  write_corpus(out, docs);
  std::istringstream again(out.str());
  const auto back = read_corpus(again);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].trees, docs[1].trees);
}

TEST(Corpus, ErrorsCarryLineNumbers) {
  auto fails_at = [](const std::string& text, const std::string& where) {
    std::istringstream in(text);
    try {
      read_corpus(in, "c.tsv");
      ADD_FAILURE() << "no error for " << text;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  fails_at("1\t(S a)\nx\t(S a)\n", "c.tsv:2:");
  fails_at("1\t(S a)\n\n1\t(S (a)\n", "c.tsv:3:");
  fails_at("1 (S a)\n", "c.tsv:1:");
}

TEST(Corpus, ForestJoinedUnderDoc) {
  ModelConfig cfg = preset("tiny");
  const Document doc{0, {parse_bracketed("(S (NN a) b)"), parse_bracketed("(S c)")}};
  const ParseTree t = document_tree(doc, cfg);
  EXPECT_EQ(t.label, kDocLabel);
  EXPECT_EQ(to_bracketed(t), "(DOC (S a b) (S c))");
  EXPECT_EQ(to_bracketed(document_tree({0, {parse_bracketed("(S (NN a) b)")}}, cfg)), "(S a b)");
}

TEST(Corpus, LabelAndVocabularyChecks) {
  ModelConfig cfg = preset("tiny");
  const std::vector<Document> docs{{1, {parse_bracketed("(S a b)")}}};
  const DataVocabs v = build_vocabs(docs, cfg);
  EXPECT_EQ(cfg.token_vocab, 3u);
  EXPECT_EQ(cfg.label_vocab, 2u);
  EXPECT_THROW(prepare_example({2, {parse_bracketed("(S a b)")}}, cfg, v), DataError);
  const Example ex = prepare_example({0, {parse_bracketed("(S a zzz)")}}, cfg, v);
  EXPECT_EQ(ex.input.token_ids[1], Vocab::kUnk);
  cfg.unk_fallback = false;
  EXPECT_THROW(prepare_example({0, {parse_bracketed("(S a zzz)")}}, cfg, v), VocabError);
}

// ---------------------------------------------------------------------------
// synthetic task

TEST(Synthetic, Evaluation) {
  EXPECT_EQ(synthetic_value(parse_bracketed("(NEG (x +1))")), -1);
  EXPECT_EQ(synthetic_value(parse_bracketed("(MAX (x -1) (MIN (x +1) (x -1)))")), -1);
  EXPECT_EQ(synthetic_value(parse_bracketed("(NEG (MIN (x -1) (x +1)))")), 1);
  EXPECT_THROW(synthetic_value(parse_bracketed("(SUM (x +1))")), DataError);
}

TEST(Synthetic, BalancedAndWithinBounds) {
  SyntheticOptions opt;
  opt.seed = 3;
  const auto docs = make_synthetic_dataset(10000, opt);
  ASSERT_EQ(docs.size(), 10000u);
  std::size_t ones = 0;
  for (const auto& d : docs) {
    ones += d.label;
    const std::size_t n = leaf_tokens(d.trees[0]).size();
    EXPECT_GE(n, opt.min_leaves);
    EXPECT_LE(n, opt.max_leaves);
    EXPECT_EQ(d.label, synthetic_value(d.trees[0]) > 0 ? 1u : 0u);
  }
  const double share = static_cast<double>(ones) / 10000.0;
  EXPECT_GE(share, 0.45);
  EXPECT_LE(share, 0.55);
}

TEST(Synthetic, SeededAndNegSurvivesPipeline) {
  SyntheticOptions opt;
  opt.seed = 9;
  const auto a = make_synthetic_dataset(50, opt), b = make_synthetic_dataset(50, opt);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].trees, b[i].trees);
  const ModelConfig cfg = synthetic_pipeline(preset("synthetic"));
  const Document d{0, {parse_bracketed("(MAX (NEG (NEG (x +1))) (x -1))")}};
  EXPECT_EQ(to_bracketed(document_tree(d, cfg)), "(MAX (NEG (NEG +1)) -1)");
}

// ---------------------------------------------------------------------------
// optimizer and training

TEST(Optimizer, Schedule) {
  EXPECT_DOUBLE_EQ(learning_rate(1.0, 4, 0), 0.0);
  EXPECT_DOUBLE_EQ(learning_rate(1.0, 4, 1), 0.25);
  EXPECT_DOUBLE_EQ(learning_rate(1.0, 4, 4), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(1.0, 4, 16), 0.5);
  EXPECT_DOUBLE_EQ(learning_rate(2.0, 0, 7), 2.0);
}

TEST(Optimizer, AdamStepMatchesClosedForm) {
  ModelConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup = 0;
  auto p = Tensor<double>::parameter({2}, {1.0, -2.0});
  p.node()->grad = {0.5, -4.0};
  Adam<double> adam({p}, cfg);
  adam.step();
  // first step: m̂ = g, v̂ = g², update = lr · g / (|g| + eps)
  EXPECT_NEAR(p.at(0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-9), 1e-15);
  EXPECT_NEAR(p.at(1), -2.0 + 0.1 * 4.0 / (4.0 + 1e-9), 1e-15);
  EXPECT_TRUE(p.node()->grad.empty());
}

struct TinyTask {
  ModelConfig cfg;
  std::vector<Example> train, dev;
};

TinyTask tiny_task(std::size_t n_train = 64, std::size_t n_dev = 32) {
  TinyTask t;
  t.cfg = synthetic_pipeline(preset("tiny"));
  t.cfg.max_updates = 20;
  t.cfg.warmup = 5;
  t.cfg.eval_every = 10;
  t.cfg.batch_tokens = 24;
  t.cfg.lr = 3e-3;
  SyntheticOptions opt;
  opt.max_depth = 3;
  opt.seed = 5;
  const auto train = make_synthetic_dataset(n_train, opt);
  opt.seed = 6;
  const auto dev = make_synthetic_dataset(n_dev, opt);
  const DataVocabs v = build_vocabs(train, t.cfg);
  t.train = prepare_examples(train, t.cfg, v);
  t.dev = prepare_examples(dev, t.cfg, v);
  return t;
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  TinyTask t = tiny_task();
  t.cfg.lr = 0.0;
  TreeModel<double> m(t.cfg);
  const auto before = m.to_checkpoint();
  train_classifier(m, t.train, t.dev);
  EXPECT_EQ(m.to_checkpoint(), before);
}

TEST(Train, DeterministicLossCurves) {
  TinyTask t = tiny_task();
  TreeModel<double> a(t.cfg), b(t.cfg);
  const auto ra = train_classifier(a, t.train, t.dev);
  const auto rb = train_classifier(b, t.train, t.dev);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].dev_accuracy, rb.history[i].dev_accuracy);
  }
  EXPECT_EQ(a.to_checkpoint(), b.to_checkpoint());
}

TEST(Train, KeepsBestDevParameters) {
  TinyTask t = tiny_task();
  TreeModel<double> m(t.cfg);
  const auto r = train_classifier(m, t.train, t.dev);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, t.dev), r.best_dev_accuracy);
  double best = 0;
  for (const auto& h : r.history) best = std::max(best, h.dev_accuracy);
  EXPECT_EQ(best, r.best_dev_accuracy);
}

TEST(Train, NonFiniteLossAborts) {
  TinyTask t = tiny_task();
  TreeModel<double> m(t.cfg);
  for (auto& [name, p] : m.named_parameters()) {
    if (name == "head.b") p.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  }
  EXPECT_THROW(train_classifier(m, t.train, t.dev), NumericError);
}

TEST(Train, MemorizesSmallTrainingSet) {
  TinyTask t = tiny_task(8, 8);
  t.cfg.max_updates = 300;
  t.cfg.warmup = 10;
  t.cfg.eval_every = 50;
  t.cfg.lr = 1e-2;
  t.cfg.dropout = 0.0;
  TreeModel<double> m(t.cfg);
  TrainOptions opt;
  opt.target_accuracy = 1.0;
  train_classifier(m, t.train, t.train, opt);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, t.train), 1.0);
}

TEST(Eval, ConstantPredictorScoresBaseRate) {
  TinyTask t = tiny_task(16, 40);
  TreeModel<double> m(t.cfg);
  for (auto& [name, p] : m.named_parameters()) {
    if (name.rfind("head.", 0) == 0) {
      auto v = p.mutable_values();
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  std::size_t zeros = 0;
  for (const auto& e : t.dev) zeros += e.label == 0;
  // all logits tie, so every prediction is class 0
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, t.dev), static_cast<double>(zeros) / static_cast<double>(t.dev.size()));
  EXPECT_THROW(evaluate_accuracy(m, {}), DataError);
}

// ---------------------------------------------------------------------------
// analysis

TEST(AttentionMass, SumsToOneAndCountShares) {
  ModelConfig cfg = preset("tiny");
  cfg.token_vocab = 40;
  cfg.label_vocab = 3;
  TreeModel<double> m(cfg);
  const std::size_t n = 16;
  const TreeEncoding enc = encode_tree(balanced_binary_tree(n));
  std::vector<std::size_t> tok(n), lab(enc.num_nodes(), 1);
  for (std::size_t j = 0; j < n; ++j) tok[j] = 1 + j;
  const std::vector<Example> data{{TreeInput::make(enc, tok, lab), 0}};
  const AttentionMass s = attention_mass_stats(m, data);
  EXPECT_NEAR(s.node_mass + s.leaf_mass, 1.0, 1e-9);
  EXPECT_LT(s.max_row_error, 1e-9);
  EXPECT_EQ(s.queries, (n - 1) * cfg.heads * cfg.layers_enc);
  EXPECT_DOUBLE_EQ(s.leaf_count_share, static_cast<double>(n) / static_cast<double>(2 * n - 1));
}

TEST(AttentionMass, CrossAttentionRows) {
  ModelConfig cfg = preset("tiny");
  cfg.task = "seq2seq";
  cfg.layers_dec = 2;
  cfg.tie_embeddings = true;
  cfg.token_vocab = 20;
  cfg.label_vocab = 3;
  TreeModel<double> m(cfg);
  const TreeEncoding enc = encode_tree(balanced_binary_tree(5));
  const std::vector<Example> data{{TreeInput::make(enc, {1, 2, 3, 4, 5}, std::vector<std::size_t>(4, 1)), 0}};
  const AttentionMass s = attention_mass_stats(m, data, {{1, 2, 3}});
  EXPECT_EQ(s.queries, 3 * cfg.heads * cfg.layers_dec);
  EXPECT_NEAR(s.node_mass + s.leaf_mass, 1.0, 1e-9);
  EXPECT_GT(s.node_mass, 0.0);
}

TEST(Bench, EmptyWhenNoRepeats) {
  EXPECT_TRUE(bench_accumulation({16, 32}, 0).rows.empty());
  EXPECT_THROW(bench_accumulation({32, 16}, 1), ContractError);
}

TEST(Bench, OpCountGrowth) {
  const auto rep = bench_accumulation({64, 128, 256}, 1);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (std::size_t k = 1; k < rep.rows.size(); ++k) {
    const double acc = static_cast<double>(rep.rows[k].accumulate_ops) / static_cast<double>(rep.rows[k - 1].accumulate_ops);
    const double layer = static_cast<double>(rep.rows[k].layer_ops) / static_cast<double>(rep.rows[k - 1].layer_ops);
    EXPECT_GE(acc, 2.0);
    EXPECT_LE(acc, 2.5);
    EXPECT_GE(layer, 3.5);
    EXPECT_LE(layer, 4.5);
  }
  EXPECT_LT(rep.max_abs_residual, 0.2);
  std::ostringstream csv;
  write_bench_csv(csv, rep, false);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "n,nodes,pairs,accumulate_ops,layer_ops,nlogn_fit,fit_residual");
}

TEST(Bench, BalancedTreeShape) {
  for (std::size_t n : {1u, 2u, 7u, 64u}) {
    const TreeEncoding enc = encode_tree(balanced_binary_tree(n));
    EXPECT_EQ(enc.num_leaves(), n);
    EXPECT_EQ(enc.num_nodes(), n == 1 ? 1u : n - 1);
  }
}

}  // namespace
}  // namespace treeattn
