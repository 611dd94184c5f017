// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL/SKIP line per criterion, exit 4 on any FAIL.
//
//   acceptance [--only N[,N...]] [--verbose]
//
// Criterion 9 needs TREEATTN_SST2_DIR holding train.txt and dev.txt in the
// label<TAB>tree corpus format; it is reported as SKIP otherwise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "treeattn/analysis.hpp"
#include "treeattn/checkpoint.hpp"
#include "treeattn/config.hpp"
#include "treeattn/data.hpp"
#include "treeattn/model.hpp"
#include "treeattn/synthetic.hpp"
#include "treeattn/train.hpp"
#include "treeattn/verify/checks.hpp"

namespace {

using namespace treeattn;

enum class Outcome { kPass, kFail, kSkip };

struct Verdict {
  Outcome outcome;
  std::string detail;
};

Verdict verdict(bool ok, const std::string& detail) { return {ok ? Outcome::kPass : Outcome::kFail, detail}; }

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

bool g_verbose = false;

// ---------------------------------------------------------------------------

Verdict roundtrip() {
  const auto rt = verify::roundtrip_sweep(1000, 64, 5, 101);
  const auto bad = verify::invalid_encodings_sweep();
  return verdict(rt.failures == 0 && bad.failures == 0,
                 std::to_string(rt.cases - rt.failures) + "/" + std::to_string(rt.cases) + " trees reproduced, " +
                     std::to_string(bad.cases - bad.failures) + "/" + std::to_string(bad.cases) +
                     " malformed encodings rejected" + (rt.first_failure.empty() ? "" : ", first: " + rt.first_failure));
}

Verdict kernel_oracles() {
  const auto r = verify::kernel_oracle_sweep(200, 12, 8, 202);
  return verdict(r.worst < 1e-12, std::to_string(r.cases) + " trees, max abs diff " + fmt(r.worst, 3) + " (tol 1e-12)");
}

Verdict worked_fixture() {
  const auto v = verify::gh_fixture();
  const std::vector<double> expect_shat = {0.0, 3.5, 4.0, 2.5, 11.0 / 3.0, 4.0};
  double worst = 0.0;
  for (std::size_t k = 0; k < 6; ++k) worst = std::max(worst, std::abs(v.shat[k] - expect_shat[k]));
  worst = std::max({worst, std::abs(v.nbar_h - 3.75), std::abs(v.nbar_g - 61.0 / 18.0), std::abs(v.fused_h - 3.75),
                    std::abs(v.fused_g - 61.0 / 18.0)});
  return verdict(worst < 1e-12, "nbar_h " + fmt(v.nbar_h, 17) + ", nbar_g " + fmt(v.nbar_g, 17) + ", max abs diff " +
                                    fmt(worst, 3));
}

Verdict masking() {
  const auto r = verify::masking_sweep(100, 16, 404);
  return verdict(r.worst_masked == 0.0 && r.worst_row < 1e-12 && r.worst_cross_row < 1e-12,
                 std::to_string(r.cases) + " trees, max masked weight " + fmt(r.worst_masked, 3) +
                     ", max |row sum - 1| " + fmt(r.worst_row, 3) + ", cross " + fmt(r.worst_cross_row, 3));
}

Verdict gradients() {
  const std::set<std::string> required = {"hier.vertical", "hier.horizontal", "enc.0.attn.u", "dec.0.cross.u"};
  std::set<std::string> seen;
  double worst = 0.0;
  std::string where;
  std::size_t coords = 0;
  for (const char* task : {"classify", "seq2seq"}) {
    ModelConfig cfg = preset("tiny");
    cfg.task = task;
    if (cfg.task == "seq2seq") cfg.layers_dec = 1;
    FdOptions fd;
    fd.eps = 1e-5;
    const auto r = grad_check_model(cfg, gradcheck_tree(5), 2, fd);
    seen.insert(r.groups.begin(), r.groups.end());
    coords += r.coords_checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = std::string(task) + ":" + r.worst_param;
    }
  }
  std::string missing;
  for (const auto& g : required)
    if (seen.count(g) == 0) missing += " " + g;
  return verdict(worst < 1e-5 && missing.empty(), std::to_string(coords) + " coordinates, max rel error " +
                                                       fmt(worst, 3) + " at " + where + " (tol 1e-5)" +
                                                       (missing.empty() ? "" : ", unchecked:" + missing));
}

Verdict complexity() {
  const auto rep = bench_accumulation({128, 256, 512, 1024}, 1, BenchOptions{});
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
    const auto& a = rep.rows[k];
    const auto& b = rep.rows[k + 1];
    const double acc = static_cast<double>(b.accumulate_ops) / static_cast<double>(a.accumulate_ops);
    const double layer = static_cast<double>(b.layer_ops) / static_cast<double>(a.layer_ops);
    ok = ok && acc >= 2.0 && acc <= 2.5 && layer >= 3.5 && layer <= 4.5;
    detail += "n=" + std::to_string(a.n) + ": acc x" + fmt(acc) + ", layer x" + fmt(layer) + "; ";
  }
  ok = ok && rep.max_abs_residual < 0.2;
  return verdict(ok, detail + "n log n fit residual " + fmt(rep.max_abs_residual, 3));
}

Verdict parameter_overhead() {
  const ModelConfig tree = preset("base-tree");
  const ModelConfig base = preset("base-baseline");
  const ParamBreakdown b = count_parameters(tree);
  const std::size_t total = b.total(), baseline = count_parameters(base).total();
  const double pct = 100.0 * static_cast<double>(total - baseline) / static_cast<double>(total);
  const long long residual = static_cast<long long>(total) - 61810944LL;
  std::string items;
  for (const auto& [name, n] : b.items) items += name + "=" + std::to_string(n) + " ";
  if (g_verbose) std::cout << "    breakdown: " << items << "\n";
  return verdict(baseline == 61747200 && pct < 0.15,
                 "baseline " + std::to_string(baseline) + ", tree " + std::to_string(total) + ", overhead " + fmt(pct, 4) +
                     "%, residual vs 61810944: " + (residual >= 0 ? "+" : "") + std::to_string(residual));
}

// ---------------------------------------------------------------------------
// synthetic task runs, shared by criteria 8 and 10

struct SynthRun {
  double best = 0.0;
  std::size_t updates = 0;
  double seconds = 0.0;
  std::vector<std::uint8_t> checkpoint;
};

struct SynthData {
  std::vector<Document> train, dev;
};

const SynthData& synth_data() {
  static const SynthData data = [] {
    SyntheticOptions so;
    so.seed = 11;
    SynthData d;
    d.train = make_synthetic_dataset(4000, so);
    so.seed = 12;
    d.dev = make_synthetic_dataset(500, so);
    return d;
  }();
  return data;
}

SynthRun synth_run(const std::function<void(ModelConfig&)>& tweak) {
  ModelConfig cfg = synthetic_pipeline(preset("synthetic"));
  tweak(cfg);
  const auto& data = synth_data();
  const DataVocabs vocabs = build_vocabs(data.train, cfg);
  const auto train = prepare_examples(data.train, cfg, vocabs);
  const auto dev = prepare_examples(data.dev, cfg, vocabs);
  TreeModel<double> model(cfg);
  TrainOptions opt;
  if (g_verbose) opt.log = &std::cout;
  const TrainResult r = train_classifier(model, train, dev, opt);
  return {r.best_dev_accuracy, r.updates, r.seconds, checkpoint_to_bytes(model.to_checkpoint())};
}

const SynthRun& full_tree_run() {
  static const SynthRun run = synth_run([](ModelConfig&) {});
  return run;
}

Verdict synthetic_margin() {
  const SynthRun& tree = full_tree_run();
  const SynthRun base = synth_run([](ModelConfig& c) { c.tree_mode = false; });
  const double margin = 100.0 * (tree.best - base.best);
  return verdict(margin >= 10.0 && tree.updates <= 5000,
                 "tree " + fmt(tree.best) + " vs baseline " + fmt(base.best) + " (margin " + fmt(margin, 3) +
                     " points, " + std::to_string(tree.updates) + " updates, " + fmt(tree.seconds + base.seconds, 3) +
                     " s)");
}

Verdict sst2() {
  const char* dir = std::getenv("TREEATTN_SST2_DIR");
  if (dir == nullptr || *dir == '\0') return {Outcome::kSkip, "TREEATTN_SST2_DIR not set (dataset-dependent, not gating)"};
  const std::filesystem::path root(dir);
  ModelConfig cfg = preset("sst2");
  const auto train_docs = read_corpus_file((root / "train.txt").string());
  const auto dev_docs = read_corpus_file((root / "dev.txt").string());
  const DataVocabs vocabs = build_vocabs(train_docs, cfg);
  TreeModel<double> model(cfg);
  TrainOptions opt;
  if (g_verbose) opt.log = &std::cout;
  const TrainResult r =
      train_classifier(model, prepare_examples(train_docs, cfg, vocabs), prepare_examples(dev_docs, cfg, vocabs), opt);
  return verdict(r.best_dev_accuracy >= 0.78, "dev accuracy " + fmt(r.best_dev_accuracy) + " (target 0.78)");
}

Verdict ablations() {
  const SynthRun& full = full_tree_run();
  struct Row {
    const char* name;
    bool hier, mask;
  };
  const std::vector<Row> rows = {{"-HierEmb", false, true}, {"-SubMask", true, false}, {"-both", false, false}};
  bool ok = true;
  std::string detail = "full " + fmt(full.best);
  std::vector<std::vector<std::uint8_t>> ckpts = {full.checkpoint};
  for (const auto& row : rows) {
    const SynthRun r = synth_run([&row](ModelConfig& c) {
      c.use_hier_embeddings = row.hier;
      c.use_subtree_mask = row.mask;
    });
    ok = ok && full.best >= r.best - 0.01;
    detail += ", " + std::string(row.name) + " " + fmt(r.best);
    for (const auto& c : ckpts) ok = ok && c != r.checkpoint;
    ckpts.push_back(r.checkpoint);
  }
  return verdict(ok, detail + " (full must be >= each - 0.01; checkpoints distinct)");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--verbose") {
      g_verbose = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::istringstream in(argv[++i]);
      std::string item;
      while (std::getline(in, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--only N[,N...]] [--verbose]\n";
      return 1;
    }
  }

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    Verdict (*run)();
  };
  const std::vector<Criterion> criteria = {
      {1, "round-trip", 5, roundtrip},
      {2, "kernel oracles", 30, kernel_oracles},
      {3, "worked fixture", 1, worked_fixture},
      {4, "masking", 60, masking},
      {5, "gradients", 120, gradients},
      {6, "complexity", 120, complexity},
      {7, "parameter overhead", 1, parameter_overhead},
      {8, "synthetic margin", 1800, synthetic_margin},
      {9, "sst-2 (stretch)", 0, sst2},
      {10, "ablations", 1800, ablations},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v{Outcome::kFail, ""};
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {Outcome::kFail, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (v.outcome == Outcome::kPass && c.budget_s > 0 && secs > c.budget_s) {
      v = {Outcome::kFail, v.detail + "; over the " + fmt(c.budget_s) + " s budget"};
    }
    const char* tag = v.outcome == Outcome::kPass ? "PASS" : v.outcome == Outcome::kFail ? "FAIL" : "SKIP";
    failures += v.outcome == Outcome::kFail;
    std::cout << tag << "  " << std::setw(2) << c.id << "  " << std::left << std::setw(20) << c.name << std::right
              << v.detail << "  [" << std::fixed << std::setprecision(2) << secs << " s]" << std::defaultfloat << "\n"
              << std::flush;
  }
  return failures == 0 ? 0 : 4;
}
