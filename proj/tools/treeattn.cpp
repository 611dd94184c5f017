// SPDX-License-Identifier: Apache-2.0
// treeattn: command-line driver for the tree-attention library.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure, 4 acceptance failure (a check ran and did not pass).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "treeattn/analysis.hpp"
#include "treeattn/bpe.hpp"
#include "treeattn/checkpoint.hpp"
#include "treeattn/config.hpp"
#include "treeattn/data.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/model.hpp"
#include "treeattn/synthetic.hpp"
#include "treeattn/train.hpp"
#include "treeattn/tree.hpp"
#include "treeattn/verify/checks.hpp"

namespace {

using namespace treeattn;
using json = nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitAcceptance = 4;

// Reference totals for the base-scale presets (baseline and tree models).
constexpr std::size_t kReferenceBaselineTotal = 61747200;
constexpr std::size_t kReferenceTreeTotal = 61810944;

// ---------------------------------------------------------------------------
// configuration flags shared by every subcommand

struct ConfigArgs {
  std::string default_preset;
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

void add_config_options(CLI::App* app, ConfigArgs& a, const std::string& default_preset) {
  a.default_preset = default_preset;
  app->add_option("--config", a.config_path, "Config file of key = value lines")->check(CLI::ExistingFile);
  app->add_option("--preset", a.preset, "Named preset (default " + default_preset + ")");
  app->add_option("--set", a.sets, "Override as key=value (repeatable)");
  for (const auto& f : detail::config_fields()) {
    const std::string key = f.key;
    a.options.emplace_back(key, app->add_option("--" + dashed(key), a.values[key], f.doc)->type_name(f.type));
  }
}

ModelConfig resolve_config(const ConfigArgs& a) {
  ModelConfig cfg = preset(a.preset.empty() ? a.default_preset : a.preset);
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw IoError("cannot open config " + a.config_path);
    cfg = parse_config(in, cfg);
  }
  for (const auto& [key, opt] : a.options)
    if (opt->count() > 0) set_config_value(cfg, key, a.values.at(key));
  for (const auto& s : a.sets) apply_override(cfg, s);
  validate_config(cfg);
  return cfg;
}

void echo_config(const ModelConfig& cfg, const std::string& source) {
  std::cerr << "# resolved config (" << source << ")\n";
  for (const auto& [k, v] : config_entries(cfg)) std::cerr << "# " << k << " = " << v << "\n";
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

/// Trees from a file: bracketed trees one per line, or corpus lines
/// (label<TAB>tree...) whose trees are taken in order.
std::vector<ParseTree> read_tree_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ParseTree> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    const std::size_t first = fields.size() > 1 ? 1 : 0;
    for (std::size_t k = first; k < fields.size(); ++k) {
      try {
        out.push_back(parse_bracketed(fields[k]));
      } catch (const ParseError& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// encodings as JSON lines

json encoding_to_json(const TreeEncoding& enc) {
  json rules = json::array();
  for (const auto& r : enc.rules) {
    json set = json::array();
    for (const auto& e : r) set.push_back((e.is_node() ? "n" : "l") + std::to_string(e.index));
    rules.push_back(set);
  }
  return json{{"leaves", enc.leaves}, {"nodes", enc.nodes}, {"rules", rules}};
}

TreeEncoding encoding_from_json(const json& j) {
  TreeEncoding enc;
  enc.leaves = j.at("leaves").get<std::vector<std::string>>();
  enc.nodes = j.at("nodes").get<std::vector<std::string>>();
  for (const auto& set : j.at("rules")) {
    std::vector<Element> r;
    for (const auto& item : set) {
      const std::string s = item.get<std::string>();
      if (s.size() < 2 || (s[0] != 'n' && s[0] != 'l') || s.find_first_not_of("0123456789", 1) != std::string::npos) {
        throw DataError("rule element '" + s + "' is not n<index> or l<index>");
      }
      const std::size_t idx = std::stoull(s.substr(1));
      r.push_back(s[0] == 'n' ? Element::node(idx) : Element::leaf(idx));
    }
    std::sort(r.begin(), r.end());
    enc.rules.push_back(std::move(r));
  }
  if (enc.rules.size() != enc.nodes.size()) throw DataError("rules and nodes differ in length");
  return enc;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_tree_roundtrip(const ModelConfig& cfg, const std::string& in, bool normalize, const std::string& encodings_out) {
  const auto trees = read_tree_lines(in);
  std::ofstream enc_out;
  if (!encodings_out.empty()) enc_out = open_output(encodings_out);
  std::size_t ok = 0;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    const ParseTree t = normalize ? normalize_tree(trees[k], {cfg.drop_preterminals, cfg.collapse_unary}) : trees[k];
    const TreeEncoding enc = encode_tree(t);
    const Diagnostics diag = validate(enc);
    bool same = diag.empty();
    if (same) same = decode_tree(enc) == t;
    ok += same;
    std::cout << "tree " << k << ": " << (same ? "ok" : "MISMATCH") << " leaves=" << enc.num_leaves()
              << " nodes=" << enc.num_nodes() << "\n";
    if (!same) std::cout << "  input:   " << to_bracketed(t) << "\n";
    if (enc_out.is_open()) enc_out << encoding_to_json(enc).dump() << "\n";
  }
  std::cout << "roundtrip: " << ok << "/" << trees.size() << " trees reproduced\n";
  return ok == trees.size() ? 0 : kExitAcceptance;
}

int cmd_tree_validate(const std::string& encodings, const std::string& trees_path) {
  std::vector<std::pair<std::string, TreeEncoding>> items;
  if (!encodings.empty()) {
    std::ifstream in(encodings);
    if (!in) throw IoError("cannot open " + encodings);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
        items.emplace_back("line " + std::to_string(lineno), encoding_from_json(j));
      } catch (const json::exception& e) {
        throw DataError(encodings + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  if (!trees_path.empty()) {
    const auto trees = read_tree_lines(trees_path);
    for (std::size_t k = 0; k < trees.size(); ++k) items.emplace_back("tree " + std::to_string(k), encode_tree(trees[k]));
  }
  std::size_t bad = 0;
  for (const auto& [name, enc] : items) {
    const Diagnostics d = validate(enc);
    if (d.empty()) {
      std::cout << name << ": valid\n";
    } else {
      ++bad;
      std::cout << name << ": invalid\n" << describe(d);
    }
  }
  std::cout << "validate: " << (items.size() - bad) << "/" << items.size() << " valid\n";
  return bad == 0 ? 0 : kExitData;
}

int cmd_bpe_split(const std::string& codes_path, const std::string& in, const std::string& out_path) {
  std::ifstream cin_codes(codes_path);
  if (!cin_codes) throw IoError("cannot open " + codes_path);
  const BpeCodes codes = BpeCodes::parse(cin_codes);
  const auto trees = read_tree_lines(in);
  std::ofstream file;
  if (!out_path.empty()) file = open_output(out_path);
  std::ostream& out = out_path.empty() ? std::cout : file;
  for (const auto& t : trees) out << to_bracketed(apply_bpe_split(t, codes.splitter())) << "\n";
  return 0;
}

int cmd_oracle_check(std::size_t trees, std::size_t max_leaves, std::size_t max_d, std::uint64_t seed) {
  const auto k = verify::kernel_oracle_sweep(trees, max_leaves, max_d, seed);
  const auto rt = verify::roundtrip_sweep(trees, 64, 5, seed);
  const auto mask = verify::masking_sweep(trees, max_leaves, seed);
  std::cout << std::setprecision(3);
  std::cout << "kernel oracles: " << k.cases << " trees, max abs diff " << k.worst << "\n";
  std::cout << "round trip: " << rt.cases - rt.failures << "/" << rt.cases << " reproduced\n";
  std::cout << "masking: max masked weight " << mask.worst_masked << ", max row error " << mask.worst_row
            << ", max cross row error " << mask.worst_cross_row << "\n";
  const bool pass = k.worst < 1e-12 && rt.failures == 0 && mask.worst_masked == 0.0 && mask.worst_row < 1e-12 &&
                    mask.worst_cross_row < 1e-12;
  std::cout << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : kExitAcceptance;
}

int cmd_grad_check(const ModelConfig& cfg, std::size_t leaves, std::size_t prefix, std::size_t max_coords) {
  if (cfg.d > 16) std::cerr << "warning: gradient checks are meant for d <= 16\n";
  FdOptions fd;
  fd.max_coords = max_coords;
  fd.seed = cfg.seed;
  const auto r = grad_check_model(cfg, gradcheck_tree(leaves), prefix, fd);
  std::cout << "task " << cfg.task << ", " << leaves << " leaves, " << r.parameters << " parameters in "
            << r.groups.size() << " groups, " << r.coords_checked << " coordinates checked\n";
  std::cout << "max_rel_error " << std::setprecision(6) << r.max_rel_error << " (worst: " << r.worst_param << ")\n";
  if (r.max_rel_error >= 1e-4) {
    std::cout << "FAIL: gradient mismatch in " << r.worst_param << "\n";
    return kExitAcceptance;
  }
  std::cout << "PASS\n";
  return 0;
}

template <typename T>
int train_impl(ModelConfig cfg, const std::string& train_path, const std::string& dev_path, const std::string& out,
               const std::string& report_path, const std::string& log_path) {
  const auto train_docs = read_corpus_file(train_path);
  const auto dev_docs = read_corpus_file(dev_path);
  const DataVocabs vocabs = build_vocabs(train_docs, cfg);
  const auto train = prepare_examples(train_docs, cfg, vocabs);
  const auto dev = prepare_examples(dev_docs, cfg, vocabs);
  TreeModel<T> model(cfg);
  std::cerr << "train: " << train.size() << " examples, dev: " << dev.size() << ", parameters: " << model.parameter_count()
            << "\n";
  TrainOptions opt;
  opt.log = &std::cerr;
  const TrainResult r = train_classifier(model, train, dev, opt);
  std::ostringstream best;
  best << std::setprecision(17) << r.best_dev_accuracy;
  save_checkpoint(out, model.to_checkpoint({{"vocab.tokens", vocabs.tokens.serialize()},
                                            {"vocab.labels", vocabs.labels.serialize()},
                                            {"train.best_dev_accuracy", best.str()},
                                            {"train.best_update", std::to_string(r.best_update)},
                                            {"train.updates", std::to_string(r.updates)}}));
  if (!report_path.empty()) {
    auto csv = open_output(report_path);
    csv << "update,train_loss,dev_accuracy,seconds\n" << std::setprecision(17);
    for (const auto& h : r.history) csv << h.update << ',' << h.train_loss << ',' << h.dev_accuracy << ',' << h.seconds << '\n';
  }
  if (!log_path.empty()) {
    auto log = open_output(log_path);
    for (const auto& h : r.history) {
      log << json{{"update", h.update}, {"train_loss", h.train_loss}, {"dev_accuracy", h.dev_accuracy}, {"seconds", h.seconds}}
                 .dump()
          << "\n";
    }
  }
  std::cout << "best_dev_accuracy " << r.best_dev_accuracy << " at update " << r.best_update << " of " << r.updates << "\n";
  std::cout << "checkpoint " << out << "\n";
  return 0;
}

template <typename T>
struct Loaded {
  TreeModel<T> model;
  DataVocabs vocabs;
};

template <typename T>
Loaded<T> load_model(const std::vector<std::uint8_t>& bytes) {
  const auto ck = checkpoint_from_bytes<T>(bytes);
  auto find = [&ck](const std::string& key) {
    const auto it = ck.metadata.find(key);
    if (it == ck.metadata.end()) throw DataError("checkpoint has no " + key + " entry");
    return it->second;
  };
  echo_config(TreeModel<T>::config_from_checkpoint(ck.metadata), "checkpoint");
  return {TreeModel<T>::from_checkpoint(ck), {Vocab::deserialize(find("vocab.tokens")), Vocab::deserialize(find("vocab.labels"))}};
}

template <typename T>
int eval_impl(const std::vector<std::uint8_t>& bytes, const std::string& in, const std::string& predictions_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto docs = read_corpus_file(in);
  const auto t1 = std::chrono::steady_clock::now();
  const Loaded<T> m = load_model<T>(bytes);
  const auto data = prepare_examples(docs, m.model.config(), m.vocabs);
  const auto preds = predict(m.model, data);
  const auto t2 = std::chrono::steady_clock::now();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += preds[i] == data[i].label;
  if (!predictions_path.empty()) {
    auto out = open_output(predictions_path);
    for (std::size_t i = 0; i < preds.size(); ++i) out << preds[i] << '\t' << data[i].label << '\n';
  }
  if (data.empty()) throw DataError("evaluation corpus is empty");
  std::cout << "examples " << data.size() << "\n";
  std::cout << "accuracy " << static_cast<double>(hit) / static_cast<double>(data.size()) << "\n";
  std::cerr << "parse_seconds " << std::chrono::duration<double>(t1 - t0).count() << "\n";
  std::cerr << "inference_seconds " << std::chrono::duration<double>(t2 - t0).count() << "\n";
  return 0;
}

template <typename T>
int attn_stats_impl(const std::vector<std::uint8_t>& bytes, const std::string& in) {
  const Loaded<T> m = load_model<T>(bytes);
  if (m.model.config().task != "classify") throw ConfigError("attn-stats reads encoder-only (classify) checkpoints");
  const auto data = prepare_examples(read_corpus_file(in), m.model.config(), m.vocabs);
  const AttentionMass s = attention_mass_stats(m.model, data);
  std::cout << std::setprecision(6);
  std::cout << "queries " << s.queries << "\n";
  std::cout << "node_mass " << s.node_mass << "\nleaf_mass " << s.leaf_mass << "\n";
  std::cout << "node_count_share " << s.node_count_share << "\nleaf_count_share " << s.leaf_count_share << "\n";
  std::cout << "max_row_error " << s.max_row_error << "\n";
  return std::abs(s.node_mass + s.leaf_mass - 1.0) < 1e-9 || s.queries == 0 ? 0 : kExitNumeric;
}

int cmd_bench(const ModelConfig& cfg, const std::string& lengths_arg, std::size_t repeats, const std::string& out,
              bool timing) {
  std::vector<std::size_t> lengths;
  std::istringstream ls(lengths_arg);
  std::string item;
  while (std::getline(ls, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("--lengths expects comma-separated integers, got '" + lengths_arg + "'");
    }
    lengths.push_back(std::stoull(item));
  }
  BenchOptions opt;
  opt.d = cfg.d;
  opt.heads = cfg.heads;
  opt.d_ffn = cfg.d_ffn;
  opt.hier_rows = cfg.hier_rows;
  opt.seed = cfg.seed;
  const BenchReport rep = bench_accumulation(lengths, repeats, opt);
  std::ofstream file;
  if (!out.empty()) file = open_output(out);
  write_bench_csv(out.empty() ? std::cout : file, rep, timing);
  std::cerr << "fit c = " << rep.c << ", max |residual| = " << rep.max_abs_residual << "\n";
  for (std::size_t k = 1; k < rep.rows.size(); ++k) {
    std::cerr << "n " << rep.rows[k - 1].n << " -> " << rep.rows[k].n << ": accumulate ratio "
              << static_cast<double>(rep.rows[k].accumulate_ops) / static_cast<double>(rep.rows[k - 1].accumulate_ops)
              << ", layer ratio "
              << static_cast<double>(rep.rows[k].layer_ops) / static_cast<double>(rep.rows[k - 1].layer_ops) << "\n";
  }
  return 0;
}

int cmd_count_params(const ModelConfig& cfg) {
  if (cfg.token_vocab == 0) throw ConfigError("count-params needs token_vocab > 0");
  if (cfg.tree_mode && cfg.label_vocab == 0) throw ConfigError("count-params needs label_vocab > 0 in tree mode");
  const ParamBreakdown b = count_parameters(cfg);
  ModelConfig base_cfg = cfg;
  base_cfg.tree_mode = false;
  const std::size_t baseline = count_parameters(base_cfg).total();
  for (const auto& [name, n] : b.items) std::cout << std::left << std::setw(24) << name << n << "\n";
  std::cout << std::left << std::setw(24) << "total" << b.total() << "\n";
  std::cout << std::left << std::setw(24) << "baseline total" << baseline << "\n";
  const std::size_t over = b.total() - baseline;
  std::cout << std::left << std::setw(24) << "tree overhead" << over << " (" << std::fixed << std::setprecision(4)
            << 100.0 * static_cast<double>(over) / static_cast<double>(b.total()) << "% of total)\n";
  if (cfg.preset == "base-tree" || cfg.preset == "base-baseline") {
    const std::size_t ref = cfg.tree_mode ? kReferenceTreeTotal : kReferenceBaselineTotal;
    const long long residual = static_cast<long long>(b.total()) - static_cast<long long>(ref);
    std::cout << std::left << std::setw(24) << "reference total" << ref << " (residual " << std::showpos << residual
              << std::noshowpos << ")\n";
  }
  return 0;
}

int cmd_make_synth(const ModelConfig& cfg, std::size_t size, const SyntheticOptions& base, const std::string& out) {
  SyntheticOptions opt = base;
  opt.seed = cfg.seed;
  const auto docs = make_synthetic_dataset(size, opt);
  if (out.empty()) {
    write_corpus(std::cout, docs);
  } else {
    write_corpus_file(out, docs);
  }
  std::size_t ones = 0;
  for (const auto& d : docs) ones += d.label;
  std::cerr << "wrote " << docs.size() << " documents, class 1 share " << static_cast<double>(ones) / static_cast<double>(std::max<std::size_t>(docs.size(), 1))
            << "\n";
  return 0;
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kUsage:
    case ErrorCategory::kConfig: return kExitUsage;
    case ErrorCategory::kNumeric: return kExitNumeric;
    default: return kExitData;
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Tree-structured attention: tree encoding, training, evaluation and diagnostics.", "treeattn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "treeattn 1.0.0");

  std::map<std::string, ConfigArgs> cfgs;
  auto sub = [&](const std::string& name, const std::string& desc, const std::string& preset_name) {
    CLI::App* s = app.add_subcommand(name, desc);
    add_config_options(s, cfgs[name], preset_name);
    return s;
  };

  std::string in, out, codes, encodings, trees_path, report, log, ckpt, predictions, lengths = "128,256,512,1024";
  std::string train_path, dev_path;
  bool normalize = false, no_timing = false;
  std::size_t oracle_trees = 200, max_leaves = 12, max_d = 8, leaves = 5, prefix = 2, max_coords = 0, repeats = 3,
              synth_size = 1000;
  SyntheticOptions synth;

  auto* rt = sub("tree-roundtrip", "Encode, validate and decode trees; report exact reconstruction", "tiny");
  rt->add_option("--in", in, "Bracketed trees, one per line (or label<TAB>tree lines)")->required()->check(CLI::ExistingFile);
  rt->add_flag("--normalize", normalize, "Apply the model pipeline normalization first");
  rt->add_option("--encodings-out", out, "Write encodings as JSON lines");

  auto* tv = sub("tree-validate", "Validate (L, N, R) encodings and print diagnostics", "tiny");
  tv->add_option("--encodings", encodings, "JSON lines with leaves, nodes and rules")->check(CLI::ExistingFile);
  tv->add_option("--trees", trees_path, "Bracketed trees to encode and validate")->check(CLI::ExistingFile);

  auto* bpe = sub("bpe-split", "Split multi-piece words into subword subtrees", "tiny");
  bpe->add_option("--codes", codes, "BPE merge table")->required()->check(CLI::ExistingFile);
  bpe->add_option("--in", in, "Bracketed trees")->required()->check(CLI::ExistingFile);
  bpe->add_option("--out", out, "Output file (default stdout)");

  auto* oc = sub("oracle-check", "Compare kernels with set-enumeration oracles on random trees", "tiny");
  oc->add_option("--trees", oracle_trees, "Number of random trees")->capture_default_str();
  oc->add_option("--max-leaves", max_leaves, "Largest tree size")->capture_default_str();
  oc->add_option("--max-d", max_d, "Largest feature width")->capture_default_str();

  auto* gc = sub("grad-check", "Finite-difference check of every model parameter group", "tiny");
  gc->add_option("--leaves", leaves, "Leaves in the fixture tree")->capture_default_str();
  gc->add_option("--prefix", prefix, "Decoder prefix length (seq2seq)")->capture_default_str();
  gc->add_option("--max-coords", max_coords, "Coordinate sample size (0 = all)")->capture_default_str();

  auto* tr = sub("train", "Train a tree classifier; keeps the best dev checkpoint", "tiny");
  tr->add_option("--train", train_path, "Training corpus (label<TAB>tree)")->required()->check(CLI::ExistingFile);
  tr->add_option("--dev", dev_path, "Dev corpus")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", ckpt, "Checkpoint path")->required();
  tr->add_option("--report", report, "CSV learning curve");
  tr->add_option("--log", log, "JSON-lines learning curve");

  auto* ev = sub("eval", "Accuracy of a checkpoint on a corpus", "tiny");
  ev->add_option("--checkpoint", ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  ev->add_option("--in", in, "Corpus (label<TAB>tree)")->required()->check(CLI::ExistingFile);
  ev->add_option("--predictions", predictions, "Write predicted<TAB>gold per line");

  auto* as = sub("attn-stats", "Attention mass on nodes versus leaves", "tiny");
  as->add_option("--checkpoint", ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  as->add_option("--in", in, "Corpus (label<TAB>tree)")->required()->check(CLI::ExistingFile);

  auto* bn = sub("bench", "Op counts and timings of accumulation and a full layer", "tiny");
  bn->add_option("--lengths", lengths, "Comma-separated leaf counts, ascending")->capture_default_str();
  bn->add_option("--repeats", repeats, "Timing repeats per length (0 = empty report)")->capture_default_str();
  bn->add_option("--out", out, "CSV path (default stdout)");
  bn->add_flag("--no-timing", no_timing, "Omit wall-time columns");

  auto* cp = sub("count-params", "Itemized parameter count and tree overhead", "base-tree");

  auto* ms = sub("make-synth", "Generate the nested MIN/MAX/NEG classification corpus", "synthetic");
  ms->add_option("--size", synth_size, "Documents to generate")->capture_default_str();
  ms->add_option("--out", out, "Corpus path (default stdout)");
  ms->add_option("--max-depth", synth.max_depth, "Operator nesting depth")->capture_default_str();
  ms->add_option("--max-arity", synth.max_arity, "Largest MIN/MAX arity")->capture_default_str();
  ms->add_option("--min-leaves", synth.min_leaves, "Fewest leaves per tree")->capture_default_str();
  ms->add_option("--max-leaves", synth.max_leaves, "Most leaves per tree")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const ModelConfig cfg = resolve_config(cfgs.at(chosen->get_name()));
    if (chosen != ev && chosen != as) echo_config(cfg, "command line");
    if (chosen == rt) return cmd_tree_roundtrip(cfg, in, normalize, out);
    if (chosen == tv) {
      if (encodings.empty() && trees_path.empty()) throw ConfigError("tree-validate needs --encodings or --trees");
      return cmd_tree_validate(encodings, trees_path);
    }
    if (chosen == bpe) return cmd_bpe_split(codes, in, out);
    if (chosen == oc) return cmd_oracle_check(oracle_trees, max_leaves, max_d, cfg.seed);
    if (chosen == gc) return cmd_grad_check(cfg, leaves, prefix, max_coords);
    if (chosen == tr) {
      if (cfg.task != "classify") throw ConfigError("train supports task = classify");
      return cfg.float_width == 32 ? train_impl<float>(cfg, train_path, dev_path, ckpt, report, log)
                                   : train_impl<double>(cfg, train_path, dev_path, ckpt, report, log);
    }
    if (chosen == ev || chosen == as) {
      const auto bytes = read_file_bytes(ckpt);
      const bool f32 = checkpoint_float_width(bytes) == 32;
      if (chosen == ev) return f32 ? eval_impl<float>(bytes, in, predictions) : eval_impl<double>(bytes, in, predictions);
      return f32 ? attn_stats_impl<float>(bytes, in) : attn_stats_impl<double>(bytes, in);
    }
    if (chosen == bn) return cmd_bench(cfg, lengths, repeats, out, !no_timing);
    if (chosen == cp) return cmd_count_params(cfg);
    if (chosen == ms) return cmd_make_synth(cfg, synth_size, synth, out);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "treeattn: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "treeattn: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
