// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_CONFIG_HPP
#define TREEATTN_CONFIG_HPP

// Flat "key = value" configuration. Lines starting with '#' are comments.
// The first significant line should be "config_version = 1"; files without
// it are read as version 1. Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "treeattn/error.hpp"

namespace treeattn {

inline constexpr int kConfigVersion = 1;

struct ModelConfig {
  std::string preset = "tiny";
  std::string task = "classify";  // classify | seq2seq

  // architecture
  std::size_t d = 16;
  std::size_t d_ffn = 32;
  std::size_t layers_enc = 1;
  std::size_t layers_dec = 0;
  std::size_t heads = 2;
  std::size_t hier_rows = 10;
  std::size_t token_vocab = 0;   // 0: sized from the training corpus
  std::size_t label_vocab = 0;   // 0: sized from the training corpus
  std::size_t target_vocab = 0;  // seq2seq only; ignored when embeddings are tied
  std::size_t classes = 2;
  bool tie_embeddings = false;
  bool unk_fallback = true;  // unknown tokens map to <unk> instead of failing

  // ablations and modes
  bool tree_mode = true;
  bool use_hier_embeddings = true;
  bool use_subtree_mask = true;
  bool skip_masked_leaf_queries = false;

  // data pipeline
  bool drop_preterminals = true;
  bool collapse_unary = true;

  // regularization
  double dropout = 0.1;
  double attn_dropout = 0.0;

  // training plan
  double lr = 7e-4;
  std::size_t warmup = 8000;
  std::size_t max_updates = 15000;
  std::size_t batch_tokens = 2000;
  std::size_t eval_every = 500;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double weight_decay = 0.0;

  std::size_t float_width = 64;
  std::uint64_t seed = 1;
};

namespace detail {

struct ConfigField {
  const char* key;
  const char* doc;
  const char* type;  // UINT, REAL, BOOL or TEXT
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&)> set;
};

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::string format_real(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

#define TREEATTN_SIZE_FIELD(name, doc)                                                       \
  ConfigField {                                                                              \
    #name, doc, "UINT", [](const ModelConfig& c) { return std::to_string(c.name); },        \
        [](ModelConfig& c, const std::string& v) { c.name = parse_size(#name, v); }          \
  }
#define TREEATTN_REAL_FIELD(name, doc)                                                       \
  ConfigField {                                                                              \
    #name, doc, "REAL", [](const ModelConfig& c) { return format_real(c.name); },           \
        [](ModelConfig& c, const std::string& v) { c.name = parse_real(#name, v); }          \
  }
#define TREEATTN_FLAG_FIELD(name, doc)                                                       \
  ConfigField {                                                                              \
    #name, doc, "BOOL", [](const ModelConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](ModelConfig& c, const std::string& v) { c.name = parse_flag(#name, v); }          \
  }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      ConfigField{"task", "classify | seq2seq", "TEXT", [](const ModelConfig& c) { return c.task; },
                  [](ModelConfig& c, const std::string& v) {
                    if (v != "classify" && v != "seq2seq") throw ConfigError("task: expected classify or seq2seq");
                    c.task = v;
                  }},
      TREEATTN_SIZE_FIELD(d, "model width"),
      TREEATTN_SIZE_FIELD(d_ffn, "inner width of the feed-forward block"),
      TREEATTN_SIZE_FIELD(layers_enc, "encoder layers"),
      TREEATTN_SIZE_FIELD(layers_dec, "decoder layers (seq2seq)"),
      TREEATTN_SIZE_FIELD(heads, "attention heads"),
      TREEATTN_SIZE_FIELD(hier_rows, "rows |E| of each hierarchical embedding table"),
      TREEATTN_SIZE_FIELD(token_vocab, "source token vocabulary size (0: from corpus)"),
      TREEATTN_SIZE_FIELD(label_vocab, "node label vocabulary size (0: from corpus)"),
      TREEATTN_SIZE_FIELD(target_vocab, "target vocabulary size when embeddings are untied"),
      TREEATTN_SIZE_FIELD(classes, "classification classes"),
      TREEATTN_FLAG_FIELD(tie_embeddings, "share source, target and output embeddings"),
      TREEATTN_FLAG_FIELD(unk_fallback, "map unknown tokens to <unk> (false: vocabulary error)"),
      TREEATTN_FLAG_FIELD(tree_mode, "tree attention (false: plain Transformer over leaves)"),
      TREEATTN_FLAG_FIELD(use_hier_embeddings, "add hierarchical embeddings during accumulation"),
      TREEATTN_FLAG_FIELD(use_subtree_mask, "restrict node queries to their subtree"),
      TREEATTN_FLAG_FIELD(skip_masked_leaf_queries, "skip leaf-to-node affinities removed by the mask"),
      TREEATTN_FLAG_FIELD(drop_preterminals, "drop part-of-speech preterminals before encoding"),
      TREEATTN_FLAG_FIELD(collapse_unary, "collapse unary node chains before encoding"),
      TREEATTN_REAL_FIELD(dropout, "dropout on embeddings and residual branches"),
      TREEATTN_REAL_FIELD(attn_dropout, "dropout on attention weights"),
      TREEATTN_REAL_FIELD(lr, "peak learning rate"),
      TREEATTN_SIZE_FIELD(warmup, "linear warmup updates"),
      TREEATTN_SIZE_FIELD(max_updates, "optimizer updates"),
      TREEATTN_SIZE_FIELD(batch_tokens, "leaf tokens per update"),
      TREEATTN_SIZE_FIELD(eval_every, "updates between dev evaluations"),
      TREEATTN_REAL_FIELD(beta1, "Adam first-moment decay"),
      TREEATTN_REAL_FIELD(beta2, "Adam second-moment decay"),
      TREEATTN_REAL_FIELD(adam_eps, "Adam epsilon"),
      TREEATTN_REAL_FIELD(weight_decay, "decoupled weight decay"),
      TREEATTN_SIZE_FIELD(float_width, "32 or 64"),
      ConfigField{"seed", "seed for every random stream", "UINT", [](const ModelConfig& c) { return std::to_string(c.seed); },
                  [](ModelConfig& c, const std::string& v) { c.seed = parse_size("seed", v); }},
  };
  return fields;
}

#undef TREEATTN_SIZE_FIELD
#undef TREEATTN_REAL_FIELD
#undef TREEATTN_FLAG_FIELD

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"tiny", "synthetic", "sst2", "sst5", "base-tree", "base-baseline"};
}

inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "tiny") return c;
  if (name == "synthetic") {
    c.d = 64;
    c.d_ffn = 128;
    c.layers_enc = 2;
    c.heads = 4;
    c.hier_rows = 10;
    c.collapse_unary = false;
    c.dropout = 0.1;
    c.lr = 1e-3;
    c.warmup = 200;
    c.max_updates = 2000;
    c.batch_tokens = 64;
    c.eval_every = 250;
    return c;
  }
  if (name == "sst2" || name == "sst5") {
    c.d = 64;
    c.d_ffn = 256;
    c.layers_enc = 2;
    c.heads = 4;
    c.hier_rows = 100;
    c.classes = name == "sst2" ? 2 : 5;
    c.dropout = 0.5;
    c.lr = 7e-4;
    c.warmup = 8000;
    c.max_updates = 15000;
    c.batch_tokens = 2000;
    return c;
  }
  if (name == "base-tree" || name == "base-baseline") {
    c.task = "seq2seq";
    c.d = 512;
    c.d_ffn = 2048;
    c.layers_enc = 6;
    c.layers_dec = 6;
    c.heads = 8;
    c.hier_rows = 100;
    c.token_vocab = 34464;
    c.label_vocab = 27;
    c.tie_embeddings = true;
    c.tree_mode = name == "base-tree";
    c.dropout = 0.3;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

/// Applies one "key=value" override.
inline void set_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const ModelConfig& cfg, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) return f.get(cfg);
  throw ConfigError("unknown config key '" + key + "'");
}

/// Parses an override of the form "key=value".
inline void apply_override(ModelConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void validate_config(const ModelConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.d == 0 || c.d % 2 != 0) fail("d must be positive and even");
  if (c.heads == 0 || c.d % c.heads != 0) fail("d must be divisible by heads");
  if (c.d_ffn == 0 || c.layers_enc == 0 || c.hier_rows == 0) fail("d_ffn, layers_enc and hier_rows must be positive");
  if (c.task == "classify" && c.classes < 2) fail("classes must be at least 2");
  if (c.task == "seq2seq" && c.layers_dec == 0) fail("seq2seq needs layers_dec >= 1");
  if (c.dropout < 0 || c.dropout >= 1 || c.attn_dropout < 0 || c.attn_dropout >= 1) fail("dropout rates must lie in [0, 1)");
  if (c.float_width != 32 && c.float_width != 64) fail("float_width must be 32 or 64");
  if (c.lr < 0) fail("lr must be non-negative");
  if (c.warmup > c.max_updates && c.max_updates > 0) fail("warmup must not exceed max_updates");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.adam_eps > 0)) fail("invalid Adam moments");
}

/// Reads a config file on top of `base` (its preset key, if any, is applied first).
inline ModelConfig parse_config(std::istream& in, ModelConfig base = {}) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    entries.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  ModelConfig cfg = base;
  for (const auto& [k, v] : entries) {
    if (k == "preset") cfg = preset(v);
  }
  for (const auto& [k, v] : entries) {
    if (k == "preset") continue;
    if (k == "config_version") {
      if (v != std::to_string(kConfigVersion)) throw ConfigError("unsupported config_version " + v);
      continue;
    }
    set_config_value(cfg, k, v);
  }
  return cfg;
}

inline ModelConfig parse_config_string(const std::string& text, ModelConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

/// Every key with its resolved value, in schema order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out{{"config_version", std::to_string(kConfigVersion)},
                                                       {"preset", cfg.preset}};
  for (const auto& f : detail::config_fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

inline std::string config_to_string(const ModelConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

/// One line per key: "key  description".
inline std::string config_schema() {
  std::string s;
  for (const auto& f : detail::config_fields()) s += std::string(f.key) + "  " + f.doc + "\n";
  return s;
}

}  // namespace treeattn

#endif  // TREEATTN_CONFIG_HPP
