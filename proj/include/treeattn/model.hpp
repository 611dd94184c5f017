// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_MODEL_HPP
#define TREEATTN_MODEL_HPP

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "treeattn/accumulation.hpp"
#include "treeattn/attention.hpp"
#include "treeattn/checkpoint.hpp"
#include "treeattn/config.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/error.hpp"
#include "treeattn/ops.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

/// A source tree ready for the encoder: its encoding, branch sets, subtree
/// mask and vocabulary ids. Built once per example and reused every epoch.
struct TreeInput {
  TreeEncoding enc;
  BranchSets branches = BranchSets::leaves_only(0);
  Mask mask;
  std::vector<std::size_t> token_ids;  // one per leaf
  std::vector<std::size_t> label_ids;  // one per node, post-order

  static TreeInput make(TreeEncoding enc, std::vector<std::size_t> token_ids, std::vector<std::size_t> label_ids) {
    if (token_ids.size() != enc.num_leaves() || label_ids.size() != enc.num_nodes()) {
      throw DimensionError("tree input ids do not match the encoding");
    }
    if (enc.num_leaves() == 0) throw DataError("tree has no leaves");
    TreeInput x;
    x.branches = enc.num_nodes() == 0 ? BranchSets::leaves_only(enc.num_leaves()) : BranchSets(enc);
    x.mask = build_subtree_mask(enc);
    x.enc = std::move(enc);
    x.token_ids = std::move(token_ids);
    x.label_ids = std::move(label_ids);
    return x;
  }

  std::size_t num_leaves() const { return enc.num_leaves(); }
  std::size_t num_nodes() const { return enc.num_nodes(); }
};

/// Itemized parameter count derived from a configuration alone.
struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> items;

  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& [name, n] : items) s += n;
    return s;
  }
  std::size_t get(const std::string& name) const {
    for (const auto& [k, n] : items)
      if (k == name) return n;
    return 0;
  }
};

inline std::size_t attention_param_count(std::size_t d, bool with_u) { return 4 * d * d + (with_u ? d : 0); }
inline std::size_t ffn_param_count(std::size_t d, std::size_t d_ffn) { return 2 * d * d_ffn + d_ffn + d + 4 * d; }

/// Requires resolved vocabulary sizes (token_vocab and, in tree mode, label_vocab).
inline ParamBreakdown count_parameters(const ModelConfig& c) {
  const std::size_t d = c.d;
  ParamBreakdown b;
  b.items.emplace_back("token embeddings", c.token_vocab * d);
  b.items.emplace_back("encoder layers", c.layers_enc * (attention_param_count(d, false) + ffn_param_count(d, c.d_ffn)));
  if (c.task == "seq2seq") {
    const std::size_t dec = attention_param_count(d, false) + 2 * d + attention_param_count(d, false) +
                            ffn_param_count(d, c.d_ffn);
    b.items.emplace_back("decoder layers", c.layers_dec * dec);
    if (!c.tie_embeddings) {
      b.items.emplace_back("target embeddings", c.target_vocab * d);
      b.items.emplace_back("output projection", d * c.target_vocab);
    }
  } else {
    b.items.emplace_back("classifier head", d * c.classes + c.classes);
  }
  if (c.tree_mode) {
    b.items.emplace_back("hierarchical tables", 2 * c.hier_rows * (d / 2));
    b.items.emplace_back("encoder u_s", c.layers_enc * d);
    if (c.task == "seq2seq") b.items.emplace_back("decoder u_c", c.layers_dec * d);
    b.items.emplace_back("node label embeddings", c.label_vocab * d);
  }
  return b;
}

template <typename T>
struct EncoderLayer {
  AttentionParams<T> attn;
  FfnParams<T> ffn;
};

template <typename T>
struct DecoderLayer {
  AttentionParams<T> self_attn;
  Tensor<T> ln_gain, ln_bias;
  AttentionParams<T> cross_attn;
  FfnParams<T> ffn;
};

/// Tree-attention encoder with either a classification head or a
/// Transformer decoder. With tree_mode off it is the plain Transformer over
/// the leaf sequence and holds no tree-specific parameters.
template <typename T>
class TreeModel {
 public:
  TreeModel() = default;

  explicit TreeModel(const ModelConfig& cfg) : cfg_(cfg) {
    validate_config(cfg);
    if (cfg.token_vocab == 0) throw ConfigError("token_vocab must be resolved before building a model");
    if (cfg.tree_mode && cfg.label_vocab == 0) throw ConfigError("label_vocab must be resolved before building a model");
    if (cfg.task == "seq2seq" && !cfg.tie_embeddings && cfg.target_vocab == 0) {
      throw ConfigError("target_vocab must be set when embeddings are untied");
    }
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.d;
    const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
    tokens_ = normal_parameter<T>({cfg.token_vocab, d}, embed_std, rng);
    if (cfg.tree_mode) {
      labels_ = normal_parameter<T>({cfg.label_vocab, d}, embed_std, rng);
      hier_ = HierEmbedTable<T>::create(cfg.hier_rows, d / 2, rng, embed_std);
    }
    auto make_attn = [&](bool with_u) {
      auto p = AttentionParams<T>::create(d, cfg.heads, with_u, rng);
      p.dropout = cfg.attn_dropout;
      return p;
    };
    auto make_ffn = [&] {
      auto f = FfnParams<T>::create(d, cfg.d_ffn, rng);
      f.dropout = cfg.dropout;
      return f;
    };
    for (std::size_t l = 0; l < cfg.layers_enc; ++l) enc_.push_back({make_attn(cfg.tree_mode), make_ffn()});
    if (cfg.task == "seq2seq") {
      for (std::size_t l = 0; l < cfg.layers_dec; ++l) {
        DecoderLayer<T> layer;
        layer.self_attn = make_attn(false);
        layer.ln_gain = Tensor<T>::parameter({d}, std::vector<T>(d, T(1)));
        layer.ln_bias = Tensor<T>::parameter({d}, std::vector<T>(d, T(0)));
        layer.cross_attn = make_attn(cfg.tree_mode);
        layer.ffn = make_ffn();
        dec_.push_back(std::move(layer));
      }
      if (!cfg.tie_embeddings) {
        target_ = normal_parameter<T>({cfg.target_vocab, d}, embed_std, rng);
        output_ = uniform_parameter<T>({d, cfg.target_vocab}, embed_std, rng);
      }
    } else {
      head_w_ = uniform_parameter<T>({d, cfg.classes}, embed_std, rng);
      head_b_ = Tensor<T>::parameter({cfg.classes}, std::vector<T>(cfg.classes, T(0)));
    }
  }

  const ModelConfig& config() const { return cfg_; }

  /// Every trainable tensor under a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embed.tokens", tokens_);
    if (labels_.defined()) out.emplace_back("embed.labels", labels_);
    if (hier_.vertical.defined()) {
      out.emplace_back("hier.vertical", hier_.vertical);
      out.emplace_back("hier.horizontal", hier_.horizontal);
    }
    auto attn = [&out](const std::string& prefix, const AttentionParams<T>& p) {
      out.emplace_back(prefix + ".wq", p.wq);
      out.emplace_back(prefix + ".wk", p.wk);
      out.emplace_back(prefix + ".wv", p.wv);
      out.emplace_back(prefix + ".wo", p.wo);
      if (p.u.defined()) out.emplace_back(prefix + ".u", p.u);
    };
    auto ffn = [&out](const std::string& prefix, const FfnParams<T>& f) {
      out.emplace_back(prefix + ".w1", f.w1);
      out.emplace_back(prefix + ".b1", f.b1);
      out.emplace_back(prefix + ".w2", f.w2);
      out.emplace_back(prefix + ".b2", f.b2);
      out.emplace_back(prefix + ".ln1.gain", f.ln1_gain);
      out.emplace_back(prefix + ".ln1.bias", f.ln1_bias);
      out.emplace_back(prefix + ".ln2.gain", f.ln2_gain);
      out.emplace_back(prefix + ".ln2.bias", f.ln2_bias);
    };
    for (std::size_t l = 0; l < enc_.size(); ++l) {
      const std::string p = "enc." + std::to_string(l);
      attn(p + ".attn", enc_[l].attn);
      ffn(p + ".ffn", enc_[l].ffn);
    }
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      const std::string p = "dec." + std::to_string(l);
      attn(p + ".self", dec_[l].self_attn);
      out.emplace_back(p + ".ln0.gain", dec_[l].ln_gain);
      out.emplace_back(p + ".ln0.bias", dec_[l].ln_bias);
      attn(p + ".cross", dec_[l].cross_attn);
      ffn(p + ".ffn", dec_[l].ffn);
    }
    if (target_.defined()) out.emplace_back("embed.target", target_);
    if (output_.defined()) out.emplace_back("out.proj", output_);
    if (head_w_.defined()) {
      out.emplace_back("head.w", head_w_);
      out.emplace_back("head.b", head_b_);
    }
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  /// Encoder states. Leaves start as scaled token embeddings plus sinusoidal
  /// positions; nodes as scaled label embeddings.
  TreeStates<T> encode(const TreeInput& x, const ForwardContext& ctx = {}) const {
    const T scale_factor = static_cast<T>(std::sqrt(static_cast<double>(cfg_.d)));
    const std::size_t n = x.num_leaves();
    Tensor<T> leaves = add(scale(embedding(tokens_, x.token_ids), scale_factor), sinusoidal_positions<T>(n, cfg_.d));
    leaves = maybe_dropout(leaves, cfg_.dropout, ctx);
    if (!cfg_.tree_mode) {
      for (const auto& layer : enc_) {
        leaves = transformer_layer_phi(standard_attention(leaves, leaves, leaves, layer.attn, false, ctx), leaves,
                                       layer.ffn, ctx);
      }
      return {leaves, Tensor<T>()};
    }
    Tensor<T> nodes;
    if (x.num_nodes() > 0) nodes = maybe_dropout(scale(embedding(labels_, x.label_ids), scale_factor), cfg_.dropout, ctx);
    const EncoderFlags flags{cfg_.use_hier_embeddings, cfg_.use_subtree_mask, cfg_.skip_masked_leaf_queries};
    TreeStates<T> s{leaves, nodes};
    for (const auto& layer : enc_) {
      s = encoder_tree_self_attention(s.leaves, s.nodes, x.branches, x.mask, layer.attn, layer.ffn, &hier_, flags, ctx);
    }
    return s;
  }

  /// Sentence representation: the root node in tree mode, the leaf mean otherwise.
  Tensor<T> pooled(const TreeStates<T>& s) const {
    if (cfg_.tree_mode && s.nodes.defined() && s.nodes.rows() > 0) return slice(s.nodes, 0, s.nodes.rows() - 1, 1);
    return mean(s.leaves, 0);
  }

  /// Class logits [1 × classes].
  Tensor<T> classify_logits(const TreeInput& x, const ForwardContext& ctx = {}) const {
    if (cfg_.task != "classify") throw ConfigError("classify_logits on a seq2seq model");
    Tensor<T> h = reshape(pooled(encode(x, ctx)), {1, cfg_.d});
    return add_bias(matmul(h, head_w_), head_b_);
  }

  /// Next-token logits [t × V] for teacher-forced decoder inputs.
  Tensor<T> seq2seq_logits(const TreeInput& x, const std::vector<std::size_t>& target_in,
                           const ForwardContext& ctx = {}) const {
    if (cfg_.task != "seq2seq") throw ConfigError("seq2seq_logits on a classification model");
    if (target_in.empty()) throw DataError("empty decoder input");
    const TreeStates<T> src = encode(x, ctx);
    const Tensor<T>& table = cfg_.tie_embeddings ? tokens_ : target_;
    const T scale_factor = static_cast<T>(std::sqrt(static_cast<double>(cfg_.d)));
    Tensor<T> y = add(scale(embedding(table, target_in), scale_factor), sinusoidal_positions<T>(target_in.size(), cfg_.d));
    y = maybe_dropout(y, cfg_.dropout, ctx);
    for (const auto& layer : dec_) {
      const Tensor<T> self = standard_attention(y, y, y, layer.self_attn, true, ctx);
      const Tensor<T> y1 = layer_norm(add(maybe_dropout(self, cfg_.dropout, ctx), y), layer.ln_gain, layer.ln_bias);
      const Tensor<T> cross = cfg_.tree_mode
                                  ? decoder_cross_attention(y1, src.leaves, src.nodes, x.branches, layer.cross_attn,
                                                            cfg_.use_hier_embeddings ? &hier_ : nullptr, ctx)
                                  : standard_attention(y1, src.leaves, src.leaves, layer.cross_attn, false, ctx);
      y = transformer_layer_phi(cross, y1, layer.ffn, ctx);
    }
    return cfg_.tie_embeddings ? matmul_nt(y, tokens_) : matmul(y, output_);
  }

  /// Parameters plus the resolved config (keys prefixed "config.") and `extra` metadata.
  Checkpoint<T> to_checkpoint(const std::map<std::string, std::string>& extra = {}) const {
    Checkpoint<T> ck;
    ck.metadata = extra;
    for (const auto& [k, v] : config_entries(cfg_)) ck.metadata["config." + k] = v;
    for (const auto& [name, t] : named_parameters()) ck.params.push_back({name, t.shape(), t.vec()});
    return ck;
  }

  static ModelConfig config_from_checkpoint(const std::map<std::string, std::string>& meta) {
    ModelConfig cfg;
    const auto version = meta.find("config.config_version");
    if (version == meta.end()) throw DataError("checkpoint has no model configuration");
    if (version->second != std::to_string(kConfigVersion)) throw DataError("unsupported config_version " + version->second);
    for (const auto& [k, v] : meta) {
      if (k.rfind("config.", 0) != 0 || k == "config.config_version") continue;
      if (k == "config.preset") {
        cfg.preset = v;
        continue;
      }
      set_config_value(cfg, k.substr(7), v);
    }
    return cfg;
  }

  /// Rebuilds the model and copies every tensor bit for bit.
  static TreeModel from_checkpoint(const Checkpoint<T>& ck) {
    TreeModel model(config_from_checkpoint(ck.metadata));
    const auto params = model.named_parameters();
    if (params.size() != ck.params.size()) {
      throw DataError("checkpoint holds " + std::to_string(ck.params.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
    }
    for (auto [name, t] : params) {
      const NamedTensor<T>* src = ck.find(name);
      if (!src) throw DataError("checkpoint is missing tensor " + name);
      if (src->shape != t.shape()) {
        throw DataError("tensor " + name + " has shape " + shape_string(src->shape) + ", expected " + shape_string(t.shape()));
      }
      auto dst = t.mutable_values();
      std::copy(src->data.begin(), src->data.end(), dst.begin());
    }
    return model;
  }

 private:
  ModelConfig cfg_;
  Tensor<T> tokens_, labels_, target_, output_, head_w_, head_b_;
  HierEmbedTable<T> hier_;
  std::vector<EncoderLayer<T>> enc_;
  std::vector<DecoderLayer<T>> dec_;
};

}  // namespace treeattn

#endif  // TREEATTN_MODEL_HPP
