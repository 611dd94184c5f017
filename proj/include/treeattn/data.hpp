// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_DATA_HPP
#define TREEATTN_DATA_HPP

// Classification corpora: one document per line, "label<TAB>tree[<TAB>tree...]".
// Several trees form a forest that is joined under a DOC root. Blank lines
// and lines starting with '#' are ignored.

#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "treeattn/config.hpp"
#include "treeattn/encoding.hpp"
#include "treeattn/error.hpp"
#include "treeattn/model.hpp"
#include "treeattn/tree.hpp"
#include "treeattn/vocab.hpp"

namespace treeattn {

struct Document {
  std::size_t label = 0;
  std::vector<ParseTree> trees;
};

inline std::vector<Document> read_corpus(std::istream& in, const std::string& source = "<corpus>") {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2) throw DataError(where + "expected label<TAB>tree");
    Document doc;
    const std::string& lab = fields[0];
    if (lab.empty() || lab.find_first_not_of("0123456789") != std::string::npos) {
      throw DataError(where + "label '" + lab + "' is not a non-negative integer");
    }
    doc.label = static_cast<std::size_t>(std::stoull(lab));
    for (std::size_t k = 1; k < fields.size(); ++k) {
      try {
        doc.trees.push_back(parse_bracketed(fields[k]));
      } catch (const ParseError& e) {
        throw DataError(where + "tree " + std::to_string(k) + ": " + e.what());
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline std::vector<Document> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path);
  return read_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const std::vector<Document>& docs) {
  for (const auto& d : docs) {
    out << d.label;
    for (const auto& t : d.trees) out << '\t' << to_bracketed(t);
    out << '\n';
  }
}

inline void write_corpus_file(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path);
  write_corpus(out, docs);
}

/// The tree the encoder sees: normalized sentence trees, joined under DOC
/// when there is more than one.
inline ParseTree document_tree(const Document& doc, const ModelConfig& cfg) {
  if (doc.trees.empty()) throw DataError("document without trees");
  const NormalizeOptions opt{cfg.drop_preterminals, cfg.collapse_unary};
  std::vector<ParseTree> trees;
  for (const auto& t : doc.trees) trees.push_back(normalize_tree(t, opt));
  if (trees.size() == 1) return std::move(trees[0]);
  return join_forest(std::move(trees));
}

struct DataVocabs {
  Vocab tokens;
  Vocab labels;
};

/// Builds vocabularies from training documents and resolves the vocabulary
/// sizes left at 0 in `cfg`. Non-zero sizes cap the vocabulary.
inline DataVocabs build_vocabs(const std::vector<Document>& docs, ModelConfig& cfg) {
  std::vector<std::vector<std::string>> toks, labs;
  for (const auto& d : docs) {
    const TreeEncoding enc = encode_tree(document_tree(d, cfg));
    toks.push_back(enc.leaves);
    labs.push_back(enc.nodes);
  }
  DataVocabs v{Vocab::build(toks, cfg.token_vocab), Vocab::build(labs, cfg.label_vocab)};
  if (cfg.token_vocab == 0) cfg.token_vocab = v.tokens.size();
  if (cfg.label_vocab == 0) cfg.label_vocab = v.labels.size();
  return v;
}

struct Example {
  TreeInput input;
  std::size_t label = 0;
};

inline Example prepare_example(const Document& doc, const ModelConfig& cfg, const DataVocabs& v) {
  if (cfg.task == "classify" && doc.label >= cfg.classes) {
    throw DataError("label " + std::to_string(doc.label) + " outside " + std::to_string(cfg.classes) + " classes");
  }
  TreeEncoding enc = encode_tree(document_tree(doc, cfg));
  auto tok = v.tokens.ids(enc.leaves, cfg.unk_fallback);
  auto lab = v.labels.ids(enc.nodes);
  return {TreeInput::make(std::move(enc), std::move(tok), std::move(lab)), doc.label};
}

inline std::vector<Example> prepare_examples(const std::vector<Document>& docs, const ModelConfig& cfg,
                                             const DataVocabs& v) {
  std::vector<Example> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(prepare_example(d, cfg, v));
  return out;
}

}  // namespace treeattn

#endif  // TREEATTN_DATA_HPP
