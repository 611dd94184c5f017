// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_ERROR_HPP
#define TREEATTN_ERROR_HPP

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace treeattn {

enum class ErrorCategory {
  kUsage,
  kData,
  kNumeric,
  kDimension,
  kContract,
  kParse,
  kInvalidTree,
  kConfig,
  kVocab,
  kIo,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kUsage: return "usage";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kDimension: return "dimension";
    case ErrorCategory::kContract: return "contract";
    case ErrorCategory::kParse: return "parse";
    case ErrorCategory::kInvalidTree: return "invalid-tree";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kVocab: return "vocab";
    case ErrorCategory::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(std::string(category_name(category)) + " error: " + what),
        category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorCategory::kDimension, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::kNumeric, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCategory::kContract, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class InvalidTreeError : public Error {
 public:
  explicit InvalidTreeError(const std::string& what) : Error(ErrorCategory::kInvalidTree, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

class VocabError : public Error {
 public:
  explicit VocabError(const std::string& what) : Error(ErrorCategory::kVocab, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

/// Malformed bracketed input. `offset()` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(ErrorCategory::kParse, what + " at byte " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace treeattn

#endif  // TREEATTN_ERROR_HPP
