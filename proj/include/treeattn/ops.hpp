// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_OPS_HPP
#define TREEATTN_OPS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "treeattn/error.hpp"
#include "treeattn/op_counter.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

/// Additive stand-in for -inf applied to disallowed logits before softmax.
inline constexpr double kMaskedLogit = -1e30;

/// Row-major boolean matrix: true where attention is allowed.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v = true) { bits_[i * cols_ + j] = v ? 1 : 0; }

  std::size_t row_count(std::size_t i) const {
    std::size_t c = 0;
    for (std::size_t j = 0; j < cols_; ++j) c += bits_[i * cols_ + j];
    return c;
  }

  static Mask causal(std::size_t n) {
    Mask m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.set(i, j);
    return m;
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

namespace detail {

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

// c[p×r] += a[p×q] · b[q×r]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    T* ci = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = a[i * q + k];
      const T* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[p×r] += a[p×q] · b[r×q]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const T* ai = a + i * q;
    for (std::size_t j = 0; j < r; ++j) {
      const T* bj = b + j * q;
      T s = 0;
      for (std::size_t k = 0; k < q; ++k) s += ai[k] * bj[k];
      c[i * r + j] += s;
    }
  }
}

// c[q×r] += a[p×q]ᵀ · b[p×r]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const T* bi = b + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = a[i * q + k];
      T* ck = c + k * r;
      for (std::size_t j = 0; j < r; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul: inner extents disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<T> out(p * r, T(0));
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), p, q, r);
  count_mul_add(p * q * r);
  return make_result<T>({p, r}, std::move(out), {a, b}, [p, q, r](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.parents[0]->value.data();
    const T* bv = self.parents[1]->value.data();
    if (auto* ga = parent_grad(self, 0)) detail::gemm_nt(g, bv, ga->data(), p, r, q);
    if (auto* gb = parent_grad(self, 1)) detail::gemm_tn(av, g, gb->data(), p, q, r);
  });
}

/// a · bᵀ without materializing the transpose.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  if (b.cols() != q) {
    throw DimensionError("matmul_nt: inner extents disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + "^T");
  }
  std::vector<T> out(p * r, T(0));
  detail::gemm_nt(a.values().data(), b.values().data(), out.data(), p, q, r);
  count_mul_add(p * q * r);
  return make_result<T>({p, r}, std::move(out), {a, b}, [p, q, r](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.parents[0]->value.data();
    const T* bv = self.parents[1]->value.data();
    if (auto* ga = parent_grad(self, 0)) detail::gemm_nn(g, bv, ga->data(), p, r, q);
    if (auto* gb = parent_grad(self, 1)) detail::gemm_tn(g, av, gb->data(), p, r, q);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t p = a.rows(), q = a.cols();
  std::vector<T> out(p * q);
  const auto av = a.values();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = av[i * q + j];
  return make_result<T>({q, p}, std::move(out), {a}, [p, q](Node<T>& self) {
    if (auto* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*ga)[i * q + j] += self.grad[j * p + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  count_mul_add(out.size());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = parent_grad(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  count_mul_add(out.size());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  count_mul_add(out.size());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  count_mul_add(out.size());
  return make_result<T>(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

/// a[p×q] + bias[q] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_rank(a, 2, "add_bias");
  const std::size_t p = a.rows(), q = a.cols();
  if (bias.size() != q) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs " + shape_string(a.shape()));
  }
  std::vector<T> out(a.vec());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] += bv[j];
  count_mul_add(p * q);
  return make_result<T>(a.shape(), std::move(out), {a, bias}, [p, q](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*g)[j] += self.grad[i * q + j];
  });
}

/// Row i of a[p×q] scaled by w[i].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& w) {
  detail::require_rank(a, 2, "scale_rows");
  const std::size_t p = a.rows(), q = a.cols();
  if (w.size() != p) {
    throw DimensionError("scale_rows: weights " + shape_string(w.shape()) + " vs " + shape_string(a.shape()));
  }
  std::vector<T> out(p * q);
  const auto av = a.values(), wv = w.values();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = av[i * q + j] * wv[i];
  count_mul_add(p * q);
  return make_result<T>(a.shape(), std::move(out), {a, w}, [p, q](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*g)[i * q + j] += self.grad[i * q + j] * wv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*g)[i] += self.grad[i * q + j] * av[i * q + j];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  count_compare(out.size());
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (av[i] > T(0)) (*g)[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  count_mul_add(a.size());
  return make_result<T>({}, {s}, {a}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

/// Mean of a 2-D tensor over `axis` (0: over rows → [q], 1: over columns → [p]).
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  detail::require_rank(a, 2, "mean");
  if (axis > 1) throw DimensionError("mean: axis " + std::to_string(axis) + " invalid for rank 2");
  const std::size_t p = a.rows(), q = a.cols();
  const auto av = a.values();
  const std::size_t out_n = axis == 0 ? q : p;
  const T inv = T(1) / T(axis == 0 ? p : q);
  std::vector<T> out(out_n, T(0));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[axis == 0 ? j : i] += av[i * q + j];
  for (auto& v : out) v *= inv;
  count_mul_add(p * q);
  return make_result<T>({out_n}, std::move(out), {a}, [p, q, axis, inv](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*g)[i * q + j] += self.grad[axis == 0 ? j : i] * inv;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return make_result<T>(std::move(shape), a.vec(), {a}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

/// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns); 1-D inputs along axis 0.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) throw DimensionError("concat supports rank 1 or 2");
  if (axis >= rank) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range");
  for (const auto& t : parts) {
    if (t.rank() != rank) throw DimensionError("concat: mixed ranks");
    if (rank == 2 && t.dim(1 - axis) != parts[0].dim(1 - axis)) {
      throw DimensionError("concat: shapes " + shape_string(parts[0].shape()) + " and " + shape_string(t.shape()) +
                           " disagree off axis " + std::to_string(axis));
    }
  }
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& t : parts) {
    extents.push_back(t.dim(axis));
    total += t.dim(axis);
  }
  Shape shape = parts[0].shape();
  shape[axis] = total;
  std::vector<T> out(shape_size(shape));
  if (rank == 1 || axis == 0) {
    std::size_t off = 0;
    for (const auto& t : parts) {
      std::copy(t.values().begin(), t.values().end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += t.size();
    }
  } else {
    const std::size_t p = shape[0];
    std::size_t col = 0;
    for (const auto& t : parts) {
      const std::size_t q = t.cols();
      const auto tv = t.values();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out[i * total + col + j] = tv[i * q + j];
      col += q;
    }
  }
  return make_result<T>(shape, std::move(out), parts, [rank, axis, extents, total](Node<T>& self) {
    if (rank == 1 || axis == 0) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t len = self.parents[k]->value.size();
        if (auto* g = parent_grad(self, k))
          for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[off + i];
        off += len;
      }
    } else {
      const std::size_t p = self.shape[0];
      std::size_t col = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t q = extents[k];
        if (auto* g = parent_grad(self, k))
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) (*g)[i * q + j] += self.grad[i * total + col + j];
        col += q;
      }
    }
  });
}

/// Contiguous sub-block of a 2-D tensor: `len` entries starting at `start` along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  detail::require_rank(a, 2, "slice");
  if (axis > 1 || start + len > a.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) + ") on axis " +
                         std::to_string(axis) + " of " + shape_string(a.shape()));
  }
  const std::size_t p = a.rows(), q = a.cols();
  const std::size_t op = axis == 0 ? len : p, oq = axis == 0 ? q : len;
  const std::size_t r0 = axis == 0 ? start : 0, c0 = axis == 0 ? 0 : start;
  std::vector<T> out(op * oq);
  const auto av = a.values();
  for (std::size_t i = 0; i < op; ++i)
    for (std::size_t j = 0; j < oq; ++j) out[i * oq + j] = av[(r0 + i) * q + c0 + j];
  return make_result<T>({op, oq}, std::move(out), {a}, [op, oq, q, r0, c0](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < op; ++i)
        for (std::size_t j = 0; j < oq; ++j) (*g)[(r0 + i) * q + c0 + j] += self.grad[i * oq + j];
  });
}

/// Stacks equally shaped 2-D tensors into [k×p×q].
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  for (const auto& t : parts) detail::require_same_shape(parts[0], t, "stack");
  Shape shape{parts.size()};
  for (auto e : parts[0].shape()) shape.push_back(e);
  std::vector<T> out;
  out.reserve(shape_size(shape));
  for (const auto& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
  const std::size_t each = parts[0].size();
  return make_result<T>(shape, std::move(out), parts, [each](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (auto* g = parent_grad(self, k))
        for (std::size_t i = 0; i < each; ++i) (*g)[i] += self.grad[k * each + i];
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

/// Row-wise softmax with disallowed entries forced to exactly zero. Rows with
/// no allowed entry come back all-zero and are listed in `all_masked_rows`.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& a, const Mask& mask,
                              std::vector<std::size_t>* all_masked_rows = nullptr) {
  detail::require_rank(a, 2, "masked_softmax_rows");
  const std::size_t p = a.rows(), q = a.cols();
  if (mask.rows() != p || mask.cols() != q) {
    throw DimensionError("masked_softmax_rows: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " vs logits " + shape_string(a.shape()));
  }
  const auto av = a.values();
  std::vector<T> out(p * q, T(0));
  std::vector<T> z(q);
  for (std::size_t i = 0; i < p; ++i) {
    bool any = false;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < q; ++j) {
      const T v = av[i * q + j];
      if (std::isnan(v)) throw NumericError("NaN logit at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      const bool ok = mask(i, j);
      any = any || ok;
      z[j] = ok ? v : v + static_cast<T>(kMaskedLogit);
      mx = std::max(mx, z[j]);
    }
    count_compare(q);
    if (!any) {
      if (all_masked_rows) all_masked_rows->push_back(i);
      continue;
    }
    T s = 0;
    for (std::size_t j = 0; j < q; ++j) {
      z[j] = std::exp(z[j] - mx);
      s += z[j];
    }
    count_exp(q);
    count_mul_add(2 * q);
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = mask(i, j) ? z[j] / s : T(0);
  }
  return make_result<T>(a.shape(), std::move(out), {a}, [p, q](Node<T>& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t i = 0; i < p; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < q; ++j) dot += y[i * q + j] * self.grad[i * q + j];
      for (std::size_t j = 0; j < q; ++j) (*g)[i * q + j] += y[i * q + j] * (self.grad[i * q + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  detail::require_rank(a, 2, "softmax_rows");
  return masked_softmax_rows(a, Mask(a.rows(), a.cols(), true));
}

/// Normalizes each vector along the last axis to zero mean and unit variance
/// (variance + eps under the root), then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " + shape_string(bias.shape()) +
                         " vs last extent of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t k = 0; k < d; ++k) mu += xr[k];
    mu /= T(d);
    T var = 0;
    for (std::size_t k = 0; k < d; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= T(d);
    const T denom = std::sqrt(var + eps);
    inv_std[r] = denom > T(0) ? T(1) / denom : T(0);
    for (std::size_t k = 0; k < d; ++k) {
      xhat[r * d + k] = (xr[k] - mu) * inv_std[r];
      out[r * d + k] = xhat[r * d + k] * gv[k] + bv[k];
    }
  }
  count_mul_add(5 * x.size());
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          const auto& gv = self.parents[1]->value;
                          const T* dy = self.grad.data();
                          if (auto* gx = parent_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              T m1 = 0, m2 = 0;
                              for (std::size_t k = 0; k < d; ++k) {
                                const T dxh = dy[r * d + k] * gv[k];
                                m1 += dxh;
                                m2 += dxh * xhat[r * d + k];
                              }
                              m1 /= T(d);
                              m2 /= T(d);
                              for (std::size_t k = 0; k < d; ++k) {
                                const T dxh = dy[r * d + k] * gv[k];
                                (*gx)[r * d + k] += inv_std[r] * (dxh - m1 - xhat[r * d + k] * m2);
                              }
                            }
                          }
                          if (auto* gg = parent_grad(self, 1))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t k = 0; k < d; ++k) (*gg)[k] += dy[r * d + k] * xhat[r * d + k];
                          if (auto* gb = parent_grad(self, 2))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t k = 0; k < d; ++k) (*gb)[k] += dy[r * d + k];
                        });
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of logits[k×C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t k = logits.rows(), c = logits.cols();
  if (targets.size() != k) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(logits.shape()));
  }
  const auto lv = logits.values();
  std::vector<T> probs(k * c);
  T loss = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (targets[i] >= c) throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " >= " + std::to_string(c));
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (std::isnan(lv[i * c + j])) throw NumericError("NaN logit in cross_entropy");
      mx = std::max(mx, lv[i * c + j]);
    }
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(lv[i * c + j] - mx);
      s += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    loss += -(lv[i * c + targets[i]] - mx - std::log(s));
  }
  count_exp(k * c);
  count_mul_add(2 * k * c);
  loss /= T(k);
  return make_result<T>({}, {loss}, {logits}, [k, c, targets, probs = std::move(probs)](Node<T>& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const T s = self.grad[0] / T(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < c; ++j)
        (*g)[i * c + j] += s * (probs[i * c + j] - (j == targets[i] ? T(1) : T(0)));
  });
}

// ---------------------------------------------------------------------------
// Embeddings, dropout, positions

/// Gathers rows of table[V×d]; the backward pass scatter-adds into the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<T> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= v) throw DimensionError("embedding: id " + std::to_string(ids[r]) + " >= table rows " + std::to_string(v));
    std::copy_n(tv.data() + ids[r] * d, d, out.data() + r * d);
  }
  return make_result<T>({ids.size(), d}, std::move(out), {table}, [ids, d](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t k = 0; k < d; ++k) (*g)[ids[r] * d + k] += self.grad[r * d + k];
  });
}

/// Inverted dropout with a mask drawn from `rng`. Identity when rate is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = T(1) / T(1.0 - rate);
  std::vector<T> m(x.size());
  for (auto& v : m) v = keep(rng) ? s : T(0);
  std::vector<T> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * m[i];
  count_mul_add(out.size());
  return make_result<T>(x.shape(), std::move(out), {x}, [m = std::move(m)](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * m[i];
  });
}

/// Sinusoidal position table [n×d]: sin on even channels, cos on odd ones.
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<T> out(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t k = 0; k < d; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      out[pos * d + k] = static_cast<T>(k % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from_data({n, d}, std::move(out));
}

}  // namespace treeattn

#endif  // TREEATTN_OPS_HPP
