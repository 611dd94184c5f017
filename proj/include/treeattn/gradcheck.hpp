// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_GRADCHECK_HPP
#define TREEATTN_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "treeattn/error.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

struct FdOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of about this many
  // (never fewer than 200, and at least a few from every parameter).
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

/// Compares tape gradients of the scalar `f` against central differences,
/// returning max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
template <typename T>
FdReport finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                           const FdOptions& opt = {}) {
  if (!(opt.eps > 0.0)) throw ContractError("finite_diff_check needs eps > 0");

  for (auto& p : params) p.zero_grad();
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> loss = f();
    tape.backward(loss);
    for (auto& p : params) analytic.push_back(p.grad());
  }
  for (auto& p : params) p.zero_grad();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  const std::size_t budget = opt.max_coords == 0 ? total : std::max<std::size_t>(opt.max_coords, 200);
  if (budget >= total) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].size(); ++i) coords.emplace_back(k, i);
  } else {
    std::mt19937_64 rng(opt.seed);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::size_t n = params[k].size();
      const std::size_t share = std::max<std::size_t>(4, budget * n / total);
      if (share >= n) {
        for (std::size_t i = 0; i < n; ++i) coords.emplace_back(k, i);
        continue;
      }
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      // partial Fisher-Yates keeps the draw independent of std::shuffle's implementation
      for (std::size_t i = 0; i < share; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
        coords.emplace_back(k, idx[i]);
      }
    }
  }

  NoGradScope<T> no_grad;
  FdReport report;
  const T eps = static_cast<T>(opt.eps);
  for (auto [k, i] : coords) {
    auto values = params[k].mutable_values();
    const T saved = values[i];
    values[i] = saved + eps;
    const double up = static_cast<double>(f().item());
    values[i] = saved - eps;
    const double down = static_cast<double>(f().item());
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("non-finite objective at a probe point");
    const double fd = (up - down) / (2.0 * opt.eps);
    const double ad = static_cast<double>(analytic[k].at(i));
    const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = k;
      report.worst_coord = i;
    }
    ++report.coords_checked;
  }
  return report;
}

}  // namespace treeattn

#endif  // TREEATTN_GRADCHECK_HPP
