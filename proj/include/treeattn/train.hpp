// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_TRAIN_HPP
#define TREEATTN_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "treeattn/config.hpp"
#include "treeattn/data.hpp"
#include "treeattn/error.hpp"
#include "treeattn/model.hpp"
#include "treeattn/ops.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

/// Linear warmup to the peak rate, then inverse square-root decay.
inline double learning_rate(double peak, std::size_t warmup, std::size_t step) {
  if (step == 0) return 0.0;
  if (warmup == 0) return peak;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

/// Adam with decoupled weight decay. Reads the gradients accumulated in the
/// parameters and clears them after each step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, const ModelConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }
  double current_rate() const { return learning_rate(cfg_.lr, cfg_.warmup, t_); }

  void step() {
    ++t_;
    const double lr = current_rate();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = params_[k];
      auto& g = p.node()->grad;
      auto w = p.mutable_values();
      const bool has_grad = g.size() == w.size();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
        m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * gi;
        v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * gi * gi;
        double x = static_cast<double>(w[i]);
        x -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.adam_eps);
        if (cfg_.weight_decay > 0) x -= lr * cfg_.weight_decay * static_cast<double>(w[i]);
        w[i] = static_cast<T>(x);
      }
      p.zero_grad();
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  ModelConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Index of the largest logit; ties go to the lowest index.
template <typename T>
std::size_t argmax_row(const Tensor<T>& logits) {
  const auto v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
std::vector<std::size_t> predict(const TreeModel<T>& model, const std::vector<Example>& data) {
  NoGradScope<T> no_grad;
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(argmax_row(model.classify_logits(ex.input)));
  return out;
}

template <typename T>
double evaluate_accuracy(const TreeModel<T>& model, const std::vector<Example>& data) {
  if (data.empty()) throw DataError("evaluation set is empty");
  const auto pred = predict(model, data);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += pred[i] == data[i].label;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

struct TrainRecord {
  std::size_t update = 0;
  double train_loss = 0.0;  // mean over updates since the previous record
  double dev_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> history;
  double best_dev_accuracy = 0.0;
  std::size_t best_update = 0;
  std::size_t updates = 0;
  double seconds = 0.0;
};

struct TrainOptions {
  std::ostream* log = nullptr;
  // Stop early once dev accuracy reaches this value (0 disables).
  double target_accuracy = 0.0;
};

/// Mini-batch training with dev evaluation every `eval_every` updates. The
/// model ends holding the parameters of the best dev evaluation. Runs are
/// deterministic for a fixed config. Throws NumericError on a non-finite loss.
template <typename T>
TrainResult train_classifier(TreeModel<T>& model, const std::vector<Example>& train, const std::vector<Example>& dev,
                             const TrainOptions& opt = {}) {
  const ModelConfig& cfg = model.config();
  if (train.empty()) throw DataError("training set is empty");
  if (dev.empty()) throw DataError("dev set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  std::mt19937_64 order_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(cfg.seed + 1);
  const auto params = model.parameters();
  Adam<T> adam(params, cfg);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult result;
  std::vector<std::vector<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.push_back(p.vec());
  };
  snapshot();
  result.best_dev_accuracy = -1.0;

  double loss_sum = 0.0;
  std::size_t loss_n = 0;
  const std::size_t eval_every = std::max<std::size_t>(cfg.eval_every, 1);
  for (std::size_t u = 1; u <= cfg.max_updates; ++u) {
    std::vector<const Example*> batch;
    std::size_t tokens = 0;
    while (batch.empty() || tokens < cfg.batch_tokens) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const Example& ex = train[order[cursor++]];
      batch.push_back(&ex);
      tokens += ex.input.num_leaves();
      if (batch.size() >= train.size()) break;
    }

    double loss_value = 0.0;
    {
      Tape<T> tape;
      TapeScope<T> scope(tape);
      const ForwardContext ctx{&dropout_rng, nullptr};
      std::vector<Tensor<T>> logits;
      std::vector<std::size_t> labels;
      for (const Example* ex : batch) {
        logits.push_back(model.classify_logits(ex->input, ctx));
        labels.push_back(ex->label);
      }
      const Tensor<T> loss = cross_entropy(concat(logits, 0), labels);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite training loss at update " + std::to_string(u));
      }
      tape.backward(loss);
    }
    adam.step();
    loss_sum += loss_value;
    ++loss_n;
    result.updates = u;

    if (u % eval_every == 0 || u == cfg.max_updates) {
      TrainRecord rec{u, loss_sum / static_cast<double>(loss_n), evaluate_accuracy(model, dev), elapsed()};
      loss_sum = 0.0;
      loss_n = 0;
      result.history.push_back(rec);
      if (opt.log) {
        *opt.log << "update " << rec.update << " loss " << rec.train_loss << " dev_acc " << rec.dev_accuracy << " lr "
                 << adam.current_rate() << " time " << rec.seconds << "s\n";
      }
      if (rec.dev_accuracy > result.best_dev_accuracy) {
        result.best_dev_accuracy = rec.dev_accuracy;
        result.best_update = u;
        snapshot();
      }
      if (opt.target_accuracy > 0 && rec.dev_accuracy >= opt.target_accuracy) break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k];
    auto dst = p.mutable_values();
    std::copy(best[k].begin(), best[k].end(), dst.begin());
  }
  result.seconds = elapsed();
  return result;
}

}  // namespace treeattn

#endif  // TREEATTN_TRAIN_HPP
