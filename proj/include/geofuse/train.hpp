#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "geofuse/core.hpp"
#include "geofuse/eval.hpp"
#include "geofuse/fusion.hpp"
#include "geofuse/tokens.hpp"

namespace geofuse {

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && !pred.empty(), "mse_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One AdamW update: decoupled decay first, then the bias-corrected step.
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                       const AdamWConfig& cfg) {
  require(params.size() == grads.size(), "adamw_step: parameter/gradient size mismatch");
  if (state.m.size() != params.size()) state = AdamState(params.size());
  for (double g : grads) require(std::isfinite(g), "adamw_step: non-finite gradient");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double mask_prob = 0.3;
  std::size_t eval_every = 1;
  std::size_t threads = 1;

  AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }

  void validate() const {
    require(lr >= 0.0, "train: lr must be non-negative");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(mask_prob >= 0.0 && mask_prob < 1.0, "train: mask_prob must be in [0, 1)");
    require(eval_every >= 1, "train: eval_every must be >= 1");
    require(threads >= 1, "train: threads must be >= 1");
  }
};

/// Token sequences with their standardized targets.
struct LabeledSet {
  std::vector<TokenInputs> inputs;
  std::vector<std::vector<double>> targets;
  std::size_t size() const { return inputs.size(); }
};

struct EpochMetrics {
  std::size_t epoch;
  double train_loss;
  double val_mean_r2;  // NaN when not evaluated
};

struct TrainResult {
  std::vector<double> final_params;
  std::vector<double> best_params;
  std::size_t best_epoch = 0;
  double best_val_mean_r2 = -std::numeric_limits<double>::infinity();
  AdamState optimizer;
  std::vector<EpochMetrics> history;
};

struct TrainCallbacks {
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers with a static
/// partition. Callers write results to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::vector<double>> predict(const FusionModel& model, const LabeledSet& set,
                                                std::size_t threads = 1) {
  std::vector<std::vector<double>> out(set.size());
  parallel_for(set.size(), threads, [&](std::size_t i) { out[i] = model.forward(set.inputs[i]).prediction; });
  return out;
}

inline double mean_r2(const FusionModel& model, const LabeledSet& set, std::size_t threads = 1) {
  const auto r2 = r2_per_variable(predict(model, set, threads), set.targets);
  return mean_of(r2.r2);
}

/// Mini-batch MSE training with AdamW. Per-sample gradients are reduced in
/// sample order, so results do not depend on the worker count.
inline TrainResult train_loop(FusionModel& model, const LabeledSet& train, const LabeledSet& val,
                              const TrainConfig& cfg, const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  require(train.size() > 0, "train_loop: empty training split");
  auto& params = model.params().values();
  const std::size_t np = params.size();
  TrainResult result;
  result.optimizer = AdamState(np);
  result.best_params = params;
  const auto adam = cfg.adamw();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(np);
  std::vector<std::vector<double>> slot_grads;
  std::vector<double> slot_loss;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5348u, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    CompensatedSum epoch_loss;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
      const double weight = 1.0 / static_cast<double>(bsz);
      slot_grads.resize(bsz);
      slot_loss.assign(bsz, 0.0);
      parallel_for(bsz, cfg.threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        auto& g = slot_grads[b];
        g.assign(np, 0.0);
        Rng rng(derive_seed(cfg.seed, epoch, idx + 1));
        const TokenInputs masked = mask_tokens(train.inputs[idx], cfg.mask_prob, rng.next_u64(), true);
        slot_loss[b] = model.loss_and_gradient(masked, train.targets[idx], g, weight, &rng);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& g = slot_grads[b];
        for (std::size_t i = 0; i < np; ++i) grad[i] += g[i];
        epoch_loss.add(slot_loss[b]);
      }
      adamw_step(params, grad, result.optimizer, adam);
    }

    EpochMetrics em{epoch, epoch_loss.value() / static_cast<double>(train.size()),
                    std::numeric_limits<double>::quiet_NaN()};
    const bool evaluate = val.size() >= 2 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (evaluate) {
      em.val_mean_r2 = mean_r2(model, val, cfg.threads);
      if (em.val_mean_r2 > result.best_val_mean_r2) {
        result.best_val_mean_r2 = em.val_mean_r2;
        result.best_epoch = epoch;
        result.best_params = params;
      }
    } else if (val.size() < 2) {
      result.best_epoch = epoch;
      result.best_params = params;
    }
    result.history.push_back(em);
    if (callbacks.on_epoch) callbacks.on_epoch(em);
  }
  result.final_params = params;
  return result;
}

}  // namespace geofuse
