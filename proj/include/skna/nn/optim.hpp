#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "skna/nn/tensor.hpp"
#include "skna/random.hpp"

namespace skna::nn {

/// Mean of squared differences over every element.
template <std::floating_point T>
double mse_loss(const Tensor3<T>& pred, const Tensor3<T>& target) {
  require_shape(pred.shape == target.shape,
                "mse_loss shapes " + to_string(pred.shape) + " vs " + to_string(target.shape));
  double sum = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(pred.numel());
}

/// d(mse)/d(pred) = 2 (pred - target) / N.
template <std::floating_point T>
Tensor3<T> mse_grad(const Tensor3<T>& pred, const Tensor3<T>& target) {
  require_shape(pred.shape == target.shape, "mse_grad shape mismatch");
  Tensor3<T> g(pred.shape);
  const double scale = 2.0 / static_cast<double>(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i)
    g.data[i] = static_cast<T>(scale * (static_cast<double>(pred.data[i]) - target.data[i]));
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam without weight decay.
template <std::floating_point T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0) || !(cfg_.beta1 >= 0 && cfg_.beta1 < 1) || !(cfg_.beta2 >= 0 && cfg_.beta2 < 1))
      throw Error(ErrorKind::invalid_argument, "invalid Adam hyperparameters");
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients. Throws before touching
  /// any parameter if a gradient is non-finite.
  void step() {
    for (auto* p : params_)
      for (T g : p->grad)
        if (!std::isfinite(g)) throw Error(ErrorKind::non_finite, "non-finite gradient in '" + p->name + "'");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] = static_cast<T>(p.value[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::uint64_t step_count() const { return t_; }
  const std::vector<double>& first_moment(std::size_t k) const { return m_[k]; }
  const std::vector<double>& second_moment(std::size_t k) const { return v_[k]; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Emits batches holding exactly batch_size / n_classes indices per class.
///
/// Within an epoch each class is drawn without replacement; once the smallest
/// class runs out the remainder is dropped.
class BalancedBatchSampler {
 public:
  BalancedBatchSampler(std::vector<int> labels, std::size_t batch_size, std::uint64_t seed)
      : labels_(std::move(labels)), batch_size_(batch_size), rng_(seed) {
    for (std::size_t i = 0; i < labels_.size(); ++i) by_class_[labels_[i]].push_back(i);
    if (by_class_.empty()) throw Error(ErrorKind::insufficient_class, "no samples");
    if (batch_size_ == 0 || batch_size_ % by_class_.size() != 0)
      throw Error(ErrorKind::invalid_argument, "batch size must be divisible by the number of classes");
    quota_ = batch_size_ / by_class_.size();
    for (const auto& [cls, idx] : by_class_)
      if (idx.size() < quota_)
        throw Error(ErrorKind::insufficient_class, "class " + std::to_string(cls) + " has " +
                                                       std::to_string(idx.size()) + " samples, quota is " +
                                                       std::to_string(quota_));
  }

  std::size_t quota() const { return quota_; }

  std::size_t batches_per_epoch() const {
    std::size_t smallest = SIZE_MAX;
    for (const auto& [cls, idx] : by_class_) smallest = std::min(smallest, idx.size());
    return smallest / quota_;
  }

  /// Index batches for the next epoch; successive calls reshuffle.
  std::vector<std::vector<std::size_t>> next_epoch() {
    std::vector<std::vector<std::size_t>> pools;
    for (const auto& [cls, idx] : by_class_) {
      auto pool = idx;
      shuffle(pool, rng_);
      pools.push_back(std::move(pool));
    }
    const std::size_t n = batches_per_epoch();
    std::vector<std::vector<std::size_t>> batches(n);
    for (std::size_t b = 0; b < n; ++b) {
      for (const auto& pool : pools)
        batches[b].insert(batches[b].end(), pool.begin() + b * quota_, pool.begin() + (b + 1) * quota_);
      shuffle(batches[b], rng_);
    }
    return batches;
  }

 private:
  std::vector<int> labels_;
  std::size_t batch_size_;
  std::size_t quota_ = 0;
  std::map<int, std::vector<std::size_t>> by_class_;
  Rng rng_;
};

}  // namespace skna::nn
