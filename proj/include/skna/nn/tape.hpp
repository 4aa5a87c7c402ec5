#pragma once

#include <vector>

#include "skna/nn/layers.hpp"

namespace skna::nn {

/// Records layer applications and additions so gradients can be replayed in
/// reverse. Fan-out is handled by additive accumulation into each value's grad.
template <std::floating_point T>
class Tape {
 public:
  using Var = std::size_t;

  Var input(Tensor3<T> x) {
    values_.push_back(std::move(x));
    return values_.size() - 1;
  }

  Var apply(Layer<T>& layer, Var in, Mode mode) {
    Tensor3<T> y = layer.forward(values_.at(in), mode);
    values_.push_back(std::move(y));
    ops_.push_back({&layer, in, in, values_.size() - 1});
    return values_.size() - 1;
  }

  Var add(Var a, Var b) {
    Tensor3<T> y = ResidualAdd<T>::forward(values_.at(a), values_.at(b));
    values_.push_back(std::move(y));
    ops_.push_back({nullptr, a, b, values_.size() - 1});
    return values_.size() - 1;
  }

  const Tensor3<T>& value(Var v) const { return values_.at(v); }
  Tensor3<T>& value(Var v) { return values_.at(v); }

  /// Gradient of the seeded scalar w.r.t. v (empty if v is not upstream of the seed).
  const Buffer<T>& grad(Var v) const { return values_.at(v).grad; }

  void backward(Var out, const Tensor3<T>& seed) {
    require_shape(seed.shape == values_.at(out).shape, "backward seed shape");
    for (auto& v : values_) v.grad.clear();
    values_[out].accumulate_grad(seed.data);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      auto& y = values_[it->out];
      if (y.grad.empty()) continue;
      Tensor3<T> g(y.shape);
      g.data = y.grad;
      if (it->layer == nullptr) {
        auto [ga, gb] = ResidualAdd<T>::backward(g);
        values_[it->in0].accumulate_grad(ga.data);
        values_[it->in1].accumulate_grad(gb.data);
      } else {
        Tensor3<T> gx = it->layer->backward(g);
        values_[it->in0].accumulate_grad(gx.data);
      }
    }
  }

  void clear() {
    values_.clear();
    ops_.clear();
  }

 private:
  struct Op {
    Layer<T>* layer;  // nullptr marks a residual addition
    Var in0, in1, out;
  };
  std::vector<Tensor3<T>> values_;
  std::vector<Op> ops_;
};

}  // namespace skna::nn
