#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "skna/error.hpp"

namespace skna::nn {

enum class Mode { train, eval };

/// 64-byte aligned allocation. Eigen peels unaligned heads off vectorized
/// reductions, so the summation order follows the buffer address; a fixed
/// alignment keeps results independent of which thread allocated the buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

struct Shape3 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t time = 0;

  std::size_t numel() const { return batch * channels * time; }
  bool operator==(const Shape3&) const = default;
};

inline std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s.batch) + ", " + std::to_string(s.channels) + ", " +
         std::to_string(s.time) + ")";
}

/// Dense (batch, channels, time) array with a same-shaped gradient accumulator.
template <std::floating_point T>
struct Tensor3 {
  Shape3 shape;
  Buffer<T> data;
  Buffer<T> grad;

  Tensor3() = default;
  explicit Tensor3(Shape3 s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}
  Tensor3(std::size_t b, std::size_t c, std::size_t t, T fill = T(0))
      : Tensor3(Shape3{b, c, t}, fill) {}

  std::size_t numel() const { return data.size(); }

  T& operator()(std::size_t b, std::size_t c, std::size_t t) {
    return data[(b * shape.channels + c) * shape.time + t];
  }
  T operator()(std::size_t b, std::size_t c, std::size_t t) const {
    return data[(b * shape.channels + c) * shape.time + t];
  }

  T* row(std::size_t b, std::size_t c) { return data.data() + (b * shape.channels + c) * shape.time; }
  const T* row(std::size_t b, std::size_t c) const {
    return data.data() + (b * shape.channels + c) * shape.time;
  }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  /// Adds `g` into the gradient accumulator, allocating it on first use.
  void accumulate_grad(const Buffer<T>& g) {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }
};

/// Trainable array with its gradient.
template <std::floating_point T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  Buffer<T> value;
  Buffer<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using RowMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
template <class T>
using ColMap = Eigen::Map<ColMat<T>>;
template <class T>
using ConstColMap = Eigen::Map<const ColMat<T>>;

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::shape, what);
}

}  // namespace skna::nn
