#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "skna/nn/tensor.hpp"
#include "skna/random.hpp"

namespace skna::nn {

enum class LayerKind { conv1d, deconv1d, batchnorm1d, dropout, relu, lstm, bilstm, residual_add };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::deconv1d: return "deconv1d";
    case LayerKind::batchnorm1d: return "batchnorm1d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::relu: return "relu";
    case LayerKind::lstm: return "lstm";
    case LayerKind::bilstm: return "bilstm";
    case LayerKind::residual_add: return "residual_add";
  }
  return "?";
}

/// Kind plus the hyperparameters that kind reads; unused fields are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t output_padding = 0;
  std::size_t hidden_size = 0;
  double rate = 0.0;

  static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t k = 3, std::size_t s = 2,
                          std::size_t p = 1) {
    return {LayerKind::conv1d, in, out, k, s, p, 0, 0, 0.0};
  }
  static LayerSpec deconv1d(std::size_t in, std::size_t out, std::size_t k = 3, std::size_t s = 2,
                            std::size_t p = 1, std::size_t op = 1) {
    return {LayerKind::deconv1d, in, out, k, s, p, op, 0, 0.0};
  }
  static LayerSpec batchnorm1d(std::size_t channels) {
    return {LayerKind::batchnorm1d, channels, channels, 0, 0, 0, 0, 0, 0.0};
  }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, 0, 0, 0, 0, rate}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0, 0, 0, 0, 0.0}; }
  static LayerSpec lstm(std::size_t in, std::size_t hidden) {
    return {LayerKind::lstm, in, hidden, 0, 0, 0, 0, hidden, 0.0};
  }
  static LayerSpec bilstm(std::size_t in, std::size_t hidden) {
    return {LayerKind::bilstm, in, 2 * hidden, 0, 0, 0, 0, hidden, 0.0};
  }
};

/// Output length of a strided convolution.
inline std::size_t conv_out_len(std::size_t len, std::size_t k, std::size_t s, std::size_t p) {
  require_shape(len + 2 * p >= k, "convolution input shorter than kernel");
  return (len + 2 * p - k) / s + 1;
}

/// Output length of a transposed convolution.
inline std::size_t deconv_out_len(std::size_t len, std::size_t k, std::size_t s, std::size_t p,
                                  std::size_t op) {
  require_shape(len >= 1 && (len - 1) * s + k + op >= 2 * p, "transposed convolution shape");
  return (len - 1) * s + k + op - 2 * p;
}

/// Single-input layer with explicit forward caching and reverse pass.
///
/// forward() in train mode caches whatever backward() needs; backward()
/// accumulates parameter gradients additively and returns the input gradient.
template <std::floating_point T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }

  virtual Shape3 output_shape(const Shape3& in) const = 0;

  Tensor3<T> forward(const Tensor3<T>& x, Mode mode) {
    output_shape(x.shape);  // validates
    cached_ = false;
    Tensor3<T> y = do_forward(x, mode);
    cached_ = (mode == Mode::train);
    in_shape_ = x.shape;
    return y;
  }

  Tensor3<T> backward(const Tensor3<T>& grad_out) {
    if (!cached_) throw Error(ErrorKind::state, std::string(to_string(kind())) + ": backward without a train-mode forward");
    require_shape(grad_out.shape == output_shape(in_shape_),
                  std::string(to_string(kind())) + ": upstream gradient shape " + to_string(grad_out.shape));
    return do_backward(grad_out);
  }

  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  /// Non-trainable state saved with checkpoints (batchnorm running statistics).
  virtual std::vector<Parameter<T>*> buffers() { return {}; }
  virtual void reset_parameters(Rng&) {}

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 protected:
  virtual Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) = 0;
  virtual Tensor3<T> do_backward(const Tensor3<T>& grad_out) = 0;

  LayerSpec spec_;
  Shape3 in_shape_;
  bool cached_ = false;
};

template <std::floating_point T>
class Conv1d final : public Layer<T> {
 public:
  explicit Conv1d(LayerSpec s)
      : Layer<T>(s),
        weight_("weight", {s.out_channels, s.in_channels, s.kernel}),
        bias_("bias", {s.out_channels}) {}

  Shape3 output_shape(const Shape3& in) const override {
    const auto& s = this->spec_;
    require_shape(in.channels == s.in_channels,
                  "conv1d expects " + std::to_string(s.in_channels) + " channels, got " + to_shape(in));
    return {in.batch, s.out_channels, conv_out_len(in.time, s.kernel, s.stride, s.padding)};
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

  void reset_parameters(Rng& rng) override {
    const double bound = std::sqrt(1.0 / static_cast<double>(this->spec_.in_channels * this->spec_.kernel));
    for (auto& w : weight_.value) w = static_cast<T>(uniform(rng, -bound, bound));
    for (auto& b : bias_.value) b = static_cast<T>(uniform(rng, -bound, bound));
  }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    const auto& s = this->spec_;
    const Shape3 os = output_shape(x.shape);
    const std::size_t ck = s.in_channels * s.kernel;
    Tensor3<T> y(os);
    ConstRowMap<T> w(weight_.value.data(), s.out_channels, ck);
    RowMat<T> col(ck, os.time);
    if (mode == Mode::train) cols_.assign(x.shape.batch, RowMat<T>());
    for (std::size_t b = 0; b < x.shape.batch; ++b) {
      im2col(x, b, os.time, col);
      RowMap<T> out(y.row(b, 0), s.out_channels, os.time);
      out.noalias() = w * col;
      for (std::size_t o = 0; o < s.out_channels; ++o) out.row(o).array() += bias_.value[o];
      if (mode == Mode::train) cols_[b] = col;
    }
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    const auto& s = this->spec_;
    const std::size_t ck = s.in_channels * s.kernel;
    Tensor3<T> dx(this->in_shape_);
    ConstRowMap<T> w(weight_.value.data(), s.out_channels, ck);
    RowMap<T> dw(weight_.grad.data(), s.out_channels, ck);
    RowMat<T> dcol(ck, g.shape.time);
    for (std::size_t b = 0; b < g.shape.batch; ++b) {
      ConstRowMap<T> dout(g.row(b, 0), s.out_channels, g.shape.time);
      dw.noalias() += dout * cols_[b].transpose();
      for (std::size_t o = 0; o < s.out_channels; ++o) bias_.grad[o] += dout.row(o).sum();
      dcol.noalias() = w.transpose() * dout;
      col2im(dcol, dx, b);
    }
    return dx;
  }

 private:
  static std::string to_shape(const Shape3& s) { return nn::to_string(s); }

  void im2col(const Tensor3<T>& x, std::size_t b, std::size_t out_len, RowMat<T>& col) const {
    const auto& s = this->spec_;
    const auto len = static_cast<std::ptrdiff_t>(x.shape.time);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const T* src = x.row(b, c);
      for (std::size_t k = 0; k < s.kernel; ++k) {
        T* dst = col.data() + (c * s.kernel + k) * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          auto pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
          dst[t] = (pos >= 0 && pos < len) ? src[pos] : T(0);
        }
      }
    }
  }

  void col2im(const RowMat<T>& dcol, Tensor3<T>& dx, std::size_t b) const {
    const auto& s = this->spec_;
    const std::size_t out_len = static_cast<std::size_t>(dcol.cols());
    const auto len = static_cast<std::ptrdiff_t>(dx.shape.time);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      T* dst = dx.row(b, c);
      for (std::size_t k = 0; k < s.kernel; ++k) {
        const T* src = dcol.data() + (c * s.kernel + k) * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          auto pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
          if (pos >= 0 && pos < len) dst[pos] += src[t];
        }
      }
    }
  }

  Parameter<T> weight_;
  Parameter<T> bias_;
  std::vector<RowMat<T>> cols_;
};

/// Transposed convolution; weight layout (in, out, kernel).
template <std::floating_point T>
class ConvTranspose1d final : public Layer<T> {
 public:
  explicit ConvTranspose1d(LayerSpec s)
      : Layer<T>(s),
        weight_("weight", {s.in_channels, s.out_channels, s.kernel}),
        bias_("bias", {s.out_channels}) {}

  Shape3 output_shape(const Shape3& in) const override {
    const auto& s = this->spec_;
    require_shape(in.channels == s.in_channels, "deconv1d expects " + std::to_string(s.in_channels) +
                                                    " channels, got " + nn::to_string(in));
    return {in.batch, s.out_channels,
            deconv_out_len(in.time, s.kernel, s.stride, s.padding, s.output_padding)};
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

  void reset_parameters(Rng& rng) override {
    // fan_in of the equivalent forward convolution
    const double bound = std::sqrt(1.0 / static_cast<double>(this->spec_.out_channels * this->spec_.kernel));
    for (auto& w : weight_.value) w = static_cast<T>(uniform(rng, -bound, bound));
    for (auto& b : bias_.value) b = static_cast<T>(uniform(rng, -bound, bound));
  }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    const auto& s = this->spec_;
    const Shape3 os = output_shape(x.shape);
    const std::size_t ok = s.out_channels * s.kernel;
    Tensor3<T> y(os);
    ConstRowMap<T> w(weight_.value.data(), s.in_channels, ok);
    RowMat<T> cols(ok, x.shape.time);
    for (std::size_t b = 0; b < x.shape.batch; ++b) {
      ConstRowMap<T> in(x.row(b, 0), s.in_channels, x.shape.time);
      cols.noalias() = w.transpose() * in;
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        T* dst = y.row(b, o);
        std::fill(dst, dst + os.time, bias_.value[o]);
        for (std::size_t k = 0; k < s.kernel; ++k) {
          const T* src = cols.data() + (o * s.kernel + k) * x.shape.time;
          for (std::size_t t = 0; t < x.shape.time; ++t) {
            auto pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(os.time)) dst[pos] += src[t];
          }
        }
      }
    }
    if (mode == Mode::train) input_ = x.data;
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    const auto& s = this->spec_;
    const Shape3 in = this->in_shape_;
    const std::size_t ok = s.out_channels * s.kernel;
    Tensor3<T> dx(in);
    ConstRowMap<T> w(weight_.value.data(), s.in_channels, ok);
    RowMap<T> dw(weight_.grad.data(), s.in_channels, ok);
    RowMat<T> dcols(ok, in.time);
    for (std::size_t b = 0; b < in.batch; ++b) {
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const T* src = g.row(b, o);
        T acc = 0;
        for (std::size_t t = 0; t < g.shape.time; ++t) acc += src[t];
        bias_.grad[o] += acc;
        for (std::size_t k = 0; k < s.kernel; ++k) {
          T* dst = dcols.data() + (o * s.kernel + k) * in.time;
          for (std::size_t t = 0; t < in.time; ++t) {
            auto pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
            dst[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.shape.time)) ? src[pos] : T(0);
          }
        }
      }
      ConstRowMap<T> xin(input_.data() + b * in.channels * in.time, in.channels, in.time);
      dw.noalias() += xin * dcols.transpose();
      RowMap<T> dxb(dx.row(b, 0), in.channels, in.time);
      dxb.noalias() = w * dcols;
    }
    return dx;
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  Buffer<T> input_;
};

/// Per-channel normalization over (batch, time).
template <std::floating_point T>
class BatchNorm1d final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm1d(LayerSpec s)
      : Layer<T>(s),
        gamma_("gamma", {s.in_channels}),
        beta_("beta", {s.in_channels}),
        running_mean_("running_mean", {s.in_channels}),
        running_var_("running_var", {s.in_channels}) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
  }

  Shape3 output_shape(const Shape3& in) const override {
    require_shape(in.channels == this->spec_.in_channels, "batchnorm1d channel mismatch " + nn::to_string(in));
    return in;
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Parameter<T>*> buffers() override { return {&running_mean_, &running_var_}; }

  void reset_parameters(Rng&) override {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(beta_.value.begin(), beta_.value.end(), T(0));
    std::fill(running_mean_.value.begin(), running_mean_.value.end(), T(0));
    std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
  }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    const auto [nb, nc, nt] = x.shape;
    Tensor3<T> y(x.shape);
    const double n = static_cast<double>(nb * nt);
    if (mode == Mode::train) {
      require_shape(nb * nt > 1, "batchnorm1d needs more than one value per channel in train mode");
      xhat_.assign(x.numel(), T(0));
      inv_std_.assign(nc, T(0));
    }
    for (std::size_t c = 0; c < nc; ++c) {
      double mean, var;
      if (mode == Mode::train) {
        double sum = 0;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t t = 0; t < nt; ++t) sum += x(b, c, t);
        mean = sum / n;
        double sq = 0;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t t = 0; t < nt; ++t) {
            double d = x(b, c, t) - mean;
            sq += d * d;
          }
        var = sq / n;
        running_mean_.value[c] = static_cast<T>((1 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
        running_var_.value[c] =
            static_cast<T>((1 - kMomentum) * running_var_.value[c] + kMomentum * sq / (n - 1));
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      const T scale = static_cast<T>(gamma_.value[c] * inv);
      const T shift = static_cast<T>(beta_.value[c] - gamma_.value[c] * mean * inv);
      for (std::size_t b = 0; b < nb; ++b) {
        const T* src = x.row(b, c);
        T* dst = y.row(b, c);
        for (std::size_t t = 0; t < nt; ++t) dst[t] = scale * src[t] + shift;
        if (mode == Mode::train) {
          T* xh = xhat_.data() + (b * nc + c) * nt;
          for (std::size_t t = 0; t < nt; ++t) xh[t] = static_cast<T>((src[t] - mean) * inv);
        }
      }
      if (mode == Mode::train) inv_std_[c] = static_cast<T>(inv);
    }
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    const auto [nb, nc, nt] = g.shape;
    const double n = static_cast<double>(nb * nt);
    Tensor3<T> dx(g.shape);
    for (std::size_t c = 0; c < nc; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* gr = g.row(b, c);
        const T* xh = xhat_.data() + (b * nc + c) * nt;
        for (std::size_t t = 0; t < nt; ++t) {
          sum_g += gr[t];
          sum_gx += static_cast<double>(gr[t]) * xh[t];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_gx);
      beta_.grad[c] += static_cast<T>(sum_g);
      const double k = gamma_.value[c] * inv_std_[c] / n;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* gr = g.row(b, c);
        const T* xh = xhat_.data() + (b * nc + c) * nt;
        T* d = dx.row(b, c);
        for (std::size_t t = 0; t < nt; ++t) d[t] = static_cast<T>(k * (n * gr[t] - sum_g - xh[t] * sum_gx));
      }
    }
    return dx;
  }

 private:
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  Buffer<T> xhat_;
  Buffer<T> inv_std_;
};

/// Inverted dropout: train mode scales survivors by 1/(1-rate); eval mode is the identity.
template <std::floating_point T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(LayerSpec s, std::uint64_t seed = 0) : Layer<T>(s), rng_(seed) {
    if (!(s.rate >= 0.0 && s.rate < 1.0)) throw Error(ErrorKind::invalid_argument, "dropout rate must be in [0, 1)");
  }

  Shape3 output_shape(const Shape3& in) const override { return in; }

  void seed(std::uint64_t s) { rng_.seed(s); }
  /// Reuse the previous mask on the next train-mode forward (finite-difference checks).
  void freeze_mask(bool on) { frozen_ = on; }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    if (mode == Mode::eval || this->spec_.rate == 0.0) {
      mask_.assign(x.numel(), T(1));
      return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - this->spec_.rate));
    if (!frozen_ || mask_.size() != x.numel()) {
      mask_.resize(x.numel());
      for (auto& m : mask_) m = uniform01(rng_) < this->spec_.rate ? T(0) : keep_scale;
    }
    Tensor3<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] * mask_[i];
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    Tensor3<T> dx(g.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) dx.data[i] = g.data[i] * mask_[i];
    return dx;
  }

 private:
  Rng rng_;
  Buffer<T> mask_;
  bool frozen_ = false;
};

template <std::floating_point T>
class ReLU final : public Layer<T> {
 public:
  explicit ReLU(LayerSpec s = LayerSpec::relu()) : Layer<T>(s) {}

  Shape3 output_shape(const Shape3& in) const override { return in; }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    Tensor3<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    if (mode == Mode::train) input_ = x.data;
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    Tensor3<T> dx(g.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) dx.data[i] = input_[i] > T(0) ? g.data[i] : T(0);
    return dx;
  }

 private:
  Buffer<T> input_;
};

/// Elementwise sum of two same-shaped tensors (skip connections).
template <std::floating_point T>
struct ResidualAdd {
  static Tensor3<T> forward(const Tensor3<T>& a, const Tensor3<T>& b) {
    require_shape(a.shape == b.shape,
                  "residual_add shapes " + nn::to_string(a.shape) + " vs " + nn::to_string(b.shape));
    Tensor3<T> y(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
  }

  /// Both branches receive the upstream gradient unchanged.
  static std::pair<Tensor3<T>, Tensor3<T>> backward(const Tensor3<T>& g) {
    Tensor3<T> ga(g.shape), gb(g.shape);
    ga.data = g.data;
    gb.data = g.data;
    return {std::move(ga), std::move(gb)};
  }
};

}  // namespace skna::nn
