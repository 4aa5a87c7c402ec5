#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skna/nn/layers.hpp"

namespace skna::nn {

namespace detail {

/// (batch, channels, time) -> column-major (channels x time*batch), column t*B + b.
template <class T>
ColMat<T> to_time_major(const Tensor3<T>& x) {
  const auto [nb, nc, nt] = x.shape;
  ColMat<T> m(nc, nt * nb);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < nc; ++c) {
      const T* src = x.row(b, c);
      for (std::size_t t = 0; t < nt; ++t) m(c, t * nb + b) = src[t];
    }
  return m;
}

template <class T>
void from_time_major(const ColMat<T>& m, Tensor3<T>& y, std::size_t channel_offset) {
  const auto nb = y.shape.batch, nt = y.shape.time;
  const auto rows = static_cast<std::size_t>(m.rows());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < rows; ++c) {
      T* dst = y.row(b, channel_offset + c);
      for (std::size_t t = 0; t < nt; ++t) dst[t] = m(c, t * nb + b);
    }
}

template <class T>
ColMat<T> slice_channels_time_major(const Tensor3<T>& g, std::size_t offset, std::size_t count) {
  const auto [nb, nc, nt] = g.shape;
  ColMat<T> m(count, nt * nb);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < count; ++c) {
      const T* src = g.row(b, offset + c);
      for (std::size_t t = 0; t < nt; ++t) m(c, t * nb + b) = src[t];
    }
  return m;
}

/// One LSTM direction. Gate order in the stacked weights: input, forget, cell, output.
template <std::floating_point T>
class LstmDirection {
 public:
  LstmDirection(std::size_t input, std::size_t hidden, bool reverse, const std::string& prefix)
      : input_(input),
        hidden_(hidden),
        reverse_(reverse),
        w_ih_(prefix + "w_ih", {4 * hidden, input}),
        w_hh_(prefix + "w_hh", {4 * hidden, hidden}),
        bias_(prefix + "bias", {4 * hidden}) {}

  std::vector<Parameter<T>*> parameters() { return {&w_ih_, &w_hh_, &bias_}; }

  void reset_parameters(Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(hidden_));
    for (auto* p : parameters())
      for (auto& v : p->value) v = static_cast<T>(uniform(rng, -bound, bound));
  }

  /// x: (input x T*B) time-major. Returns hidden states (hidden x T*B).
  ColMat<T> forward(const ColMat<T>& x, std::size_t nt, std::size_t nb, bool keep) {
    const auto H = static_cast<Eigen::Index>(hidden_);
    const auto B = static_cast<Eigen::Index>(nb);
    ConstRowMap<T> wih(w_ih_.value.data(), 4 * hidden_, input_);
    ConstRowMap<T> whh(w_hh_.value.data(), 4 * hidden_, hidden_);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), 4 * hidden_);

    ColMat<T> gates = wih * x;
    gates.colwise() += bias;
    ColMat<T> hs(H, static_cast<Eigen::Index>(nt) * B);
    ColMat<T> cs(H, hs.cols());
    ColMat<T> tcs(H, hs.cols());
    ColMat<T> h = ColMat<T>::Zero(H, B);
    ColMat<T> c = ColMat<T>::Zero(H, B);
    for (std::size_t s = 0; s < nt; ++s) {
      const auto t = static_cast<Eigen::Index>(reverse_ ? nt - 1 - s : s);
      auto g = gates.middleCols(t * B, B);
      if (s > 0) g.noalias() += whh * h;
      g.topRows(H) = g.topRows(H).array().logistic().matrix();
      g.middleRows(H, H) = g.middleRows(H, H).array().logistic().matrix();
      g.middleRows(2 * H, H) = g.middleRows(2 * H, H).array().tanh().matrix();
      g.bottomRows(H) = g.bottomRows(H).array().logistic().matrix();
      c = g.middleRows(H, H).cwiseProduct(c) + g.topRows(H).cwiseProduct(g.middleRows(2 * H, H));
      auto tc = tcs.middleCols(t * B, B);
      tc = c.array().tanh().matrix();
      h = g.bottomRows(H).cwiseProduct(tc);
      hs.middleCols(t * B, B) = h;
      cs.middleCols(t * B, B) = c;
    }
    if (keep) {
      x_ = x;
      act_ = std::move(gates);
      hs_ = hs;
      cs_ = std::move(cs);
      tcs_ = std::move(tcs);
      nt_ = nt;
      nb_ = nb;
    }
    return hs;
  }

  /// dh: gradient w.r.t. hidden states (hidden x T*B). Returns gradient w.r.t. x.
  ColMat<T> backward(const ColMat<T>& dh_seq) {
    const auto H = static_cast<Eigen::Index>(hidden_);
    const auto B = static_cast<Eigen::Index>(nb_);
    const std::size_t nt = nt_;
    ConstRowMap<T> wih(w_ih_.value.data(), 4 * hidden_, input_);
    ConstRowMap<T> whh(w_hh_.value.data(), 4 * hidden_, hidden_);

    ColMat<T> dgates(4 * H, act_.cols());
    ColMat<T> hprev = ColMat<T>::Zero(H, act_.cols());
    ColMat<T> dh_next = ColMat<T>::Zero(H, B);
    ColMat<T> dc_next = ColMat<T>::Zero(H, B);
    ColMat<T> zero = ColMat<T>::Zero(H, B);
    for (std::size_t s = nt; s-- > 0;) {
      const auto t = static_cast<Eigen::Index>(reverse_ ? nt - 1 - s : s);
      const bool first = (s == 0);
      const auto tp = static_cast<Eigen::Index>(reverse_ ? t + 1 : t - 1);
      auto a = act_.middleCols(t * B, B);
      auto i = a.topRows(H).array();
      auto f = a.middleRows(H, H).array();
      auto gg = a.middleRows(2 * H, H).array();
      auto o = a.bottomRows(H).array();
      auto tc = tcs_.middleCols(t * B, B).array();
      const ColMat<T> c_prev = first ? zero : ColMat<T>(cs_.middleCols(tp * B, B));
      if (!first) hprev.middleCols(t * B, B) = hs_.middleCols(tp * B, B);

      ColMat<T> dh = dh_seq.middleCols(t * B, B) + dh_next;
      auto dha = dh.array();
      ColMat<T> dc = (dha * o * (T(1) - tc * tc)).matrix() + dc_next;
      auto dca = dc.array();
      auto dg = dgates.middleCols(t * B, B);
      dg.topRows(H) = (dca * gg * i * (T(1) - i)).matrix();
      dg.middleRows(H, H) = (dca * c_prev.array() * f * (T(1) - f)).matrix();
      dg.middleRows(2 * H, H) = (dca * i * (T(1) - gg * gg)).matrix();
      dg.bottomRows(H) = (dha * tc * o * (T(1) - o)).matrix();
      dc_next = (dca * f).matrix();
      dh_next.noalias() = whh.transpose() * dg;
    }
    RowMap<T> dwih(w_ih_.grad.data(), 4 * hidden_, input_);
    RowMap<T> dwhh(w_hh_.grad.data(), 4 * hidden_, hidden_);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), 4 * hidden_);
    dwih.noalias() += dgates * x_.transpose();
    dwhh.noalias() += dgates * hprev.transpose();
    db += dgates.rowwise().sum();
    return wih.transpose() * dgates;
  }

 private:
  std::size_t input_, hidden_;
  bool reverse_;
  Parameter<T> w_ih_, w_hh_, bias_;
  ColMat<T> x_, act_, hs_, cs_, tcs_;
  std::size_t nt_ = 0, nb_ = 0;
};

}  // namespace detail

/// Unidirectional LSTM over the time axis; emits hidden_size channels per step.
template <std::floating_point T>
class Lstm final : public Layer<T> {
 public:
  explicit Lstm(LayerSpec s) : Layer<T>(s), dir_(s.in_channels, s.hidden_size, false, "") {}

  Shape3 output_shape(const Shape3& in) const override {
    require_shape(in.channels == this->spec_.in_channels, "lstm channel mismatch " + nn::to_string(in));
    return {in.batch, this->spec_.hidden_size, in.time};
  }
  std::vector<Parameter<T>*> parameters() override { return dir_.parameters(); }
  void reset_parameters(Rng& rng) override { dir_.reset_parameters(rng); }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    ColMat<T> hs = dir_.forward(detail::to_time_major(x), x.shape.time, x.shape.batch, mode == Mode::train);
    Tensor3<T> y(output_shape(x.shape));
    detail::from_time_major(hs, y, 0);
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    ColMat<T> dx = dir_.backward(detail::to_time_major(g));
    Tensor3<T> out(this->in_shape_);
    detail::from_time_major(dx, out, 0);
    return out;
  }

 private:
  detail::LstmDirection<T> dir_;
};

/// Bidirectional LSTM; channels [0, H) are the forward pass, [H, 2H) the reverse pass.
template <std::floating_point T>
class BiLstm final : public Layer<T> {
 public:
  explicit BiLstm(LayerSpec s)
      : Layer<T>(s),
        fwd_(s.in_channels, s.hidden_size, false, "fwd_"),
        rev_(s.in_channels, s.hidden_size, true, "rev_") {}

  Shape3 output_shape(const Shape3& in) const override {
    require_shape(in.channels == this->spec_.in_channels, "bilstm channel mismatch " + nn::to_string(in));
    return {in.batch, 2 * this->spec_.hidden_size, in.time};
  }

  std::vector<Parameter<T>*> parameters() override {
    auto p = fwd_.parameters();
    for (auto* q : rev_.parameters()) p.push_back(q);
    return p;
  }

  void reset_parameters(Rng& rng) override {
    fwd_.reset_parameters(rng);
    rev_.reset_parameters(rng);
  }

 protected:
  Tensor3<T> do_forward(const Tensor3<T>& x, Mode mode) override {
    const bool keep = mode == Mode::train;
    ColMat<T> xt = detail::to_time_major(x);
    Tensor3<T> y(output_shape(x.shape));
    detail::from_time_major(fwd_.forward(xt, x.shape.time, x.shape.batch, keep), y, 0);
    detail::from_time_major(rev_.forward(xt, x.shape.time, x.shape.batch, keep), y, this->spec_.hidden_size);
    return y;
  }

  Tensor3<T> do_backward(const Tensor3<T>& g) override {
    const auto h = this->spec_.hidden_size;
    ColMat<T> dx = fwd_.backward(detail::slice_channels_time_major(g, 0, h));
    dx += rev_.backward(detail::slice_channels_time_major(g, h, h));
    Tensor3<T> out(this->in_shape_);
    detail::from_time_major(dx, out, 0);
    return out;
  }

 private:
  detail::LstmDirection<T> fwd_, rev_;
};

}  // namespace skna::nn
