#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "skna/nn.hpp"
#include "skna/signal.hpp"

namespace skna {

/// Conv-LSTM autoencoder:
///
///   x(1, L) -> [conv 1->16, bn, drop .2, relu] = e1 (16, L/2)
///           -> [conv 16->32, bn, drop .2, relu] = e2 (32, L/4)
///           -> bilstm(32) (64, L/4) -> lstm(32) (32, L/4)
///           -> + e2 -> [deconv 32->16, bn, drop .1, relu] (16, L/2)
///           -> + e1 -> [deconv 16->1] (1, L)
///
/// All convolutions use kernel 3, stride 2, padding 1; deconvolutions add
/// output padding 1.
template <std::floating_point T>
class DenoiserModel {
 public:
  struct Stage {
    std::string name;
    nn::Shape3 shape;
  };

  explicit DenoiserModel(std::uint64_t seed, std::size_t window_len = 2048) : window_len_(window_len) {
    using nn::LayerSpec;
    Rng rng(seed);
    auto add = [&](const std::string& name, const LayerSpec& spec) {
      layers_.push_back({name, nn::make_layer<T>(spec, rng)});
      return layers_.back().layer.get();
    };
    enc1_ = {add("enc1.conv", LayerSpec::conv1d(1, 16)), add("enc1.bn", LayerSpec::batchnorm1d(16)),
             add("enc1.drop", LayerSpec::dropout(0.2)), add("enc1.relu", LayerSpec::relu())};
    enc2_ = {add("enc2.conv", LayerSpec::conv1d(16, 32)), add("enc2.bn", LayerSpec::batchnorm1d(32)),
             add("enc2.drop", LayerSpec::dropout(0.2)), add("enc2.relu", LayerSpec::relu())};
    bilstm_ = add("bottleneck.bilstm", LayerSpec::bilstm(32, 32));
    lstm_ = add("bottleneck.lstm", LayerSpec::lstm(64, 32));
    dec1_ = {add("dec1.deconv", LayerSpec::deconv1d(32, 16)), add("dec1.bn", LayerSpec::batchnorm1d(16)),
             add("dec1.drop", LayerSpec::dropout(0.1)), add("dec1.relu", LayerSpec::relu())};
    dec2_ = add("dec2.deconv", LayerSpec::deconv1d(16, 1));
    check_junctions();
  }

  std::size_t window_len() const { return window_len_; }

  /// Output shape after each stage for a (batch, 1, window_len) input.
  std::vector<Stage> shape_trace(std::size_t batch = 1) const {
    std::vector<Stage> out;
    nn::Shape3 s{batch, 1, window_len_};
    auto through = [&](const std::vector<nn::Layer<T>*>& block, const std::string& name) {
      for (auto* l : block) s = l->output_shape(s);
      out.push_back({name, s});
    };
    out.push_back({"input", s});
    through(enc1_, "enc1");
    through(enc2_, "enc2");
    through({bilstm_}, "bilstm");
    through({lstm_}, "lstm");
    through(dec1_, "dec1");
    through({dec2_}, "dec2");
    return out;
  }

  /// Runs the network; when `tape` is given the graph is recorded for backward().
  nn::Tensor3<T> forward(const nn::Tensor3<T>& x, nn::Mode mode, nn::Tape<T>* tape = nullptr) {
    nn::Tape<T> local;
    nn::Tape<T>& tp = tape ? *tape : local;
    tp.clear();
    require_input(x.shape);
    auto v = tp.input(x);
    for (auto* l : enc1_) v = tp.apply(*l, v, mode);
    const auto e1 = v;
    for (auto* l : enc2_) v = tp.apply(*l, v, mode);
    const auto e2 = v;
    v = tp.apply(*bilstm_, v, mode);
    v = tp.apply(*lstm_, v, mode);
    v = tp.add(v, e2);
    for (auto* l : dec1_) v = tp.apply(*l, v, mode);
    v = tp.add(v, e1);
    v = tp.apply(*dec2_, v, mode);
    output_var_ = v;
    return tp.value(v);
  }

  std::size_t output_var() const { return output_var_; }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& nl : layers_)
      for (auto* p : nl.layer->parameters()) out.push_back(p);
    return out;
  }

  /// Parameters then buffers, each with a layer-qualified name, in layer order.
  std::vector<std::pair<std::string, nn::Parameter<T>*>> named_state() {
    std::vector<std::pair<std::string, nn::Parameter<T>*>> out;
    for (auto& nl : layers_) {
      for (auto* p : nl.layer->parameters()) out.emplace_back(nl.name + "." + p->name, p);
      for (auto* p : nl.layer->buffers()) out.emplace_back(nl.name + "." + p->name, p);
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Reseeds every dropout layer from one seed.
  void seed_dropout(std::uint64_t seed) {
    std::uint64_t k = 0;
    for (auto& nl : layers_)
      if (auto* d = dynamic_cast<nn::Dropout<T>*>(nl.layer.get())) d->seed(derive_seed(seed, k++));
  }

  NormStats norm_stats;

 private:
  struct NamedLayer {
    std::string name;
    std::unique_ptr<nn::Layer<T>> layer;
  };

  void require_input(const nn::Shape3& s) const {
    nn::require_shape(s.channels == 1 && s.time == window_len_,
                      "denoiser expects (batch, 1, " + std::to_string(window_len_) + "), got " + nn::to_string(s));
  }

  void check_junctions() const {
    auto trace = shape_trace();
    // trace: input, enc1, enc2, bilstm, lstm, dec1, dec2
    nn::require_shape(trace[4].shape == trace[2].shape,
                      "bottleneck output " + nn::to_string(trace[4].shape) + " does not match enc2 " +
                          nn::to_string(trace[2].shape));
    nn::require_shape(trace[5].shape == trace[1].shape,
                      "dec1 output " + nn::to_string(trace[5].shape) + " does not match enc1 " +
                          nn::to_string(trace[1].shape));
    nn::require_shape(trace[6].shape == trace[0].shape, "output length differs from input length");
  }

  std::size_t window_len_;
  std::vector<NamedLayer> layers_;
  std::vector<nn::Layer<T>*> enc1_, enc2_, dec1_;
  nn::Layer<T>* bilstm_ = nullptr;
  nn::Layer<T>* lstm_ = nullptr;
  nn::Layer<T>* dec2_ = nullptr;
  std::size_t output_var_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double wall_seconds = 0.0;
  std::string checkpoint;
};

namespace detail {

template <std::floating_point T>
nn::Tensor3<T> gather_batch(const SegmentSet& set, const std::vector<std::size_t>& idx) {
  nn::Tensor3<T> x(idx.size(), 1, set.window_len);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    auto seg = set.segment(idx[b]);
    T* dst = x.row(b, 0);
    for (std::size_t t = 0; t < set.window_len; ++t) dst[t] = static_cast<T>(seg[t]);
  }
  return x;
}

}  // namespace detail

/// Fits the model to map noisy segments onto their paired clean segments with
/// class-balanced batches, MSE loss and Adam. Both sets must already be
/// normalized with model.norm_stats.
template <std::floating_point T>
TrainReport train(DenoiserModel<T>& model, const SegmentSet& noisy, const SegmentSet& clean,
                  const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (noisy.size() != clean.size() || noisy.window_len != clean.window_len || noisy.labels != clean.labels)
    throw Error(ErrorKind::pairing, "noisy and clean training sets are not paired one-to-one");
  if (cfg.epochs < 1) throw Error(ErrorKind::invalid_argument, "epochs must be >= 1");
  if (noisy.window_len != model.window_len())
    throw Error(ErrorKind::shape, "segment length " + std::to_string(noisy.window_len) + " != model window " +
                                      std::to_string(model.window_len()));

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> labels(noisy.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(noisy.labels[i]);
  nn::BalancedBatchSampler sampler(labels, cfg.batch_size, derive_seed(cfg.seed, "sampler"));
  model.seed_dropout(derive_seed(cfg.seed, "dropout"));
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::Adam<T> adam(model.parameters(), acfg);
  nn::Tape<T> tape;

  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0;
    std::size_t nbatch = 0;
    for (const auto& idx : sampler.next_epoch()) {
      auto x = detail::gather_batch<T>(noisy, idx);
      auto target = detail::gather_batch<T>(clean, idx);
      auto pred = model.forward(x, nn::Mode::train, &tape);
      const double loss = nn::mse_loss(pred, target);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::non_finite, "non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                               std::to_string(nbatch + 1));
      adam.zero_grad();
      tape.backward(model.output_var(), nn::mse_grad(pred, target));
      adam.step();
      sum += loss;
      ++nbatch;
    }
    report.epoch_loss.push_back(sum / static_cast<double>(nbatch));
    if (on_epoch) on_epoch(epoch + 1, report.epoch_loss.back());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Eval-mode forward pass over every segment; ordering and metadata are kept.
template <std::floating_point T>
SegmentSet denoise_segments(DenoiserModel<T>& model, const SegmentSet& noisy, std::size_t batch = 32) {
  if (noisy.window_len != model.window_len())
    throw Error(ErrorKind::shape, "segment length " + std::to_string(noisy.window_len) + " != model window " +
                                      std::to_string(model.window_len()));
  SegmentSet out = noisy;
  for (std::size_t start = 0; start < noisy.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(noisy.size(), start + batch); ++i) idx.push_back(i);
    auto y = model.forward(detail::gather_batch<T>(noisy, idx), nn::Mode::eval);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto dst = out.segment(idx[b]);
      const T* src = y.row(b, 0);
      for (std::size_t t = 0; t < out.window_len; ++t) dst[t] = static_cast<double>(src[t]);
    }
  }
  return out;
}

/// Stitches chronologically ordered segments back into a continuous signal.
///
/// With overlap 0.5 neighbouring halves are blended by triangular weights that
/// sum to one; with overlap 0 segments are concatenated. Segments of one period
/// must form an unbroken chain. When `stats` is given, values are mapped back
/// from the normalized scale (x * std + mean).
inline SampledSignal overlap_add(const SegmentSet& segs, double overlap, const NormStats* stats = nullptr) {
  if (overlap != 0.0 && overlap != 0.5) throw Error(ErrorKind::invalid_argument, "overlap must be 0 or 0.5");
  if (segs.empty()) throw Error(ErrorKind::empty_segmentation, "no segments to stitch");
  const std::size_t L = segs.window_len;
  const std::size_t stride = overlap == 0.5 ? L / 2 : L;
  if (overlap == 0.5 && L % 2 != 0) throw Error(ErrorKind::invalid_argument, "odd window with 50% overlap");

  std::string missing;
  for (std::size_t i = 1; i < segs.size(); ++i) {
    if (segs.period_index[i] == segs.period_index[i - 1] && segs.subject_ids[i] == segs.subject_ids[i - 1]) {
      if (segs.starts[i] < segs.starts[i - 1])
        throw Error(ErrorKind::discontinuity, "segments are not in chronological order at index " + std::to_string(i));
      if (segs.starts[i] != segs.starts[i - 1] + stride) {
        for (std::size_t s = segs.starts[i - 1] + stride; s < segs.starts[i]; s += stride)
          missing += (missing.empty() ? "" : ",") + std::to_string(s / stride);
      }
    }
  }
  if (!missing.empty())
    throw Error(ErrorKind::discontinuity, "gap in segment chain; missing window indices " + missing);

  const std::size_t origin = *std::min_element(segs.starts.begin(), segs.starts.end());
  std::size_t end = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) end = std::max(end, segs.starts[i] + L);

  std::vector<double> acc(end - origin, 0.0), wsum(end - origin, 0.0);
  const double half = static_cast<double>(L) / 2.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto seg = segs.segment(i);
    const bool chained_prev = i > 0 && segs.period_index[i - 1] == segs.period_index[i] &&
                              segs.subject_ids[i - 1] == segs.subject_ids[i];
    const bool chained_next = i + 1 < segs.size() && segs.period_index[i + 1] == segs.period_index[i] &&
                              segs.subject_ids[i + 1] == segs.subject_ids[i];
    const std::size_t base = segs.starts[i] - origin;
    for (std::size_t n = 0; n < L; ++n) {
      double w = 1.0;
      if (overlap == 0.5) {
        if (n < L / 2 && chained_prev) w = (static_cast<double>(n) + 0.5) / half;
        if (n >= L / 2 && chained_next) w = (static_cast<double>(L - n) - 0.5) / half;
      }
      acc[base + n] += w * seg[n];
      wsum[base + n] += w;
    }
  }

  SampledSignal out;
  out.fs = segs.fs;
  out.samples.resize(acc.size());
  const double scale = stats ? stats->std : 1.0;
  const double shift = stats ? stats->mean : 0.0;
  for (std::size_t n = 0; n < acc.size(); ++n)
    out.samples[n] = wsum[n] > 0 ? (acc[n] / wsum[n]) * scale + shift : 0.0;

  for (std::size_t i = 0; i < segs.size(); ++i) {
    const std::size_t s = segs.starts[i] - origin, e = s + L;
    if (!out.periods.empty() && i > 0 && segs.period_index[i - 1] == segs.period_index[i] &&
        segs.subject_ids[i - 1] == segs.subject_ids[i]) {
      out.periods.back().end = e;
    } else {
      out.periods.push_back({s, e, segs.labels[i]});
    }
  }
  return out;
}

}  // namespace skna
