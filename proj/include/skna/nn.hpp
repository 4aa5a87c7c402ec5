#pragma once

#include "skna/nn/layers.hpp"
#include "skna/nn/lstm.hpp"
#include "skna/nn/optim.hpp"
#include "skna/nn/tape.hpp"
#include "skna/nn/tensor.hpp"

namespace skna::nn {

/// Instantiates a layer from its spec; parameters are initialized from rng.
template <std::floating_point T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, Rng& rng) {
  std::unique_ptr<Layer<T>> layer;
  switch (spec.kind) {
    case LayerKind::conv1d: layer = std::make_unique<Conv1d<T>>(spec); break;
    case LayerKind::deconv1d: layer = std::make_unique<ConvTranspose1d<T>>(spec); break;
    case LayerKind::batchnorm1d: layer = std::make_unique<BatchNorm1d<T>>(spec); break;
    case LayerKind::dropout: layer = std::make_unique<Dropout<T>>(spec, rng()); break;
    case LayerKind::relu: layer = std::make_unique<ReLU<T>>(spec); break;
    case LayerKind::lstm: layer = std::make_unique<Lstm<T>>(spec); break;
    case LayerKind::bilstm: layer = std::make_unique<BiLstm<T>>(spec); break;
    case LayerKind::residual_add:
      throw Error(ErrorKind::invalid_argument, "residual_add is a binary op; use Tape::add");
  }
  layer->reset_parameters(rng);
  return layer;
}

}  // namespace skna::nn
