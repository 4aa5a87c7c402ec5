#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "skna/container.hpp"
#include "skna/denoiser.hpp"

namespace skna {

/// Flattens every named tensor (parameters and buffers) into one payload.
inline ModelSection model_section(DenoiserModel<float>& model, const nlohmann::json& extra = {}) {
  ModelSection s;
  nlohmann::json tensors = nlohmann::json::array();
  for (auto& [name, p] : model.named_state()) {
    tensors.push_back({{"name", name}, {"shape", p->shape}, {"offset", s.payload.size()}});
    s.payload.insert(s.payload.end(), p->value.begin(), p->value.end());
  }
  s.manifest = {{"architecture", "conv-lstm-autoencoder"},
                {"window_len", model.window_len()},
                {"norm_mean", model.norm_stats.mean},
                {"norm_std", model.norm_stats.std},
                {"tensors", tensors}};
  if (!extra.is_null()) s.manifest["extra"] = extra;
  return s;
}

/// Rebuilds a model from a section; tensor names and shapes must match exactly.
inline DenoiserModel<float> model_from_section(const ModelSection& s) {
  try {
    DenoiserModel<float> model(0, s.manifest.at("window_len").get<std::size_t>());
    model.norm_stats = {s.manifest.at("norm_mean").get<double>(), s.manifest.at("norm_std").get<double>()};
    auto state = model.named_state();
    const auto& tensors = s.manifest.at("tensors");
    if (tensors.size() != state.size())
      throw Error(ErrorKind::format, "checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                                         std::to_string(state.size()));
    for (std::size_t i = 0; i < state.size(); ++i) {
      auto& [name, p] = state[i];
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != name || t.at("shape").get<std::vector<std::size_t>>() != p->shape)
        throw Error(ErrorKind::format, "checkpoint tensor #" + std::to_string(i) + " does not match '" + name + "'");
      const auto off = t.at("offset").get<std::size_t>();
      if (off + p->size() > s.payload.size())
        throw Error(ErrorKind::format, "checkpoint payload too short for '" + name + "'");
      std::copy_n(s.payload.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->value.begin());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("checkpoint manifest: ") + e.what());
  }
}

inline void save_checkpoint(DenoiserModel<float>& model, const std::filesystem::path& path, double fs,
                            const nlohmann::json& extra = {}) {
  RecordingContainer c;
  c.fs = fs;
  c.manifest = {{"kind", "checkpoint"}};
  c.model = model_section(model, extra);
  write_container(c, path);
}

inline DenoiserModel<float> load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (!c.model) throw Error(ErrorKind::format, "'" + path.string() + "' has no model section");
  return model_from_section(*c.model);
}

}  // namespace skna
