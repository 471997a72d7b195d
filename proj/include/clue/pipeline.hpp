#pragma once

#include <string>
#include <vector>

#include "clue/audio.hpp"
#include "clue/backbones.hpp"
#include "clue/datagen.hpp"
#include "clue/streams.hpp"

namespace clue {

/// An episode converted to model inputs. Frames are already at the backbone
/// input size; `inputs.features` is filled per model by attach_features.
struct PreparedEpisode {
  std::string id;
  std::size_t label = 0;
  std::size_t signal_region = 0;
  std::size_t event_frame = 0;
  EpisodeInputs<float> inputs;
};

/// Zeroes each pixel (all channels at one location) independently with
/// probability p. Returns the number of zeroed pixels.
template <class T>
std::size_t zero_pixels(Tensor<T>& frame, double p, Rng& rng) {
  require_rank(frame, 3, "zero_pixels");
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("pixel flip probability must lie in [0,1)");
  if (p == 0.0) return 0;
  const std::size_t C = frame.dim(0), HW = frame.dim(1) * frame.dim(2);
  std::size_t zeroed = 0;
  for (std::size_t i = 0; i < HW; ++i)
    if (rng.bernoulli(p)) {
      ++zeroed;
      for (std::size_t c = 0; c < C; ++c) frame[c * HW + i] = T{0};
    }
  return zeroed;
}

inline Tensor<float> to_float(const Tensor<double>& t) { return t.cast<float>(); }

inline PreparedEpisode prepare_episode(const Episode& ep, std::size_t input_size, const audio::MfccParams& mp) {
  PreparedEpisode out;
  out.id = ep.id;
  out.label = class_index(ep.label);
  out.signal_region = ep.signal_region;
  out.event_frame = ep.event_frame;
  for (std::size_t t = 0; t < ep.num_frames(); ++t) out.inputs.frames.push_back(crop_and_scale(ep.frame(t), input_size));
  out.inputs.mfcc = to_float(audio::mfcc(ep.audio, mp).coeffs);
  out.inputs.proprio = to_float(ep.proprio);
  return out;
}

inline std::vector<PreparedEpisode> prepare_all(const std::vector<Episode>& eps, std::size_t input_size,
                                                const audio::MfccParams& mp) {
  std::vector<PreparedEpisode> out;
  out.reserve(eps.size());
  for (const auto& e : eps) out.push_back(prepare_episode(e, input_size, mp));
  return out;
}

/// Caches the frozen backbone's per-frame features on every episode.
inline void attach_features(std::vector<PreparedEpisode>& eps, const ClueModel<float>& model) {
  if (!model.has_backbone()) return;
  for (auto& e : eps) e.inputs.features = model.backbone_features(e.inputs.frames);
}

inline InputGeometry geometry_for(const std::vector<PreparedEpisode>& eps, std::size_t frame_size) {
  InputGeometry g;
  g.frame_size = frame_size;
  if (!eps.empty()) {
    g.mfcc_frames = eps.front().inputs.mfcc.dim(0);
    g.n_mfcc = eps.front().inputs.mfcc.dim(1);
    g.proprio_len = eps.front().inputs.proprio.dim(0);
  }
  return g;
}

}  // namespace clue
