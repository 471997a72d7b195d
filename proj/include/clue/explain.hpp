#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clue/datagen.hpp"
#include "clue/streams.hpp"
#include "clue/text.hpp"

namespace clue {

struct ActivationMap {
  Tensor<double> values;     // [h,w] in [0,1]
  Tensor<double> upsampled;  // [S,S]
  Tensor<double> raw;        // ReLU(sum_k alpha_k A^k) before normalisation
  std::vector<double> alpha; // channel weights
  std::size_t target_class = 0;
  std::size_t frame_index = 0;
  bool zero_map = false;     // every weighted activation was <= 0, or the map was constant
};

/// Bilinear resize with half-pixel centres, [h,w] -> [S,S].
inline Tensor<double> upsample_bilinear(const Tensor<double>& m, std::size_t S) {
  require_rank(m, 2, "upsample_bilinear");
  const std::size_t h = m.dim(0), w = m.dim(1);
  Tensor<double> out(Shape{S, S});
  const double sy = static_cast<double>(h) / static_cast<double>(S);
  const double sx = static_cast<double>(w) / static_cast<double>(S);
  for (std::size_t i = 0; i < S; ++i) {
    const double y = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < S; ++j) {
      const double x = std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      out.at(i, j) = (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x1)) +
                     fy * ((1 - fx) * m.at(y1, x0) + fx * m.at(y1, x1));
    }
  }
  return out;
}

namespace detail {

/// Logit of `target` with the chosen frame's activation at `layer` as a leaf.
/// Returns (logit, activation leaf).
template <class T>
std::pair<Var<T>, Var<T>> cam_forward(const ClueModel<T>& model, const EpisodeInputs<T>& in, std::size_t target,
                                      std::size_t frame_index, const std::string& layer) {
  const auto& bb = model.backbone();
  std::vector<Var<T>> feats;
  Var<T> leaf;
  for (std::size_t t = 0; t < in.frames.size(); ++t) {
    if (t == frame_index) {
      Tensor<T> act;
      {
        NoGradGuard guard;
        act = bb.forward_until(constant(in.frames[t]), layer).value();
      }
      leaf = Var<T>(std::move(act), true);
      feats.push_back(bb.forward_from(leaf, layer));
    } else {
      feats.push_back(constant(bb.extract_features(in.frames[t], t).f_v));
    }
  }
  Rng unused(0, "eval");
  StreamFeatures<T> sf;
  sf.r_v = model.visual_from_features(feats, Mode::eval, unused);
  const auto& cfg = model.config();
  if (cfg.use_audio) sf.r_a = model.auditory_stream(constant(in.mfcc));
  if (cfg.use_proprio) sf.r_p = model.proprio_stream(constant(in.proprio), Mode::eval, unused);
  auto logits = model.fuse(sf, Mode::eval, unused);
  return {slice(logits, target, 1), leaf};
}

}  // namespace detail

/// Grad-CAM on `layer` (default: the backbone's last conv activation) for one
/// frame. Gradients flow through fusion, attention and the recurrent layers.
template <class T>
ActivationMap grad_cam(ClueModel<T>& model, const EpisodeInputs<T>& in, std::size_t target_class,
                       std::size_t frame_index, std::string layer = "") {
  const auto& cfg = model.config();
  if (!cfg.use_visual || !model.has_backbone()) throw ConfigError("Grad-CAM needs the visual stream");
  if (target_class >= cfg.num_classes) throw InputError("target class " + std::to_string(target_class) + " out of range");
  if (frame_index >= in.frames.size())
    throw InputError("frame index " + std::to_string(frame_index) + " out of range for " +
                     std::to_string(in.frames.size()) + " frames");
  if (layer.empty()) layer = model.backbone().last_conv_layer();

  auto [y, leaf] = detail::cam_forward(model, in, target_class, frame_index, layer);
  backward(y);
  const Tensor<T> A = leaf.value();
  const Tensor<T> G = leaf.grad();
  model.params().zero_grad();

  require_rank(A, 3, "Grad-CAM activation");
  const std::size_t K = A.dim(0), h = A.dim(1), w = A.dim(2), hw = h * w;
  ActivationMap m;
  m.target_class = target_class;
  m.frame_index = frame_index;
  m.alpha.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(G[k * hw + i]);
    m.alpha[k] = s / static_cast<double>(hw);
  }
  m.raw = Tensor<double>(Shape{h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += m.alpha[k] * static_cast<double>(A[k * hw + i]);
    m.raw[i] = std::max(0.0, s);
  }
  const auto [lo, hi] = std::minmax_element(m.raw.data().begin(), m.raw.data().end());
  m.values = Tensor<double>(Shape{h, w});
  if (*hi > *lo) {
    for (std::size_t i = 0; i < hw; ++i) m.values[i] = (m.raw[i] - *lo) / (*hi - *lo);
  } else {
    m.zero_map = true;
  }
  m.upsampled = upsample_bilinear(m.values, in.frames[frame_index].dim(1));
  return m;
}

/// Fraction of the upsampled map's mass inside an image quadrant
/// (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right).
inline double quadrant_mass(const Tensor<double>& map, std::size_t quadrant) {
  require_rank(map, 2, "quadrant_mass");
  const std::size_t H = map.dim(0), W = map.dim(1);
  double total = 0, inside = 0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double v = map.at(i, j);
      total += v;
      const std::size_t q = (i >= H / 2 ? 2 : 0) + (j >= W / 2 ? 1 : 0);
      if (q == quadrant) inside += v;
    }
  return total > 0 ? inside / total : 0.0;
}

/// 50/50 blend of the frame with a blue-to-red colormap of the map.
template <class T>
Tensor<float> overlay(const Tensor<double>& map, const Tensor<T>& frame) {
  require_rank(frame, 3, "overlay frame");
  require_rank(map, 2, "overlay map");
  const std::size_t S = frame.dim(1);
  if (frame.dim(0) != 3 || map.dim(0) != S || map.dim(1) != frame.dim(2))
    throw DimensionError("overlay: map " + shape_str(map.shape()) + " does not match frame " + shape_str(frame.shape()));
  Tensor<float> out(frame.shape());
  const std::size_t HW = S * frame.dim(2);
  for (std::size_t i = 0; i < HW; ++i) {
    const double v = std::clamp(map[i], 0.0, 1.0);
    const double cmap[3] = {v, 0.0, 1.0 - v};
    for (std::size_t c = 0; c < 3; ++c)
      out[c * HW + i] = static_cast<float>(0.5 * static_cast<double>(frame[c * HW + i]) + 0.5 * cmap[c]);
  }
  return out;
}

inline std::string map_tsv(const Tensor<double>& m) {
  std::string s;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) s += (j ? "\t" : "") + text::fixed6(m.at(i, j));
    s += "\n";
  }
  return s;
}

}  // namespace clue
