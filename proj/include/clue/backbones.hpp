#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "clue/ops.hpp"

namespace clue {

enum class BackboneKind { vgg16, alexnet, resnet18 };

inline const char* to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::vgg16: return "vgg16";
    case BackboneKind::alexnet: return "alexnet";
    case BackboneKind::resnet18: return "resnet18";
  }
  return "?";
}

inline BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "vgg16") return BackboneKind::vgg16;
  if (s == "alexnet") return BackboneKind::alexnet;
  if (s == "resnet18") return BackboneKind::resnet18;
  throw ConfigError("unknown backbone '" + s + "' (expected vgg16, alexnet or resnet18)");
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::vgg16;
  double width_multiplier = 0.125;
  std::size_t input_size = 32;
  /// Final global average pool; only ResNet has one.
  bool with_avg_pool = false;

  static BackboneConfig full_scale() { return {BackboneKind::vgg16, 1.0, 224, false}; }

  std::size_t channels(std::size_t base) const {
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
      throw ConfigError("width multiplier must lie in (0,1]");
    return static_cast<std::size_t>(std::ceil(width_multiplier * static_cast<double>(base) - 1e-9));
  }

  std::size_t feature_dim() const;
};

template <class T>
struct FrameFeatures {
  Tensor<T> f_v;
  std::size_t t = 0;
};

namespace detail {

struct ConvSpec {
  std::string name;
  std::size_t c_in, c_out, kh, kw;
  Pair stride, pad;
  bool relu = true;
};
struct PoolSpec {
  Pair kernel, stride;
};
struct BlockSpec {
  std::string name;
  ConvSpec conv1, conv2;
  std::optional<ConvSpec> proj;
};
struct AvgSpec {};

using LayerSpec = std::variant<ConvSpec, PoolSpec, BlockSpec, AvgSpec>;

inline std::size_t conv_out(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
  if (k > n + 2 * p) return 0;
  return (n + 2 * p - k) / s + 1;
}

inline std::vector<LayerSpec> plan_backbone(const BackboneConfig& cfg) {
  std::vector<LayerSpec> layers;
  const std::size_t S = cfg.input_size;
  switch (cfg.kind) {
    case BackboneKind::vgg16: {
      if (S == 0 || S % 32 != 0)
        throw ConfigError("vgg16 input size must be a positive multiple of 32, got " + std::to_string(S));
      const std::size_t plan[13] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
      std::size_t c_in = 3;
      for (int i = 0; i < 13; ++i) {
        const std::size_t c = cfg.channels(plan[i]);
        layers.push_back(ConvSpec{"conv" + std::to_string(i + 1), c_in, c, 3, 3, {1, 1}, {1, 1}, true});
        c_in = c;
        if (i == 1 || i == 3 || i == 6 || i == 9 || i == 12) layers.push_back(PoolSpec{{2, 2}, {2, 2}});
      }
      break;
    }
    case BackboneKind::alexnet: {
      const std::size_t c1 = cfg.channels(64), c2 = cfg.channels(192), c3 = cfg.channels(384),
                        c4 = cfg.channels(256), c5 = cfg.channels(256);
      layers.push_back(ConvSpec{"conv1", 3, c1, 11, 11, {4, 4}, {2, 2}, true});
      layers.push_back(PoolSpec{{3, 3}, {2, 2}});
      layers.push_back(ConvSpec{"conv2", c1, c2, 5, 5, {1, 1}, {2, 2}, true});
      layers.push_back(PoolSpec{{3, 3}, {2, 2}});
      layers.push_back(ConvSpec{"conv3", c2, c3, 3, 3, {1, 1}, {1, 1}, true});
      layers.push_back(ConvSpec{"conv4", c3, c4, 3, 3, {1, 1}, {1, 1}, true});
      layers.push_back(ConvSpec{"conv5", c4, c5, 3, 3, {1, 1}, {1, 1}, true});
      layers.push_back(PoolSpec{{3, 3}, {2, 2}});
      break;
    }
    case BackboneKind::resnet18: {
      if (S == 0 || S % 32 != 0)
        throw ConfigError("resnet18 input size must be a positive multiple of 32, got " + std::to_string(S));
      const std::size_t stem = cfg.channels(64);
      layers.push_back(ConvSpec{"stem", 3, stem, 7, 7, {2, 2}, {3, 3}, true});
      layers.push_back(PoolSpec{{2, 2}, {2, 2}});
      std::size_t c_in = stem;
      const std::size_t widths[4] = {64, 128, 256, 512};
      for (int s = 0; s < 4; ++s) {
        const std::size_t c = cfg.channels(widths[s]);
        for (int b = 0; b < 2; ++b) {
          const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
          const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
          BlockSpec blk{name,
                        ConvSpec{name + ".conv1", c_in, c, 3, 3, {stride, stride}, {1, 1}, true},
                        ConvSpec{name + ".conv2", c, c, 3, 3, {1, 1}, {1, 1}, false},
                        std::nullopt};
          if (stride != 1 || c_in != c)
            blk.proj = ConvSpec{name + ".proj", c_in, c, 1, 1, {stride, stride}, {0, 0}, false};
          layers.push_back(blk);
          c_in = c;
        }
      }
      if (cfg.with_avg_pool) layers.push_back(AvgSpec{});
      break;
    }
  }
  if (cfg.with_avg_pool && cfg.kind != BackboneKind::resnet18)
    throw ConfigError("average pooling variant is only defined for resnet18");
  return layers;
}

/// Walks the plan over a [3,S,S] input; returns [C,H,W] of the output, or
/// throws when a stage no longer fits.
inline Shape trace_shape(const BackboneConfig& cfg, const std::vector<LayerSpec>& layers) {
  std::size_t c = 3, h = cfg.input_size, w = cfg.input_size;
  auto fail = [&](const std::string& where) {
    return ConfigError(std::string(to_string(cfg.kind)) + ": input size " + std::to_string(cfg.input_size) +
                       " too small for the stride plan at " + where);
  };
  auto conv = [&](const ConvSpec& s) {
    h = conv_out(h, s.kh, s.stride.h, s.pad.h);
    w = conv_out(w, s.kw, s.stride.w, s.pad.w);
    if (h == 0 || w == 0) throw fail(s.name);
    c = s.c_out;
  };
  for (const auto& l : layers) {
    if (auto* s = std::get_if<ConvSpec>(&l)) {
      conv(*s);
    } else if (auto* p = std::get_if<PoolSpec>(&l)) {
      if (p->kernel.h > h || p->kernel.w > w) throw fail("max-pool");
      h = (h - p->kernel.h) / p->stride.h + 1;
      w = (w - p->kernel.w) / p->stride.w + 1;
    } else if (auto* b = std::get_if<BlockSpec>(&l)) {
      conv(b->conv1);
      conv(b->conv2);
    } else {
      h = w = 1;
    }
  }
  return {c, h, w};
}

}  // namespace detail

inline std::size_t BackboneConfig::feature_dim() const {
  return shape_size(detail::trace_shape(*this, detail::plan_backbone(*this)));
}

/// Center-crop to a square, then bilinear resize (half-pixel centres) to S.
template <class T>
Tensor<T> crop_and_scale(const Tensor<T>& frame, std::size_t S) {
  require_rank(frame, 3, "crop_and_scale");
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const std::size_t side = std::min(H, W);
  const std::size_t oy = (H - side) / 2, ox = (W - side) / 2;
  if (side == S && H == W) return frame;
  Tensor<T> out(Shape{C, S, S});
  const double scale = static_cast<double>(side) / static_cast<double>(S);
  for (std::size_t i = 0; i < S; ++i) {
    const double sy = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < S; ++j) {
      const double sx = std::clamp((static_cast<double>(j) + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double v = (1 - fy) * ((1 - fx) * frame.at(c, oy + y0, ox + x0) + fx * frame.at(c, oy + y0, ox + x1)) +
                         fy * ((1 - fx) * frame.at(c, oy + y1, ox + x0) + fx * frame.at(c, oy + y1, ox + x1));
        out.at(c, i, j) = static_cast<T>(v);
      }
    }
  }
  return out;
}

/// Kaiming-uniform (fan-in) weights, zero bias.
template <class T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Convolutional feature extractor without its classifier layers. Holds
/// handles into the owning ParameterSet; forward passes are stateless.
template <class T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParameterSet<T>& params, const std::string& prefix, Rng& init)
      : cfg_(cfg), plan_(detail::plan_backbone(cfg)) {
    out_shape_ = detail::trace_shape(cfg_, plan_);
    for (const auto& l : plan_) {
      if (auto* s = std::get_if<detail::ConvSpec>(&l)) {
        register_conv(*s, params, prefix, init);
        last_conv_ = s->name;
      } else if (auto* b = std::get_if<detail::BlockSpec>(&l)) {
        register_conv(b->conv1, params, prefix, init);
        register_conv(b->conv2, params, prefix, init);
        if (b->proj) register_conv(*b->proj, params, prefix, init);
        last_conv_ = b->name;
      }
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return shape_size(out_shape_); }
  const Shape& output_shape() const { return out_shape_; }
  /// Name of the layer whose output is the last convolutional activation.
  const std::string& last_conv_layer() const { return last_conv_; }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto& l : plan_) {
      if (auto* s = std::get_if<detail::ConvSpec>(&l)) out.push_back(s->name);
      if (auto* b = std::get_if<detail::BlockSpec>(&l)) out.push_back(b->name);
    }
    return out;
  }

  Var<T> forward(const Var<T>& frame) const {
    check_input(frame.value());
    return flatten(run(frame, 0, plan_.size()));
  }

  /// Activation right after `layer` (post-ReLU for convs and blocks).
  Var<T> forward_until(const Var<T>& frame, const std::string& layer) const {
    check_input(frame.value());
    return run(frame, 0, split_index(layer));
  }

  /// Continues from an activation produced by forward_until(…, layer).
  Var<T> forward_from(const Var<T>& activation, const std::string& layer) const {
    return flatten(run(activation, split_index(layer), plan_.size()));
  }

  FrameFeatures<T> extract_features(const Tensor<T>& frame, std::size_t t = 0) const {
    NoGradGuard guard;
    return {forward(constant(frame)).value(), t};
  }

 private:
  struct ConvParams {
    Var<T> w, b;
  };

  void register_conv(const detail::ConvSpec& s, ParameterSet<T>& params, const std::string& prefix, Rng& init) {
    const std::size_t fan_in = s.c_in * s.kh * s.kw;
    ConvParams cp{params.add(prefix + s.name + ".weight",
                             kaiming_uniform<T>(Shape{s.c_out, s.c_in, s.kh, s.kw}, fan_in, init)),
                  params.add(prefix + s.name + ".bias", Tensor<T>(Shape{s.c_out}))};
    convs_.emplace(s.name, std::move(cp));
  }

  Var<T> apply_conv(const detail::ConvSpec& s, const Var<T>& x) const {
    const auto& p = convs_.at(s.name);
    auto y = conv2d(x, p.w, p.b, s.stride, s.pad);
    return s.relu ? relu(y) : y;
  }

  Var<T> run(Var<T> x, std::size_t begin, std::size_t end) const {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& l = plan_[i];
      if (auto* s = std::get_if<detail::ConvSpec>(&l)) {
        x = apply_conv(*s, x);
      } else if (auto* p = std::get_if<detail::PoolSpec>(&l)) {
        x = maxpool2d(x, p->kernel, p->stride);
      } else if (auto* b = std::get_if<detail::BlockSpec>(&l)) {
        auto branch = apply_conv(b->conv2, apply_conv(b->conv1, x));
        auto shortcut = b->proj ? apply_conv(*b->proj, x) : x;
        x = relu(add(branch, shortcut));
      } else {
        x = reshape(global_avg_pool(x), Shape{x.shape()[0], 1, 1});
      }
    }
    return x;
  }

  std::size_t split_index(const std::string& layer) const {
    for (std::size_t i = 0; i < plan_.size(); ++i) {
      if (auto* s = std::get_if<detail::ConvSpec>(&plan_[i]); s && s->name == layer) return i + 1;
      if (auto* b = std::get_if<detail::BlockSpec>(&plan_[i]); b && b->name == layer) return i + 1;
    }
    throw ConfigError("backbone has no layer named '" + layer + "'");
  }

  void check_input(const Tensor<T>& frame) const {
    require_shape(frame, Shape{3, cfg_.input_size, cfg_.input_size}, "backbone input");
  }

  BackboneConfig cfg_;
  std::vector<detail::LayerSpec> plan_;
  Shape out_shape_;
  std::string last_conv_;
  std::map<std::string, ConvParams> convs_;
};

}  // namespace clue
