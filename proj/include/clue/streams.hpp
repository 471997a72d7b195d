#pragma once

#include <cmath>
#include <optional>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include "clue/backbones.hpp"
#include "clue/ops.hpp"

namespace clue {

enum class RecurrentKind { lstm, rnn };

inline const char* to_string(RecurrentKind k) { return k == RecurrentKind::lstm ? "lstm" : "rnn"; }

struct AudioLayerSpec {
  Pair kernel{3, 3};
  Pair stride{1, 1};
  Pair pad{1, 1};
  friend bool operator==(const AudioLayerSpec&, const AudioLayerSpec&) = default;
};

/// Everything needed to build the classifier. Defaults are the desk-scale
/// configuration; full_scale() gives the full-size geometry.
struct ModelConfig {
  BackboneConfig backbone;
  bool backbone_trainable = false;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 1;
  RecurrentKind recurrent = RecurrentKind::lstm;
  bool attention = true;
  bool use_visual = true;
  bool use_audio = true;
  bool use_proprio = true;
  std::vector<std::size_t> audio_channels{8, 16, 32, 32};
  std::vector<AudioLayerSpec> audio_layers = square_audio_layers();
  Pair audio_pool{2, 2};
  std::size_t audio_dim = 64;
  std::size_t proprio_channels = 16;
  std::size_t proprio_kernel = 5;
  std::size_t proprio_pool = 2;
  std::size_t proprio_dim = 64;
  double dropout_visual = 0.4;
  double dropout_fusion = 0.4;
  double dropout_proprio = 0.4;
  std::size_t fusion_hidden = 256;
  std::size_t num_classes = 7;

  static std::vector<AudioLayerSpec> square_audio_layers() {
    return std::vector<AudioLayerSpec>(4, AudioLayerSpec{});
  }

  /// Two tall rectangular kernels followed by two square ones.
  static std::vector<AudioLayerSpec> rect_audio_layers() {
    return {{{16, 4}, {1, 1}, {0, 0}}, {{16, 5}, {1, 1}, {0, 0}}, {}, {}};
  }

  static ModelConfig full_scale() {
    ModelConfig c;
    c.backbone = BackboneConfig::full_scale();
    c.lstm_hidden = 512;
    return c;
  }

  void validate() const {
    if (!use_visual && !use_audio && !use_proprio) throw ConfigError("at least one modality must be enabled");
    if (lstm_hidden == 0 || lstm_layers == 0) throw ConfigError("recurrent size and depth must be >= 1");
    if (audio_layers.empty() || audio_layers.size() != audio_channels.size())
      throw ConfigError("audio_channels and audio kernel list must have the same non-zero length");
    if (num_classes < 2) throw ConfigError("need at least two classes");
    for (double p : {dropout_visual, dropout_fusion, dropout_proprio})
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probabilities must lie in [0,1)");
    if (proprio_kernel == 0 || proprio_pool == 0) throw ConfigError("proprio kernel and pool must be >= 1");
  }

  std::size_t visual_dim() const { return 2 * lstm_hidden; }

  std::size_t fused_dim() const {
    return (use_visual ? visual_dim() : 0) + (use_audio ? audio_dim : 0) + (use_proprio ? proprio_dim : 0);
  }
};

/// Shapes of the per-episode inputs the model is built for.
struct InputGeometry {
  std::size_t frame_size = 32;
  std::size_t mfcc_frames = 61;
  std::size_t n_mfcc = 13;
  std::size_t proprio_len = 50;
};

namespace detail {

/// Flattened auditory CNN output size for an [rows, cols] MFCC input, or 0
/// when some layer does not fit.
inline std::size_t audio_flat_dim(const ModelConfig& cfg, std::size_t rows, std::size_t cols) {
  std::size_t h = rows, w = cols;
  for (const auto& l : cfg.audio_layers) {
    if (l.stride.h == 0 || l.stride.w == 0) return 0;
    h = conv_out(h, l.kernel.h, l.stride.h, l.pad.h);
    w = conv_out(w, l.kernel.w, l.stride.w, l.pad.w);
    if (h == 0 || w == 0) return 0;
  }
  if (cfg.audio_pool.h > h || cfg.audio_pool.w > w) return 0;
  h = (h - cfg.audio_pool.h) / cfg.audio_pool.h + 1;
  w = (w - cfg.audio_pool.w) / cfg.audio_pool.w + 1;
  return cfg.audio_channels.back() * h * w;
}

inline std::size_t min_audio_frames(const ModelConfig& cfg, std::size_t cols) {
  for (std::size_t r = 1; r <= 4096; ++r)
    if (audio_flat_dim(cfg, r, cols) > 0) return r;
  return 0;
}

}  // namespace detail

template <class T>
struct StreamFeatures {
  Var<T> r_v, r_a, r_p, r_fused;
};

template <class T>
struct Prediction {
  Tensor<T> logits;
  Tensor<T> probs;
  std::size_t predicted = 0;
};

/// Index of the largest entry; ties go to the lowest index.
template <class T>
std::size_t argmax(const Tensor<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Model inputs for one episode. Visual input is either frames at the
/// backbone's input size or precomputed per-frame backbone features.
template <class T>
struct EpisodeInputs {
  std::vector<Tensor<T>> frames;
  std::vector<Tensor<T>> features;
  Tensor<T> mfcc;     // [n_frames, n_mfcc]
  Tensor<T> proprio;  // [T_p, 2]
};

template <class T>
struct LstmParams {
  Var<T> weight;  // [4H, D+H], gate rows ordered i, f, g, o
  Var<T> bias;    // [4H]
  std::size_t hidden = 0;
};

/// One LSTM step; returns (h_t, c_t).
template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(const Var<T>& x, const Var<T>& h_prev, const Var<T>& c_prev,
                                    const LstmParams<T>& p) {
  const std::size_t H = p.hidden;
  if (h_prev.size() != H || c_prev.size() != H) throw DimensionError("lstm_cell: state size mismatch");
  auto gates = dense(concat<T>({x, h_prev}), p.weight, p.bias);
  auto i = sigmoid(slice(gates, 0, H));
  auto f = sigmoid(slice(gates, H, H));
  auto g = tanh(slice(gates, 2 * H, H));
  auto o = sigmoid(slice(gates, 3 * H, H));
  auto c = add(mul(f, c_prev), mul(i, g));
  auto h = mul(o, tanh(c));
  return {h, c};
}

/// Elman step: h_t = tanh(W [x, h] + b).
template <class T>
Var<T> rnn_cell(const Var<T>& x, const Var<T>& h_prev, const Var<T>& weight, const Var<T>& bias) {
  return tanh(dense(concat<T>({x, h_prev}), weight, bias));
}

template <class T>
struct AttentionParams {
  Var<T> query, key, value;  // [H,H], applied as Hseq * W
};

template <class T>
struct AttentionOutput {
  Var<T> output;   // [T,H]
  Var<T> weights;  // [T,T], row-stochastic
};

/// Single-head scaled dot-product self-attention over a [T,H] sequence.
template <class T>
AttentionOutput<T> self_attention(const Var<T>& seq, const AttentionParams<T>& p) {
  require_rank(seq.value(), 2, "self_attention");
  const std::size_t H = seq.shape()[1];
  auto q = matmul(seq, p.query);
  auto k = matmul(seq, p.key);
  auto v = matmul(seq, p.value);
  auto scores = scale(matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(H))));
  auto a = softmax_rows(scores);
  return {matmul(a, v), a};
}

template <class T>
struct ForwardResult {
  Var<T> logits;
  StreamFeatures<T> features;
  Var<T> attention;  // unset when attention is off or vision disabled
};

/// The three-stream late-fusion classifier.
template <class T>
class ClueModel {
 public:
  ClueModel(ModelConfig cfg, InputGeometry geom, std::uint64_t seed) : cfg_(std::move(cfg)), geom_(geom) {
    cfg_.validate();
    Rng init(seed, "init");
    if (cfg_.use_visual) build_visual(init);
    if (cfg_.use_audio) build_audio(init);
    if (cfg_.use_proprio) build_proprio(init);
    fc1_w_ = params_.add("fusion.hidden.weight", dense_init(cfg_.fusion_hidden, cfg_.fused_dim(), init));
    fc1_b_ = params_.add("fusion.hidden.bias", Tensor<T>(Shape{cfg_.fusion_hidden}));
    fc2_w_ = params_.add("fusion.out.weight", dense_init(cfg_.num_classes, cfg_.fusion_hidden, init));
    fc2_b_ = params_.add("fusion.out.bias", Tensor<T>(Shape{cfg_.num_classes}));
  }

  ClueModel(const ClueModel&) = delete;
  ClueModel& operator=(const ClueModel&) = delete;
  ClueModel(ClueModel&&) = default;
  ClueModel& operator=(ClueModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const InputGeometry& geometry() const { return geom_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const Backbone<T>& backbone() const { return *backbone_; }
  bool has_backbone() const { return backbone_.has_value(); }

  /// Parameters the optimizer updates (the backbone only when trainable).
  std::vector<Parameter<T>*> trainable_params() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if ((cfg_.backbone_trainable || p.name.rfind("visual.backbone.", 0) != 0) &&
          p.name.rfind("visual.feature_norm.", 0) != 0)
        out.push_back(&p);
    return out;
  }

  /// Fixes the per-dimension standardisation applied to backbone features
  /// before the recurrent layer. Statistics come from the training frames;
  /// the optimizer never touches them.
  void calibrate_feature_norm(const std::vector<Tensor<T>>& feats) {
    if (!backbone_) throw ConfigError("feature normalisation needs the visual stream");
    const std::size_t D = backbone_->feature_dim();
    if (feats.empty()) throw InputError("no frames to calibrate feature normalisation");
    std::vector<double> mu(D, 0.0), var(D, 0.0);
    for (const auto& f : feats) {
      if (f.size() != D) throw DimensionError("feature length mismatch during calibration");
      for (std::size_t d = 0; d < D; ++d) mu[d] += static_cast<double>(f[d]);
    }
    const double n = static_cast<double>(feats.size());
    for (auto& m : mu) m /= n;
    for (const auto& f : feats)
      for (std::size_t d = 0; d < D; ++d) {
        const double e = static_cast<double>(f[d]) - mu[d];
        var[d] += e * e;
      }
    auto& shift = norm_shift_.mutable_value();
    auto& gain = norm_scale_.mutable_value();
    for (std::size_t d = 0; d < D; ++d) {
      shift[d] = static_cast<T>(mu[d]);
      // dead ReLU units have zero shift, so they stay at zero whatever the gain
      gain[d] = static_cast<T>(1.0 / (std::sqrt(var[d] / n) + kFeatureNormFloor));
    }
  }

  static constexpr double kFeatureNormFloor = 1e-3;

  /// Frames must already be at the backbone's input size.
  std::vector<Tensor<T>> backbone_features(const std::vector<Tensor<T>>& frames) const {
    if (!backbone_) throw ConfigError("model has no visual backbone");
    std::vector<Tensor<T>> out;
    out.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) out.push_back(backbone_->extract_features(frames[t], t).f_v);
    return out;
  }

  /// r_v from per-frame feature vectors (which may carry gradient).
  Var<T> visual_from_features(const std::vector<Var<T>>& feats, Mode mode, Rng& rng,
                              Var<T>* attention_out = nullptr) const {
    if (feats.empty()) throw InputError("visual stream needs at least one frame");
    const std::size_t H = cfg_.lstm_hidden;
    std::vector<Var<T>> seq;
    seq.reserve(feats.size());
    for (const auto& f : feats) {
      if (f.size() != backbone_->feature_dim())
        throw DimensionError("frame feature length " + std::to_string(f.size()) + " != backbone feature_dim " +
                             std::to_string(backbone_->feature_dim()));
      auto z = mul(add(flatten(f), scale(norm_shift_, T(-1))), norm_scale_);
      seq.push_back(dropout(z, cfg_.dropout_visual, mode, rng));
    }
    for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
      Var<T> h = constant(Tensor<T>(Shape{H}));
      Var<T> c = constant(Tensor<T>(Shape{H}));
      for (auto& x : seq) {
        if (cfg_.recurrent == RecurrentKind::lstm) {
          std::tie(h, c) = lstm_cell(x, h, c, lstm_[l]);
        } else {
          h = rnn_cell(x, h, lstm_[l].weight, lstm_[l].bias);
        }
        x = h;
      }
    }
    const Var<T> h_last = seq.back();
    auto hseq = stack_rows(seq);
    Var<T> context;
    if (cfg_.attention) {
      auto att = self_attention(hseq, attn_);
      if (attention_out) *attention_out = att.weights;
      context = mean_rows(add_row_bias(matmul_nt(att.output, attn_dense_w_), attn_dense_b_));
    } else {
      context = mean_rows(hseq);
    }
    return concat<T>({context, h_last});
  }

  Var<T> visual_stream(const EpisodeInputs<T>& in, Mode mode, Rng& rng, Var<T>* attention_out = nullptr) const {
    std::vector<Var<T>> feats;
    if (!in.features.empty()) {
      for (const auto& f : in.features) feats.push_back(constant(f));
    } else {
      if (in.frames.empty()) throw InputError("episode has no frames for the visual stream");
      for (const auto& fr : in.frames) {
        if (cfg_.backbone_trainable) {
          feats.push_back(backbone_->forward(constant(fr)));
        } else {
          NoGradGuard guard;
          feats.push_back(backbone_->forward(constant(fr)));
        }
      }
    }
    return visual_from_features(feats, mode, rng, attention_out);
  }

  /// MFCC matrix [n_frames, n_mfcc] -> r_a.
  Var<T> auditory_stream(const Var<T>& mfcc) const {
    require_rank(mfcc.value(), 2, "auditory stream input");
    const std::size_t rows = mfcc.shape()[0], cols = mfcc.shape()[1];
    if (detail::audio_flat_dim(cfg_, rows, cols) == 0)
      throw DimensionError("MFCC matrix " + shape_str(mfcc.shape()) + " is too small for the auditory kernels");
    Var<T> x = reshape(mfcc, Shape{1, rows, cols});
    for (std::size_t i = 0; i < audio_conv_.size(); ++i) {
      const auto& l = cfg_.audio_layers[i];
      x = relu(conv2d(x, audio_conv_[i].first, audio_conv_[i].second, l.stride, l.pad));
    }
    x = maxpool2d(x, cfg_.audio_pool, cfg_.audio_pool);
    return dense(flatten(x), audio_dense_w_, audio_dense_b_);
  }

  /// Gripper trace [T_p, 2] (openness, force) -> r_p.
  Var<T> proprio_stream(const Var<T>& trace, Mode mode, Rng& rng) const {
    require_rank(trace.value(), 2, "proprio stream input");
    const std::size_t Tp = trace.shape()[0];
    if (trace.shape()[1] != 2) throw DimensionError("proprio trace must have 2 channels");
    if (Tp < cfg_.proprio_kernel || Tp < cfg_.proprio_pool)
      throw DimensionError("proprio trace of length " + std::to_string(Tp) + " is shorter than the kernel");
    // [T_p,2] -> [2,1,T_p]
    Tensor<T> chw(Shape{2, 1, Tp});
    for (std::size_t t = 0; t < Tp; ++t)
      for (std::size_t c = 0; c < 2; ++c) chw[c * Tp + t] = trace.value()[t * 2 + c];
    Var<T> x = make_op<T>(std::move(chw), {trace}, [Tp](Node<T>& n) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t t = 0; t < Tp; ++t)
        for (std::size_t c = 0; c < 2; ++c) g[t * 2 + c] += n.grad[c * Tp + t];
    });
    const std::size_t pad = cfg_.proprio_kernel / 2;
    x = relu(conv2d(x, proprio_conv_w_, proprio_conv_b_, Pair{1, 1}, Pair{0, pad}));
    x = maxpool2d(x, Pair{1, cfg_.proprio_pool}, Pair{1, cfg_.proprio_pool});
    auto r = dense(flatten(x), proprio_dense_w_, proprio_dense_b_);
    return dropout(r, cfg_.dropout_proprio, mode, rng);
  }

  /// Concatenates the enabled modality vectors and maps them to logits.
  Var<T> fuse(StreamFeatures<T>& feats, Mode mode, Rng& rng) const {
    std::vector<Var<T>> parts;
    auto take = [&](bool enabled, const Var<T>& v, const char* name) {
      if (enabled != v.defined())
        throw ConfigError(std::string("modality mask and features disagree for ") + name);
      if (enabled) parts.push_back(v);
    };
    take(cfg_.use_visual, feats.r_v, "visual");
    take(cfg_.use_audio, feats.r_a, "audio");
    take(cfg_.use_proprio, feats.r_p, "proprio");
    feats.r_fused = concat(parts);
    auto h = relu(dense(feats.r_fused, fc1_w_, fc1_b_));
    h = dropout(h, cfg_.dropout_fusion, mode, rng);
    return dense(h, fc2_w_, fc2_b_);
  }

  ForwardResult<T> forward(const EpisodeInputs<T>& in, Mode mode, Rng& rng) const {
    ForwardResult<T> r;
    if (cfg_.use_visual) r.features.r_v = visual_stream(in, mode, rng, &r.attention);
    if (cfg_.use_audio) {
      if (in.mfcc.empty()) throw InputError("episode has no audio for the auditory stream");
      r.features.r_a = auditory_stream(constant(in.mfcc));
    }
    if (cfg_.use_proprio) {
      if (in.proprio.empty()) throw InputError("episode has no proprioceptive trace");
      r.features.r_p = proprio_stream(constant(in.proprio), mode, rng);
    }
    r.logits = fuse(r.features, mode, rng);
    return r;
  }

  Prediction<T> predict(const EpisodeInputs<T>& in) const {
    NoGradGuard guard;
    Rng unused(0, "eval");
    auto r = forward(in, Mode::eval, unused);
    Prediction<T> p{r.logits.value(), softmax(r.logits.value()), 0};
    p.predicted = argmax(p.probs);
    return p;
  }

  std::size_t audio_flat_dim() const {
    return detail::audio_flat_dim(cfg_, geom_.mfcc_frames, geom_.n_mfcc);
  }

 private:
  static Tensor<T> dense_init(std::size_t out, std::size_t in, Rng& rng) {
    return kaiming_uniform<T>(Shape{out, in}, in, rng);
  }

  static Tensor<T> recurrent_init(Shape shape, std::size_t hidden, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  }

  void build_visual(Rng& init) {
    auto bb = cfg_.backbone;
    backbone_.emplace(bb, params_, "visual.backbone.", init);
    const std::size_t H = cfg_.lstm_hidden;
    std::size_t in = backbone_->feature_dim();
    norm_shift_ = params_.add("visual.feature_norm.shift", Tensor<T>(Shape{in}));
    Tensor<T> ones(Shape{in});
    for (auto& v : ones.data()) v = T(1);
    norm_scale_ = params_.add("visual.feature_norm.scale", std::move(ones));
    const bool lstm = cfg_.recurrent == RecurrentKind::lstm;
    const std::size_t gates = lstm ? 4 * H : H;
    for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
      const std::string base = std::string("visual.") + (lstm ? "lstm" : "rnn") + std::to_string(l);
      LstmParams<T> p{params_.add(base + ".weight", recurrent_init(Shape{gates, in + H}, H, init)),
                      params_.add(base + ".bias", Tensor<T>(Shape{gates})), H};
      lstm_.push_back(p);
      in = H;
    }
    if (cfg_.attention) {
      attn_.query = params_.add("visual.attn.query", recurrent_init(Shape{H, H}, H, init));
      attn_.key = params_.add("visual.attn.key", recurrent_init(Shape{H, H}, H, init));
      attn_.value = params_.add("visual.attn.value", recurrent_init(Shape{H, H}, H, init));
      attn_dense_w_ = params_.add("visual.attn.dense.weight", dense_init(H, H, init));
      attn_dense_b_ = params_.add("visual.attn.dense.bias", Tensor<T>(Shape{H}));
    }
  }

  void build_audio(Rng& init) {
    const std::size_t flat = audio_flat_dim();
    if (flat == 0)
      throw ConfigError("MFCC input " + std::to_string(geom_.mfcc_frames) + "x" + std::to_string(geom_.n_mfcc) +
                        " too short for the auditory kernels; need at least " +
                        std::to_string(detail::min_audio_frames(cfg_, geom_.n_mfcc)) + " frames");
    std::size_t c_in = 1;
    for (std::size_t i = 0; i < cfg_.audio_layers.size(); ++i) {
      const auto& l = cfg_.audio_layers[i];
      const std::size_t c = cfg_.audio_channels[i];
      const std::string base = "audio.conv" + std::to_string(i);
      audio_conv_.emplace_back(
          params_.add(base + ".weight",
                      kaiming_uniform<T>(Shape{c, c_in, l.kernel.h, l.kernel.w}, c_in * l.kernel.h * l.kernel.w, init)),
          params_.add(base + ".bias", Tensor<T>(Shape{c})));
      c_in = c;
    }
    audio_dense_w_ = params_.add("audio.dense.weight", dense_init(cfg_.audio_dim, flat, init));
    audio_dense_b_ = params_.add("audio.dense.bias", Tensor<T>(Shape{cfg_.audio_dim}));
  }

  void build_proprio(Rng& init) {
    const std::size_t k = cfg_.proprio_kernel, C = cfg_.proprio_channels;
    if (geom_.proprio_len < k) throw ConfigError("proprio trace shorter than its kernel");
    proprio_conv_w_ = params_.add("proprio.conv.weight", kaiming_uniform<T>(Shape{C, 2, 1, k}, 2 * k, init));
    proprio_conv_b_ = params_.add("proprio.conv.bias", Tensor<T>(Shape{C}));
    const std::size_t conv_len = geom_.proprio_len + 2 * (k / 2) - k + 1;
    if (conv_len < cfg_.proprio_pool) throw ConfigError("proprio trace shorter than its pooling window");
    const std::size_t pooled = (conv_len - cfg_.proprio_pool) / cfg_.proprio_pool + 1;
    proprio_dense_w_ = params_.add("proprio.dense.weight", dense_init(cfg_.proprio_dim, C * pooled, init));
    proprio_dense_b_ = params_.add("proprio.dense.bias", Tensor<T>(Shape{cfg_.proprio_dim}));
  }

  ModelConfig cfg_;
  InputGeometry geom_;
  ParameterSet<T> params_;
  std::optional<Backbone<T>> backbone_;
  Var<T> norm_shift_, norm_scale_;
  std::vector<LstmParams<T>> lstm_;
  AttentionParams<T> attn_;
  Var<T> attn_dense_w_, attn_dense_b_;
  std::vector<std::pair<Var<T>, Var<T>>> audio_conv_;
  Var<T> audio_dense_w_, audio_dense_b_;
  Var<T> proprio_conv_w_, proprio_conv_b_, proprio_dense_w_, proprio_dense_b_;
  Var<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

}  // namespace clue
