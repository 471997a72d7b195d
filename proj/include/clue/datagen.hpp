#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "clue/audio.hpp"
#include "clue/rng.hpp"
#include "clue/tensor.hpp"
#include "clue/text.hpp"

namespace clue {

enum class AnomalyClass : std::size_t { SAFE = 0, LOC, DIS, EUA, OTA, SPC, FCA };

inline constexpr std::size_t kNumClasses = 7;
inline constexpr std::array<const char*, kNumClasses> kClassNames{"SAFE", "LOC", "DIS", "EUA", "OTA", "SPC", "FCA"};
/// Episode counts of the recorded dataset, in class order.
inline constexpr std::array<std::size_t, kNumClasses> kReferenceCounts{68, 22, 41, 33, 18, 43, 24};

inline const char* class_name(AnomalyClass c) { return kClassNames[static_cast<std::size_t>(c)]; }
inline std::size_t class_index(AnomalyClass c) { return static_cast<std::size_t>(c); }

inline AnomalyClass parse_class(const std::string& s) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (s == kClassNames[i]) return static_cast<AnomalyClass>(i);
  throw InputError("unknown class label '" + s + "'");
}

/// Image quadrants; the generator places each episode's discriminative event
/// in one of them.
inline constexpr std::array<const char*, 4> kQuadrantNames{"top_left", "top_right", "bottom_left", "bottom_right"};

inline std::size_t parse_quadrant(const std::string& s) {
  for (std::size_t i = 0; i < 4; ++i)
    if (s == kQuadrantNames[i]) return i;
  throw FormatError("unknown signal region '" + s + "'");
}

struct GeneratorParams {
  std::size_t frames = 8;
  std::size_t image_size = 32;
  /// Simulated span covered by the frames; frames are 1/frame_rate apart.
  double duration_s = 64.0;
  double audio_seconds = 1.0;
  double sample_rate = 16000.0;
  std::size_t proprio_len = 50;
  double pixel_noise = 0.02;
  double sensor_noise = 0.03;
  double audio_noise = 0.002;

  void validate() const {
    if (frames < 1) throw ConfigError("frames must be >= 1");
    if (image_size < 8) throw ConfigError("image_size must be >= 8");
    if (!(duration_s > 0.0)) throw ConfigError("duration_s must be > 0");
    if (!(audio_seconds > 0.0) || !(sample_rate > 0.0)) throw ConfigError("audio length and rate must be > 0");
    if (proprio_len < 2) throw ConfigError("proprio_len must be >= 2");
    if (pixel_noise < 0 || sensor_noise < 0 || audio_noise < 0) throw ConfigError("noise levels must be >= 0");
  }

  std::size_t audio_samples() const { return static_cast<std::size_t>(std::lround(audio_seconds * sample_rate)); }
};

struct Episode {
  std::string id;
  AnomalyClass label = AnomalyClass::SAFE;
  Tensor<float> frames;            // [T,3,S,S], values in [0,1]
  std::vector<double> timestamps;  // seconds, strictly ascending
  audio::Waveform audio;
  Tensor<double> proprio;           // [T_p,2]: openness, force
  std::vector<double> proprio_times;
  std::uint64_t seed = 0;
  std::size_t signal_region = 0;
  std::size_t event_frame = 0;

  std::size_t num_frames() const { return frames.dim(0); }
  std::size_t image_size() const { return frames.dim(2); }

  Tensor<float> frame(std::size_t t) const {
    const std::size_t S = image_size(), n = 3 * S * S;
    std::vector<float> v(frames.ptr() + t * n, frames.ptr() + (t + 1) * n);
    return Tensor<float>(Shape{3, S, S}, std::move(v));
  }
};

namespace gen {

struct Color {
  float r, g, b;
};

inline constexpr Color kObject{0.92f, 0.15f, 0.10f};
inline constexpr Color kHand{0.95f, 0.74f, 0.55f};
inline constexpr Color kContainer{0.47f, 0.47f, 0.47f};
inline constexpr Color kGranule{0.88f, 0.88f, 0.82f};
inline constexpr Color kStack[3] = {{0.15f, 0.30f, 0.92f}, {0.20f, 0.82f, 0.25f}, {0.92f, 0.86f, 0.20f}};
inline constexpr Color kFiller = kGranule;
inline constexpr Color kSpill{0.55f, 0.25f, 0.75f};

struct Point {
  double x, y;
};

inline Point quadrant_center(std::size_t q) { return {0.25 + 0.5 * static_cast<double>(q % 2), 0.25 + 0.5 * static_cast<double>(q / 2)}; }

inline Point point_in_quadrant(std::size_t q, Rng& rng, double spread = 0.1) {
  const auto c = quadrant_center(q);
  return {c.x + rng.uniform(-spread, spread), c.y + rng.uniform(-spread, spread)};
}

inline Point lerp(Point a, Point b, double s) { return {a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s}; }

/// Float canvas [3,S,S] with anti-aliased primitive rendering in normalized
/// coordinates (x right, y down, both in [0,1]).
class Canvas {
 public:
  explicit Canvas(std::size_t S) : S_(S), px_(Shape{3, S, S}) {}

  std::size_t size() const { return S_; }
  Tensor<float>& pixels() { return px_; }

  void blend(std::size_t i, std::size_t j, Color c, double alpha) {
    if (alpha <= 0.0) return;
    const float a = static_cast<float>(std::min(alpha, 1.0));
    px_.at(0, i, j) = px_.at(0, i, j) * (1 - a) + c.r * a;
    px_.at(1, i, j) = px_.at(1, i, j) * (1 - a) + c.g * a;
    px_.at(2, i, j) = px_.at(2, i, j) * (1 - a) + c.b * a;
  }

  void disc(Point p, double radius, Color c) {
    const double S = static_cast<double>(S_);
    const double cx = p.x * S, cy = p.y * S, r = radius * S;
    for (std::size_t i = 0; i < S_; ++i)
      for (std::size_t j = 0; j < S_; ++j) {
        const double d = std::hypot(static_cast<double>(j) + 0.5 - cx, static_cast<double>(i) + 0.5 - cy);
        blend(i, j, c, std::clamp(r + 0.5 - d, 0.0, 1.0));
      }
  }

  /// Rectangle centred at p with half extents (hw, hh), rotated by angle.
  void rect(Point p, double hw, double hh, double angle, Color c) {
    const double S = static_cast<double>(S_);
    const double cx = p.x * S, cy = p.y * S, ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t i = 0; i < S_; ++i)
      for (std::size_t j = 0; j < S_; ++j) {
        const double dx = static_cast<double>(j) + 0.5 - cx, dy = static_cast<double>(i) + 0.5 - cy;
        const double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
        const double d = std::max(std::abs(lx) - hw * S, std::abs(ly) - hh * S);
        blend(i, j, c, std::clamp(0.5 - d, 0.0, 1.0));
      }
  }

  /// Open-topped container: two walls and a floor.
  void container(Point p, double half) {
    rect({p.x - half, p.y}, 0.015, half, 0.0, kContainer);
    rect({p.x + half, p.y}, 0.015, half, 0.0, kContainer);
    rect({p.x, p.y + half}, half, 0.015, 0.0, kContainer);
  }

 private:
  std::size_t S_;
  Tensor<float> px_;
};

struct Background {
  double phase_x, phase_y, freq;
};

inline void paint_background(Canvas& cv, const Background& bg) {
  const double base[3] = {0.12, 0.13, 0.16};
  const std::size_t S = cv.size();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(S);
        const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(S);
        const double tex = 0.03 * std::sin(2 * std::numbers::pi * (bg.freq * u + bg.phase_x)) *
                           std::cos(2 * std::numbers::pi * (bg.freq * v + bg.phase_y));
        cv.pixels().at(c, i, j) = static_cast<float>(base[c] + tex);
      }
}

inline void add_pixel_noise(Tensor<float>& px, double sigma, Rng& rng) {
  for (auto& v : px.data()) v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal(0.0, sigma), 0.0, 1.0));
}

/// Scene layout shared by every frame of one episode.
struct Layout {
  std::size_t signal = 0;     // quadrant of the discriminative event
  std::size_t container = 0;  // quadrant of the container, != signal
  std::size_t other = 0;      // a third quadrant, != both
  std::size_t event = 0;      // frame index of the event
  Point start{}, target{};
  std::array<Point, 3> scatter{};
  std::vector<Point> granules_in, granules_out;
  double container_half = 0.12;
};

inline void render_frame(Canvas& cv, AnomalyClass label, const Layout& L, std::size_t k, std::size_t T) {
  const auto cpos = quadrant_center(L.container);
  cv.container(cpos, L.container_half);
  const double obj_r = 0.09;
  const bool after = k >= L.event;
  switch (label) {
    case AnomalyClass::SAFE: {
      const double s = T > 1 ? static_cast<double>(k) / static_cast<double>(T - 1) : 1.0;
      cv.disc(lerp(L.start, L.target, s), obj_r, kObject);
      break;
    }
    case AnomalyClass::LOC:
      cv.disc(after ? L.target : L.start, obj_r, kObject);
      // the hand reaches in one frame early and drops the object at the target
      if (k + 1 == L.event) cv.disc({L.start.x + 0.08, L.start.y - 0.1}, 0.18, kHand);
      if (k == L.event) cv.disc({L.target.x + 0.08, L.target.y - 0.1}, 0.18, kHand);
      break;
    case AnomalyClass::DIS:
      if (!after) cv.disc(L.start, obj_r, kObject);
      if (k + 1 == L.event || k == L.event) cv.disc({L.start.x + 0.05, L.start.y - 0.08}, 0.18, kHand);
      break;
    case AnomalyClass::EUA: {
      for (int b = 0; b < 3; ++b) {
        if (!after) {
          cv.rect({L.target.x, L.target.y + 0.1 - 0.1 * b}, 0.06, 0.045, 0.0, kStack[b]);
        } else {
          cv.rect(L.scatter[b], 0.06, 0.045, 0.9 * (b + 1), kStack[b]);
        }
      }
      break;
    }
    case AnomalyClass::OTA: {
      double angle = 0.0;
      Point p = L.target;
      if (after) {
        angle = std::numbers::pi / 2;
        p.y += 0.06;
      } else if (k + 1 == L.event) {
        angle = 0.35;
      }
      cv.rect(p, 0.045, 0.13, angle, kObject);
      break;
    }
    case AnomalyClass::SPC: {
      const double progress = after ? std::min(1.0, static_cast<double>(k - L.event + 1) / 2.0) : 0.0;
      for (std::size_t g = 0; g < L.granules_in.size(); ++g)
        cv.disc(lerp(L.granules_in[g], L.granules_out[g], progress), 0.035, kGranule);
      break;
    }
    case AnomalyClass::FCA: {
      cv.disc({cpos.x - 0.05, cpos.y + 0.05}, 0.06, kFiller);
      cv.disc({cpos.x + 0.05, cpos.y + 0.05}, 0.06, kFiller);
      if (!after) {
        const double s = L.event > 0 ? static_cast<double>(k) / static_cast<double>(L.event) : 1.0;
        cv.disc(lerp(L.start, {cpos.x, cpos.y - 0.06}, s), obj_r, kObject);
      } else {
        // the object bursts where it lands and spills its contents
        cv.disc(L.target, 0.13, kSpill);
        cv.disc(L.target, obj_r, kObject);
      }
      break;
    }
  }
}

inline void add_thud(std::vector<double>& s, double sr, double onset, double freq, double tau, double amp) {
  const auto start = static_cast<std::size_t>(onset * sr);
  for (std::size_t n = start; n < s.size(); ++n) {
    const double t = static_cast<double>(n - start) / sr;
    if (t > 8 * tau) break;
    s[n] += amp * std::exp(-t / tau) * std::sin(2 * std::numbers::pi * freq * t);
  }
}

inline void add_burst(std::vector<double>& s, double sr, double onset, double tau, double amp, Rng& rng) {
  const auto start = static_cast<std::size_t>(onset * sr);
  for (std::size_t n = start; n < s.size(); ++n) {
    const double t = static_cast<double>(n - start) / sr;
    if (t > 6 * tau) break;
    s[n] += amp * std::exp(-t / tau) * rng.normal();
  }
}

inline audio::Waveform render_audio(AnomalyClass label, const GeneratorParams& p, Rng& rng) {
  audio::Waveform w;
  w.sample_rate = p.sample_rate;
  w.samples.resize(p.audio_samples());
  const double sr = p.sample_rate, len = p.audio_seconds;
  for (auto& v : w.samples) v = rng.normal(0.0, p.audio_noise);
  switch (label) {
    case AnomalyClass::EUA: {
      const int clatters = 2 + static_cast<int>(rng.below(2));
      for (int i = 0; i < clatters; ++i)
        add_burst(w.samples, sr, rng.uniform(0.3, 0.75) * len, 0.05, rng.uniform(0.28, 0.4), rng);
      break;
    }
    case AnomalyClass::OTA:
      add_thud(w.samples, sr, rng.uniform(0.2, 0.5) * len, rng.uniform(100.0, 120.0), 0.12, rng.uniform(0.4, 0.6));
      break;
    case AnomalyClass::SPC: {
      const int clicks = 25 + static_cast<int>(rng.below(10));
      for (int i = 0; i < clicks; ++i)
        add_burst(w.samples, sr, rng.uniform(0.1, 0.9) * len, 0.0015, rng.uniform(0.1, 0.2), rng);
      break;
    }
    case AnomalyClass::FCA:
      add_thud(w.samples, sr, rng.uniform(0.3, 0.6) * len, rng.uniform(390.0, 450.0), 0.04, rng.uniform(0.35, 0.55));
      break;
    default:
      break;
  }
  for (auto& v : w.samples) v = std::clamp(v, -1.0, 1.0);
  return w;
}

inline double smoothstep(double a, double b, double x) {
  const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

inline Tensor<double> render_proprio(AnomalyClass label, const GeneratorParams& p, Rng& rng) {
  const std::size_t N = p.proprio_len;
  Tensor<double> out(Shape{N, 2});
  const double jitter = rng.uniform(-0.03, 0.03);
  const double drop_at = rng.uniform(0.5, 0.65);
  const double spike_at = rng.uniform(0.45, 0.65);
  for (std::size_t i = 0; i < N; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(N - 1) - jitter;
    // Grasp, carry, release.
    double open = 1.0 - 0.75 * smoothstep(0.2, 0.3, u) + 0.75 * smoothstep(0.75, 0.85, u);
    double force = 0.5 * smoothstep(0.25, 0.35, u) - 0.5 * smoothstep(0.75, 0.85, u);
    switch (label) {
      case AnomalyClass::EUA:
        if (u > drop_at) force = std::min(force, 0.05);
        break;
      case AnomalyClass::OTA:
        open = 0.3;
        force = 0.3 * smoothstep(0.2, 0.3, u);
        if (u >= spike_at && u < spike_at + 0.06) force = 0.9;
        if (u >= spike_at + 0.06) force = 0.15;
        break;
      case AnomalyClass::SPC:
        open = 0.4;
        force = 0.3;
        break;
      case AnomalyClass::FCA:
        if (u >= 0.74 && u < 0.78) force = 0.85;
        break;
      default:
        break;
    }
    out.at(i, 0) = std::clamp(open + rng.normal(0.0, p.sensor_noise), 0.0, 1.0);
    out.at(i, 1) = std::clamp(force + rng.normal(0.0, p.sensor_noise), 0.0, 1.0);
  }
  return out;
}

}  // namespace gen

/// Deterministic class-conditioned multimodal episode. Each class leaves a
/// signature in a subset of the modalities; the visual event sits in
/// `signal_region`.
inline Episode generate_episode(AnomalyClass label, std::uint64_t seed, const GeneratorParams& p,
                                std::string id = "") {
  p.validate();
  using namespace gen;
  Rng rng(seed, "episode");
  Episode ep;
  ep.id = id.empty() ? std::string("ep_") + std::to_string(seed) : std::move(id);
  ep.label = label;
  ep.seed = seed;

  const std::size_t T = p.frames, S = p.image_size;
  Layout L;
  L.signal = rng.below(4);
  L.container = (L.signal + 1 + rng.below(3)) % 4;
  do {
    L.other = rng.below(4);
  } while (L.other == L.signal || L.other == L.container);
  if (T == 1) {
    L.event = 0;
  } else {
    const std::size_t mid = T / 2;
    const std::size_t lo = mid > 1 ? mid - 1 : 1;
    L.event = std::min(lo + rng.below(3), T - 1);
  }
  L.start = point_in_quadrant(L.other, rng);
  L.target = point_in_quadrant(L.signal, rng);
  if (label == AnomalyClass::DIS) L.start = L.target;
  for (auto& s : L.scatter) s = point_in_quadrant(L.signal, rng, 0.14);
  const auto cpos = quadrant_center(L.container);
  for (int g = 0; g < 9; ++g) {
    L.granules_in.push_back({cpos.x + rng.uniform(-0.08, 0.08), cpos.y + rng.uniform(-0.02, 0.1)});
    L.granules_out.push_back(point_in_quadrant(L.signal, rng, 0.16));
  }
  if (label == AnomalyClass::FCA) L.start = {cpos.x, std::max(0.05, cpos.y - 0.3)};
  const Background bg{rng.uniform(), rng.uniform(), 1.0 + 2.0 * rng.uniform()};

  ep.signal_region = L.signal;
  ep.event_frame = label == AnomalyClass::SAFE ? T - 1 : L.event;
  ep.frames = Tensor<float>(Shape{T, 3, S, S});
  const double period = p.duration_s / static_cast<double>(T);
  for (std::size_t k = 0; k < T; ++k) {
    Canvas cv(S);
    paint_background(cv, bg);
    render_frame(cv, label, L, k, T);
    add_pixel_noise(cv.pixels(), p.pixel_noise, rng);
    std::copy(cv.pixels().data().begin(), cv.pixels().data().end(), ep.frames.ptr() + k * 3 * S * S);
    ep.timestamps.push_back(period * static_cast<double>(k));
  }
  Rng audio_rng(seed, "audio");
  ep.audio = render_audio(label, p, audio_rng);
  Rng prop_rng(seed, "proprio");
  ep.proprio = render_proprio(label, p, prop_rng);
  for (std::size_t i = 0; i < p.proprio_len; ++i)
    ep.proprio_times.push_back(p.duration_s * static_cast<double>(i) / static_cast<double>(p.proprio_len - 1));
  return ep;
}

// ---------------------------------------------------------------------------
// Temporal sampling

/// Indices kept when sampling at `rate_hz`: the earliest frame of every
/// 1/rate window measured from the first timestamp.
inline std::vector<std::size_t> subsample_indices(const std::vector<double>& timestamps, double rate_hz) {
  if (timestamps.empty()) throw InputError("temporal_subsample: no frames");
  if (!(rate_hz > 0.0)) throw ParameterError("sampling rate must be > 0");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1])) throw InputError("timestamps are not strictly ascending");
  std::vector<std::size_t> keep{0};
  long long last = 0;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    const auto window = static_cast<long long>(std::floor((timestamps[i] - timestamps[0]) * rate_hz + 1e-9));
    if (window > last) {
      keep.push_back(i);
      last = window;
    }
  }
  return keep;
}

template <class Frame>
std::pair<std::vector<Frame>, std::vector<double>> temporal_subsample(const std::vector<Frame>& frames,
                                                                      const std::vector<double>& timestamps,
                                                                      double rate_hz) {
  if (frames.size() != timestamps.size()) throw InputError("frame and timestamp counts differ");
  std::pair<std::vector<Frame>, std::vector<double>> out;
  for (std::size_t i : subsample_indices(timestamps, rate_hz)) {
    out.first.push_back(frames[i]);
    out.second.push_back(timestamps[i]);
  }
  return out;
}

/// Applies temporal_subsample to an episode's frame tensor in place.
inline void subsample_episode(Episode& ep, double rate_hz) {
  const auto keep = subsample_indices(ep.timestamps, rate_hz);
  if (keep.size() == ep.timestamps.size()) return;
  const std::size_t S = ep.image_size(), n = 3 * S * S;
  Tensor<float> frames(Shape{keep.size(), 3, S, S});
  std::vector<double> ts;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(ep.frames.ptr() + keep[k] * n, n, frames.ptr() + k * n);
    ts.push_back(ep.timestamps[keep[k]]);
  }
  std::size_t event = 0;
  for (std::size_t k = 0; k < keep.size(); ++k)
    if (keep[k] <= ep.event_frame) event = k;
  ep.frames = std::move(frames);
  ep.timestamps = std::move(ts);
  ep.event_frame = event;
}

// ---------------------------------------------------------------------------
// Persistence

namespace io {

inline std::vector<std::uint8_t> encode_ppm(const Tensor<float>& img) {
  require_rank(img, 3, "PPM image");
  if (img.dim(0) != 3) throw DimensionError("PPM image must have 3 channels");
  const std::size_t H = img.dim(1), W = img.dim(2);
  const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(c, i, j)), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
  return out;
}

inline Tensor<float> decode_ppm(const std::vector<std::uint8_t>& b, const std::string& name) {
  std::size_t off = 0;
  auto fail = [&](const std::string& msg) { return FormatError(name + " @ byte " + std::to_string(off) + ": " + msg); };
  auto skip_ws = [&]() {
    while (off < b.size()) {
      if (b[off] == '#') {
        while (off < b.size() && b[off] != '\n') ++off;
      } else if (std::isspace(b[off])) {
        ++off;
      } else {
        break;
      }
    }
  };
  auto number = [&]() {
    skip_ws();
    if (off >= b.size()) throw fail("truncated header");
    if (!std::isdigit(b[off])) throw fail("expected a number");
    std::size_t v = 0;
    while (off < b.size() && std::isdigit(b[off])) v = v * 10 + (b[off++] - '0');
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw fail("not a binary P6 PPM");
  off = 2;
  const std::size_t W = number(), H = number(), maxval = number();
  if (W == 0 || H == 0) throw fail("zero image extent");
  if (maxval != 255) throw fail("only maxval 255 is supported");
  if (off >= b.size() || !std::isspace(b[off])) throw fail("missing separator after header");
  ++off;
  const std::size_t need = 3 * W * H;
  if (b.size() - off < need) {
    off = b.size();
    throw fail("truncated pixel data (" + std::to_string(need) + " bytes expected)");
  }
  Tensor<float> img(Shape{3, H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, i, j) = static_cast<float>(b[off++]) / 255.0f;
  return img;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + p.string());
}

inline std::string frame_file(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.ppm", k);
  return buf;
}

}  // namespace io

/// Writes frames (8-bit PPM), audio (PCM16 WAV), proprio and frame
/// timestamps (6-decimal CSV) into `dir`.
inline void save_episode(const Episode& ep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t k = 0; k < ep.num_frames(); ++k) io::write_bytes(dir / io::frame_file(k), io::encode_ppm(ep.frame(k)));
  audio::write_wav(ep.audio, dir / "audio.wav");
  std::string csv = "t,openness,force\n";
  for (std::size_t i = 0; i < ep.proprio.dim(0); ++i)
    csv += text::fixed6(ep.proprio_times[i]) + "," + text::fixed6(ep.proprio.at(i, 0)) + "," +
           text::fixed6(ep.proprio.at(i, 1)) + "\n";
  text::write_file(dir / "proprio.csv", csv);
  std::string ts = "frame,t\n";
  for (std::size_t k = 0; k < ep.timestamps.size(); ++k)
    ts += std::to_string(k) + "," + text::fixed6(ep.timestamps[k]) + "\n";
  text::write_file(dir / "timestamps.csv", ts);
}

namespace io {
inline std::vector<std::vector<double>> read_csv_numbers(const std::filesystem::path& p, std::size_t cols) {
  const std::string content = text::read_file(p);
  std::vector<std::vector<double>> rows;
  std::size_t off = 0, line_no = 0;
  while (off < content.size()) {
    auto end = content.find('\n', off);
    if (end == std::string::npos) end = content.size();
    const std::string line = content.substr(off, end - off);
    if (line_no > 0 && !text::trim(line).empty()) {
      auto parts = text::split(line, ',');
      if (parts.size() != cols)
        throw FormatError(p.string() + " @ byte " + std::to_string(off) + ": expected " + std::to_string(cols) +
                          " columns");
      std::vector<double> row;
      for (auto& s : parts) {
        try {
          row.push_back(text::parse_double(s, p.string()));
        } catch (const ConfigError&) {
          throw FormatError(p.string() + " @ byte " + std::to_string(off) + ": bad number '" + s + "'");
        }
      }
      rows.push_back(std::move(row));
    }
    off = end + 1;
    ++line_no;
  }
  return rows;
}
}  // namespace io

/// Loads what save_episode wrote. Metadata (label, seed, region, event frame)
/// comes from the dataset manifest and is left at defaults here.
inline Episode load_episode(const std::filesystem::path& dir) {
  Episode ep;
  if (!std::filesystem::is_directory(dir)) throw IoError("episode directory not found: " + dir.string());
  const auto ts_rows = io::read_csv_numbers(dir / "timestamps.csv", 2);
  if (ts_rows.empty()) throw FormatError((dir / "timestamps.csv").string() + ": no frames listed");
  std::vector<Tensor<float>> frames;
  for (std::size_t k = 0; k < ts_rows.size(); ++k) {
    const auto path = dir / io::frame_file(k);
    frames.push_back(io::decode_ppm(io::read_bytes(path), path.string()));
    if (frames.back().shape() != frames.front().shape()) throw FormatError(path.string() + ": frame size differs");
    ep.timestamps.push_back(ts_rows[k][1]);
  }
  const std::size_t S = frames.front().dim(1);
  if (frames.front().dim(2) != S) throw FormatError("frames must be square");
  ep.frames = Tensor<float>(Shape{frames.size(), 3, S, S});
  for (std::size_t k = 0; k < frames.size(); ++k)
    std::copy(frames[k].data().begin(), frames[k].data().end(), ep.frames.ptr() + k * 3 * S * S);
  ep.audio = audio::read_wav(dir / "audio.wav");
  const auto prop = io::read_csv_numbers(dir / "proprio.csv", 3);
  if (prop.empty()) throw FormatError((dir / "proprio.csv").string() + ": empty trace");
  ep.proprio = Tensor<double>(Shape{prop.size(), 2});
  for (std::size_t i = 0; i < prop.size(); ++i) {
    ep.proprio_times.push_back(prop[i][0]);
    ep.proprio.at(i, 0) = prop[i][1];
    ep.proprio.at(i, 1) = prop[i][2];
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Dataset

struct ManifestRow {
  std::string id;
  AnomalyClass label;
  std::string path;
  std::uint64_t seed;
  std::size_t signal_region;
  std::size_t event_frame;
};

struct DatasetManifest {
  std::array<std::size_t, kNumClasses> counts{};
  std::uint64_t dataset_seed = 0;
  GeneratorParams params;
  std::vector<ManifestRow> rows;

  std::size_t total() const { return rows.size(); }
};

inline std::uint64_t episode_seed(std::uint64_t dataset_seed, std::size_t cls, std::size_t index) {
  return mix_seed(mix_seed(dataset_seed, cls + 1), index + 1);
}

inline std::string counts_str(const std::array<std::size_t, kNumClasses>& c) {
  std::string s;
  for (std::size_t i = 0; i < kNumClasses; ++i) s += (i ? "," : "") + std::to_string(c[i]);
  return s;
}

inline std::string manifest_text(const DatasetManifest& m) {
  const auto& p = m.params;
  std::string s = "# clue-ai synthetic dataset\n";
  s += "# dataset_seed=" + std::to_string(m.dataset_seed) + "\n";
  s += "# counts=" + counts_str(m.counts) + "\n";
  s += "# frames=" + std::to_string(p.frames) + "\n";
  s += "# image_size=" + std::to_string(p.image_size) + "\n";
  s += "# duration_s=" + text::format_double(p.duration_s) + "\n";
  s += "# audio_seconds=" + text::format_double(p.audio_seconds) + "\n";
  s += "# sample_rate=" + text::format_double(p.sample_rate) + "\n";
  s += "# proprio_len=" + std::to_string(p.proprio_len) + "\n";
  s += "# pixel_noise=" + text::format_double(p.pixel_noise) + "\n";
  s += "# sensor_noise=" + text::format_double(p.sensor_noise) + "\n";
  s += "# audio_noise=" + text::format_double(p.audio_noise) + "\n";
  s += "id\tlabel\tpath\tseed\tsignal_region\tevent_frame\n";
  for (const auto& r : m.rows)
    s += r.id + "\t" + class_name(r.label) + "\t" + r.path + "\t" + std::to_string(r.seed) + "\t" +
         kQuadrantNames[r.signal_region] + "\t" + std::to_string(r.event_frame) + "\n";
  return s;
}

/// Generates every episode, writes it under `out_dir/<id>/`, and writes
/// `manifest.tsv`. Episode ids are e0, e1, ... in class order.
inline DatasetManifest generate_dataset(const std::array<std::size_t, kNumClasses>& counts, std::uint64_t dataset_seed,
                                        const GeneratorParams& params, const std::filesystem::path& out_dir) {
  params.validate();
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (counts[c] < 1) throw ConfigError(std::string("class ") + kClassNames[c] + " needs at least one episode");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  DatasetManifest m{counts, dataset_seed, params, {}};
  std::size_t next = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      const std::string id = "e" + std::to_string(next++);
      const auto seed = episode_seed(dataset_seed, c, i);
      const auto ep = generate_episode(static_cast<AnomalyClass>(c), seed, params, id);
      save_episode(ep, out_dir / id);
      m.rows.push_back({id, ep.label, id, seed, ep.signal_region, ep.event_frame});
    }
  text::write_file(out_dir / "manifest.tsv", manifest_text(m));
  return m;
}

inline DatasetManifest read_dataset_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  if (!std::filesystem::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  const std::string content = text::read_file(path);
  DatasetManifest m;
  std::map<std::string, std::string> meta;
  bool header_seen = false;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++line_no;
    const std::string line = text::trim(raw);
    if (line.empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) meta[text::trim(line.substr(1, eq - 1))] = text::trim(line.substr(eq + 1));
      continue;
    }
    const auto cols = text::split(raw, '\t');
    if (!header_seen) {
      header_seen = true;
      if (cols.size() < 6 || cols[0] != "id") throw FormatError(where() + "missing column header");
      continue;
    }
    if (cols.size() != 6) throw FormatError(where() + "expected 6 tab-separated columns");
    try {
      m.rows.push_back({cols[0], parse_class(cols[1]), cols[2],
                        static_cast<std::uint64_t>(std::stoull(cols[3])), parse_quadrant(text::trim(cols[4])),
                        static_cast<std::size_t>(std::stoul(cols[5]))});
    } catch (const Error& e) {
      throw FormatError(where() + e.what());
    } catch (const std::exception&) {
      throw FormatError(where() + "malformed row");
    }
  }
  auto num = [&](const char* k, double dflt) { return meta.count(k) ? text::parse_double(meta[k], k) : dflt; };
  GeneratorParams& p = m.params;
  m.dataset_seed = static_cast<std::uint64_t>(num("dataset_seed", 0));
  p.frames = static_cast<std::size_t>(num("frames", static_cast<double>(p.frames)));
  p.image_size = static_cast<std::size_t>(num("image_size", static_cast<double>(p.image_size)));
  p.duration_s = num("duration_s", p.duration_s);
  p.audio_seconds = num("audio_seconds", p.audio_seconds);
  p.sample_rate = num("sample_rate", p.sample_rate);
  p.proprio_len = static_cast<std::size_t>(num("proprio_len", static_cast<double>(p.proprio_len)));
  p.pixel_noise = num("pixel_noise", p.pixel_noise);
  p.sensor_noise = num("sensor_noise", p.sensor_noise);
  p.audio_noise = num("audio_noise", p.audio_noise);
  for (const auto& r : m.rows) ++m.counts[class_index(r.label)];
  return m;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<Episode> episodes;  // manifest order

  const Episode& by_id(const std::string& id) const {
    for (const auto& e : episodes)
      if (e.id == id) return e;
    throw InputError("no episode with id '" + id + "'");
  }
};

/// Loads every episode listed in the manifest and samples its frames at
/// `frame_rate_hz`.
inline Dataset load_dataset(const std::filesystem::path& dir, double frame_rate_hz = 0.125) {
  Dataset d{read_dataset_manifest(dir), {}};
  for (const auto& r : d.manifest.rows) {
    const auto epdir = dir / r.path;
    if (!std::filesystem::is_directory(epdir))
      throw IoError("manifest references missing episode " + r.id + " (" + epdir.string() + ")");
    Episode ep = load_episode(epdir);
    ep.id = r.id;
    ep.label = r.label;
    ep.seed = r.seed;
    ep.signal_region = r.signal_region;
    ep.event_frame = std::min(r.event_frame, ep.num_frames() - 1);
    subsample_episode(ep, frame_rate_hz);
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Splits and class weights

struct Split {
  std::vector<std::string> train, test;
};

/// Per-class seeded shuffle; each class contributes max(1, round((1-train_frac) N_c))
/// episodes to the test set.
inline Split stratified_split(const DatasetManifest& m, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ParameterError("train fraction must lie in (0,1)");
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& r : m.rows) by_class[class_index(r.label)].push_back(r.id);
  Split s;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& ids = by_class[c];
    if (ids.empty()) continue;
    if (ids.size() < 2)
      throw DataError(std::string("class ") + kClassNames[c] + " has fewer than 2 episodes; cannot split");
    Rng rng(seed, std::string("split:") + kClassNames[c]);
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
    const auto n_test = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround((1.0 - train_frac) * static_cast<double>(ids.size()))));
    for (std::size_t i = 0; i < ids.size(); ++i) (i < n_test ? s.test : s.train).push_back(ids[i]);
  }
  return s;
}

/// Inverse-frequency weights w_c = N / (K N_c), rescaled so their mean is 1.
inline std::vector<double> class_weights(const std::array<std::size_t, kNumClasses>& counts) {
  double total = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) throw DataError(std::string("class ") + kClassNames[c] + " has no episodes");
    total += static_cast<double>(counts[c]);
  }
  std::vector<double> w(kNumClasses);
  double mean = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    w[c] = total / (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
    mean += w[c] / static_cast<double>(kNumClasses);
  }
  for (auto& v : w) v /= mean;
  return w;
}

inline std::vector<double> class_weights(const DatasetManifest& m) { return class_weights(m.counts); }

}  // namespace clue
