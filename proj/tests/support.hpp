#pragma once

#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "clue/audio.hpp"
#include "clue/experiments.hpp"
#include "clue/gradcheck.hpp"
#include "clue/streams.hpp"

namespace clue::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("clue_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Runs the CLI through the shell; returns its exit status.
inline int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(CLUE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// ---------------------------------------------------------------------------
// Brute-force MFCC written straight from the textbook formulas: direct DFT,
// triangular mel filters, log with floor, direct orthonormal DCT-II.

inline std::vector<std::vector<double>> oracle_mfcc(const std::vector<double>& x, const audio::MfccParams& p) {
  const std::size_t L = p.frame_len, hop = p.hop;
  const std::size_t nf = 1 + (x.size() - L) / hop;
  const std::size_t bins = L / 2 + 1;
  const double pi = std::numbers::pi;
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<std::size_t> edges;
  for (std::size_t i = 0; i < p.n_mels + 2; ++i) {
    const double m = mel(p.f_min) + (mel(p.f_max) - mel(p.f_min)) * double(i) / double(p.n_mels + 1);
    edges.push_back(std::min<std::size_t>(std::size_t(std::floor(double(L + 1) * imel(m) / p.sample_rate)), bins - 1));
  }
  auto weight = [&](std::size_t m, std::size_t k) {
    const double l = double(edges[m]), c = double(edges[m + 1]), r = double(edges[m + 2]), kk = double(k);
    if (kk == c) return 1.0;
    if (kk >= l && kk < c) return (kk - l) / (c - l);
    if (kk > c && kk <= r) return (r - kk) / (r - c);
    return 0.0;
  };
  std::vector<std::vector<double>> out(nf, std::vector<double>(p.n_mfcc));
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<double> frame(L);
    for (std::size_t n = 0; n < L; ++n)
      frame[n] = x[f * hop + n] * 0.5 * (1.0 - std::cos(2.0 * pi * double(n) / double(L - 1)));
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      std::complex<double> s = 0;
      for (std::size_t n = 0; n < L; ++n) s += frame[n] * std::polar(1.0, -2.0 * pi * double(k * n % L) / double(L));
      power[k] = std::norm(s);
    }
    std::vector<double> logs(p.n_mels);
    for (std::size_t m = 0; m < p.n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < bins; ++k) e += weight(m, k) * power[k];
      logs[m] = std::log(e + 1e-10);
    }
    const double N = double(p.n_mels);
    for (std::size_t k = 0; k < p.n_mfcc; ++k) {
      double s = 0;
      for (std::size_t m = 0; m < p.n_mels; ++m) s += logs[m] * std::cos(pi * double(k) * (2.0 * double(m) + 1.0) / (2.0 * N));
      out[f][k] = s * (k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N));
    }
  }
  return out;
}

/// max |a - b| / max |b| over the whole matrix.
inline double mfcc_oracle_error(const audio::MfccMatrix& got, const std::vector<std::vector<double>>& want) {
  double num = 0, den = 0;
  for (std::size_t f = 0; f < want.size(); ++f)
    for (std::size_t k = 0; k < want[f].size(); ++k) {
      num = std::max(num, std::abs(got.coeffs.at(f, k) - want[f][k]));
      den = std::max(den, std::abs(want[f][k]));
    }
  return num / den;
}

// ---------------------------------------------------------------------------
// Gradient suite shared by the unit tests and the acceptance binary.

struct GradCase {
  std::string name;
  double tolerance;
  GradCheckReport report;
};

inline GradCheckReport check(ParameterSet<double>& ps, const std::function<Var<double>()>& loss, double tol,
                             std::uint64_t seed, std::size_t max_entries = 0) {
  GradCheckOptions o;
  o.tolerance = tol;
  o.seed = seed;
  o.max_entries = max_entries;
  return gradient_check(ps, loss, o);
}

/// A fixed random readout keeps losses sensitive to every output entry.
inline Var<double> readout(const Var<double>& y, std::uint64_t seed) {
  Rng r(seed, "readout");
  return dot(flatten(y), random_tensor(Shape{y.size()}, r));
}

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.backbone.width_multiplier = 0.125;
  c.backbone.input_size = 32;
  c.lstm_hidden = 6;
  c.audio_channels = {2, 2, 3, 3};
  c.audio_dim = 5;
  c.proprio_channels = 3;
  c.proprio_dim = 4;
  c.fusion_hidden = 7;
  return c;
}

inline InputGeometry tiny_geometry() {
  InputGeometry g;
  g.frame_size = 32;
  g.mfcc_frames = 20;
  g.n_mfcc = 13;
  g.proprio_len = 12;
  return g;
}

inline EpisodeInputs<double> random_inputs(const InputGeometry& g, std::size_t T, Rng& rng) {
  EpisodeInputs<double> in;
  for (std::size_t t = 0; t < T; ++t) in.frames.push_back(random_tensor(Shape{3, g.frame_size, g.frame_size}, rng, 0, 1));
  in.mfcc = random_tensor(Shape{g.mfcc_frames, g.n_mfcc}, rng);
  in.proprio = random_tensor(Shape{g.proprio_len, 2}, rng, 0, 1);
  return in;
}

inline EpisodeInputs<float> to_float(const EpisodeInputs<double>& in) {
  EpisodeInputs<float> out;
  for (const auto& f : in.frames) out.frames.push_back(f.cast<float>());
  for (const auto& f : in.features) out.features.push_back(f.cast<float>());
  if (!in.mfcc.empty()) out.mfcc = in.mfcc.cast<float>();
  if (!in.proprio.empty()) out.proprio = in.proprio.cast<float>();
  return out;
}

/// Every layer on its own at per-layer tolerance, for one seed.
inline std::vector<GradCase> layer_gradient_cases(std::uint64_t seed, double tol = 1e-4) {
  std::vector<GradCase> out;
  Rng rng(seed, "grad-layers");
  auto run = [&](const std::string& name, ParameterSet<double>& ps, const std::function<Var<double>()>& f) {
    out.push_back({name, tol, check(ps, f, tol, seed)});
  };
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{5}, rng));
    auto W = ps.add("W", random_tensor(Shape{4, 5}, rng));
    auto b = ps.add("b", random_tensor(Shape{4}, rng));
    run("dense", ps, [&] { return readout(dense(x, W, b), seed); });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{2, 6, 5}, rng));
    auto W = ps.add("W", random_tensor(Shape{3, 2, 3, 2}, rng));
    auto b = ps.add("b", random_tensor(Shape{3}, rng));
    run("conv2d", ps, [&] { return readout(conv2d(x, W, b, Pair{2, 1}, Pair{1, 1}), seed); });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{2, 6, 5}, rng));
    auto W1 = ps.add("W1", random_tensor(Shape{3, 2, 3, 3}, rng));
    auto b1 = ps.add("b1", random_tensor(Shape{3}, rng));
    auto W2 = ps.add("W2", random_tensor(Shape{2, 3, 3, 3}, rng));
    auto b2 = ps.add("b2", random_tensor(Shape{2}, rng));
    run("conv2d+relu stack", ps, [&] {
      return readout(relu(conv2d(relu(conv2d(x, W1, b1, Pair{1, 1}, Pair{1, 1})), W2, b2, Pair{1, 1}, Pair{1, 1})), seed);
    });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{2, 6, 6}, rng));
    run("maxpool2d", ps, [&] { return readout(maxpool2d(x, Pair{2, 2}, Pair{2, 2}), seed); });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{3, 4, 5}, rng));
    run("global_avg_pool", ps, [&] { return readout(global_avg_pool(x), seed); });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{9}, rng));
    run("relu", ps, [&] { return readout(relu(x), seed); });
    run("sigmoid", ps, [&] { return readout(sigmoid(x), seed); });
    run("tanh", ps, [&] { return readout(tanh(x), seed); });
    run("softmax", ps, [&] { return readout(softmax(x), seed); });
    run("dropout(train, fixed seed)", ps, [&] { return readout(dropout(x, 0.4, Mode::train, seed), seed); });
  }
  {
    ParameterSet<double> ps;
    auto x = ps.add("x", random_tensor(Shape{4}, rng));
    const std::vector<double> w{0.5, 2.0, 1.0, 3.0};
    run("weighted cross-entropy", ps, [&] {
      return softmax_cross_entropy(x, seed % 4, std::span<const double>(w));
    });
  }
  {
    ParameterSet<double> ps;
    const std::size_t D = 3, H = 4;
    LstmParams<double> p{ps.add("W", random_tensor(Shape{4 * H, D + H}, rng, -0.5, 0.5)),
                         ps.add("b", random_tensor(Shape{4 * H}, rng, -0.5, 0.5)), H};
    std::vector<Var<double>> xs;
    for (int t = 0; t < 3; ++t) xs.push_back(ps.add("x" + std::to_string(t), random_tensor(Shape{D}, rng)));
    run("lstm_cell (3 steps, sum h_T)", ps, [&] {
      Var<double> h = constant(Tensor<double>(Shape{H})), c = constant(Tensor<double>(Shape{H}));
      for (auto& x : xs) std::tie(h, c) = lstm_cell(x, h, c, p);
      return sum(h);
    });
  }
  {
    ParameterSet<double> ps;
    const std::size_t D = 3, H = 4;
    auto W = ps.add("W", random_tensor(Shape{H, D + H}, rng, -0.5, 0.5));
    auto b = ps.add("b", random_tensor(Shape{H}, rng, -0.5, 0.5));
    auto x0 = ps.add("x0", random_tensor(Shape{D}, rng));
    auto x1 = ps.add("x1", random_tensor(Shape{D}, rng));
    run("rnn_cell (2 steps)", ps, [&] {
      Var<double> h = constant(Tensor<double>(Shape{H}));
      h = rnn_cell(x0, h, W, b);
      h = rnn_cell(x1, h, W, b);
      return readout(h, seed);
    });
  }
  {
    ParameterSet<double> ps;
    const std::size_t T = 4, H = 3;
    auto seq = ps.add("seq", random_tensor(Shape{T, H}, rng));
    AttentionParams<double> a{ps.add("q", random_tensor(Shape{H, H}, rng)), ps.add("k", random_tensor(Shape{H, H}, rng)),
                              ps.add("v", random_tensor(Shape{H, H}, rng))};
    run("self_attention", ps, [&] { return readout(self_attention(seq, a).output, seed); });
  }
  {
    ParameterSet<double> ps;
    auto a = ps.add("a", random_tensor(Shape{3, 4}, rng));
    auto b = ps.add("b", random_tensor(Shape{4, 2}, rng));
    auto c = ps.add("c", random_tensor(Shape{5, 4}, rng));
    auto r = ps.add("r", random_tensor(Shape{4}, rng));
    run("matmul", ps, [&] { return readout(matmul(a, b), seed); });
    run("matmul_nt", ps, [&] { return readout(matmul_nt(a, c), seed); });
    run("add_row_bias+mean_rows", ps, [&] { return readout(mean_rows(add_row_bias(a, r)), seed); });
    run("concat+slice+mul+scale", ps, [&] {
      auto z = concat<double>({r, slice(flatten(a), 2, 5)});
      return readout(scale(mul(z, z), 0.7), seed);
    });
  }
  return out;
}

/// Each stream and the full model on a tiny desk-shaped configuration with a
/// trainable backbone, at end-to-end tolerance.
inline std::vector<GradCase> stream_gradient_cases(std::uint64_t seed, double tol = 1e-3) {
  std::vector<GradCase> out;
  Rng rng(seed, "grad-streams");
  const auto geom = tiny_geometry();
  const auto in = random_inputs(geom, 3, rng);
  const std::size_t label = seed % 7;
  const std::vector<double> weights{1.0, 2.0, 0.5, 1.5, 1.0, 0.8, 1.2};

  auto model_case = [&](const std::string& name, ModelConfig cfg, const std::function<Var<double>(ClueModel<double>&)>& f) {
    cfg.backbone_trainable = true;
    ClueModel<double> m(cfg, geom, seed);
    // non-trivial normalisation statistics so the frozen layer is exercised
    if (cfg.use_visual) m.calibrate_feature_norm(m.backbone_features(in.frames));
    out.push_back({name, tol, check(m.params(), [&] { return f(m); }, tol, seed, 4)});
  };
  auto cfg = tiny_model_config();
  auto visual_only = cfg;
  visual_only.use_audio = visual_only.use_proprio = false;
  model_case("visual stream (backbone+LSTM+attention)", visual_only, [&](ClueModel<double>& m) {
    Rng d(seed, "drop");
    return readout(m.visual_stream(in, Mode::train, d), seed);
  });
  auto rnn = visual_only;
  rnn.recurrent = RecurrentKind::rnn;
  rnn.attention = false;
  model_case("visual stream (RNN, no attention)", rnn, [&](ClueModel<double>& m) {
    Rng d(seed, "drop");
    return readout(m.visual_stream(in, Mode::train, d), seed);
  });
  auto audio_only = cfg;
  audio_only.use_visual = audio_only.use_proprio = false;
  model_case("auditory stream", audio_only,
             [&](ClueModel<double>& m) { return readout(m.auditory_stream(constant(in.mfcc)), seed); });
  auto rect = audio_only;
  rect.audio_layers = {{{4, 3}, {1, 1}, {0, 0}}, {{4, 3}, {1, 1}, {0, 0}}, {}, {}};
  model_case("auditory stream (rectangular kernels)", rect,
             [&](ClueModel<double>& m) { return readout(m.auditory_stream(constant(in.mfcc)), seed); });
  auto prop = cfg;
  prop.use_visual = prop.use_audio = false;
  model_case("proprioceptive stream", prop, [&](ClueModel<double>& m) {
    Rng d(seed, "drop");
    return readout(m.proprio_stream(constant(in.proprio), Mode::train, d), seed);
  });
  model_case("full model + weighted loss", cfg, [&](ClueModel<double>& m) {
    Rng d(seed, "drop");
    auto fr = m.forward(in, Mode::train, d);
    return softmax_cross_entropy(fr.logits, label, std::span<const double>(weights));
  });
  return out;
}

}  // namespace clue::testing
