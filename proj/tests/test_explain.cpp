#include <gtest/gtest.h>

#include "clue/explain.hpp"
#include "support.hpp"

using namespace clue;
using clue::testing::random_inputs;
using clue::testing::tiny_geometry;
using clue::testing::tiny_model_config;

namespace {

struct CamFixture {
  ClueModel<double> model;
  EpisodeInputs<double> in;

  explicit CamFixture(std::uint64_t seed)
      : model(tiny_model_config(), tiny_geometry(), seed), in([&] {
          Rng rng(seed, "inputs");
          return random_inputs(tiny_geometry(), 3, rng);
        }()) {}
};

// Target logit as a function of the chosen frame's activation at `layer`.
double logit_from_activation(const ClueModel<double>& m, const EpisodeInputs<double>& in, const Tensor<double>& act,
                             std::size_t frame, const std::string& layer, std::size_t target) {
  NoGradGuard guard;
  const auto& bb = m.backbone();
  std::vector<Var<double>> feats;
  for (std::size_t t = 0; t < in.frames.size(); ++t)
    feats.push_back(t == frame ? bb.forward_from(constant(act), layer)
                               : constant(bb.extract_features(in.frames[t], t).f_v));
  Rng unused(0);
  StreamFeatures<double> sf;
  sf.r_v = m.visual_from_features(feats, Mode::eval, unused);
  sf.r_a = m.auditory_stream(constant(in.mfcc));
  sf.r_p = m.proprio_stream(constant(in.proprio), Mode::eval, unused);
  return m.fuse(sf, Mode::eval, unused).value()[target];
}

}  // namespace

TEST(GradCam, ValuesInUnitRange) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    CamFixture f(s);
    for (std::size_t cls : {0u, 3u, 6u}) {
      const auto m = grad_cam(f.model, f.in, cls, 1);
      EXPECT_EQ(m.values.shape(), (Shape{2, 2}));
      EXPECT_EQ(m.upsampled.shape(), (Shape{32, 32}));
      for (double v : m.values.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      if (!m.zero_map) {
        const auto [lo, hi] = std::minmax_element(m.values.data().begin(), m.values.data().end());
        EXPECT_EQ(*lo, 0.0);
        EXPECT_EQ(*hi, 1.0);
      }
    }
  }
}

TEST(GradCam, ZeroedVisualPathGivesFlaggedZeroMap) {
  CamFixture f(2);
  auto& w = f.model.params().get("visual.lstm0.weight").mutable_value();
  w.fill(0.0);
  const auto m = grad_cam(f.model, f.in, 0, 0);
  EXPECT_TRUE(m.zero_map);
  for (double v : m.values.data()) EXPECT_EQ(v, 0.0);
  for (double a : m.alpha) EXPECT_EQ(a, 0.0);
}

TEST(GradCam, AlphaMatchesFiniteDifferences) {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    CamFixture f(s);
    const std::size_t frame = 1, target = 2;
    for (const std::string& layer : {std::string(), std::string("conv10")}) {
      const auto m = grad_cam(f.model, f.in, target, frame, layer);
      const std::string L = layer.empty() ? f.model.backbone().last_conv_layer() : layer;
      Tensor<double> act;
      {
        NoGradGuard guard;
        act = f.model.backbone().forward_until(constant(f.in.frames[frame]), L).value();
      }
      const std::size_t K = act.dim(0), hw = act.dim(1) * act.dim(2);
      const double h = 1e-7;
      double worst = 0;
      for (std::size_t k = 0; k < K; ++k) {
        // Shifting every position of channel k by h moves the logit by h * hw * alpha_k.
        auto up = act, dn = act;
        for (std::size_t i = 0; i < hw; ++i) {
          up[k * hw + i] += h;
          dn[k * hw + i] -= h;
        }
        const double fd = (logit_from_activation(f.model, f.in, up, frame, L, target) -
                           logit_from_activation(f.model, f.in, dn, frame, L, target)) /
                          (2 * h * double(hw));
        worst = std::max(worst, std::abs(fd - m.alpha[k]) / std::max(1e-6, std::abs(fd) + std::abs(m.alpha[k])));
      }
      EXPECT_LT(worst, 1e-3) << "seed " << s << " layer " << L;
    }
  }
}

TEST(GradCam, InputValidation) {
  CamFixture f(1);
  EXPECT_THROW(grad_cam(f.model, f.in, 7, 0), InputError);
  EXPECT_THROW(grad_cam(f.model, f.in, 0, 3), InputError);
  auto cfg = tiny_model_config();
  cfg.use_visual = false;
  ClueModel<double> blind(cfg, tiny_geometry(), 1);
  EXPECT_THROW(grad_cam(blind, f.in, 0, 0), ConfigError);
}

TEST(Upsample, Footprint) {
  Tensor<double> m(Shape{2, 2}, 0.0);
  m.at(0, 0) = 1.0;
  const auto u = upsample_bilinear(m, 32);
  EXPECT_DOUBLE_EQ(u.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(u.at(31, 31), 0.0);
  EXPECT_GT(quadrant_mass(u, 0), 0.5);
  EXPECT_NEAR(quadrant_mass(u, 1), quadrant_mass(u, 2), 1e-12);
  const auto c = upsample_bilinear(Tensor<double>(Shape{7, 7}, 0.25), 32);
  for (double v : c.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(QuadrantMass, Examples) {
  Tensor<double> m(Shape{4, 4}, 0.0);
  m.at(3, 3) = 2.0;
  EXPECT_EQ(quadrant_mass(m, 3), 1.0);
  EXPECT_EQ(quadrant_mass(m, 0), 0.0);
  EXPECT_EQ(quadrant_mass(Tensor<double>(Shape{4, 4}, 0.0), 0), 0.0);
  const Tensor<double> flat(Shape{4, 4}, 1.0);
  for (std::size_t q = 0; q < 4; ++q) EXPECT_DOUBLE_EQ(quadrant_mass(flat, q), 0.25);
}

TEST(Overlay, EndpointsAndDeterminism) {
  const Tensor<float> black(Shape{3, 4, 4}, 0.0f);
  const auto cold = overlay(Tensor<double>(Shape{4, 4}, 0.0), black);
  const auto hot = overlay(Tensor<double>(Shape{4, 4}, 1.0), black);
  EXPECT_EQ(cold[0], 0.0f);
  EXPECT_EQ(cold[32], 0.5f);
  EXPECT_EQ(hot[0], 0.5f);
  EXPECT_EQ(hot[32], 0.0f);
  const Tensor<float> white(Shape{3, 4, 4}, 1.0f);
  const auto w = overlay(Tensor<double>(Shape{4, 4}, 1.0), white);
  EXPECT_EQ(w[0], 1.0f);
  EXPECT_EQ(w[16], 0.5f);
  EXPECT_EQ(io::encode_ppm(hot), io::encode_ppm(overlay(Tensor<double>(Shape{4, 4}, 1.0), black)));
  EXPECT_THROW(overlay(Tensor<double>(Shape{3, 3}, 1.0), black), DimensionError);
  EXPECT_EQ(map_tsv(Tensor<double>(Shape{1, 2}, 0.5)), "0.500000\t0.500000\n");
}
