#include <gtest/gtest.h>

#include "clue/config.hpp"
#include "support.hpp"

using namespace clue;

TEST(Config, ParseKeyValueText) {
  const auto kv = parse_kv_text("# comment\n\n epochs = 5 \nlearning_rate=0.01 # trailing\nmodality=v,a\n", "t");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"epochs", "5"}));
  EXPECT_EQ(kv[2].second, "v,a");
  EXPECT_THROW(parse_kv_text("epochs 5\n", "t"), ConfigError);
  RunConfig c;
  apply_pairs(c, kv, "t");
  EXPECT_EQ(c.train.epochs, 5);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_TRUE(c.model.use_visual);
  EXPECT_TRUE(c.model.use_audio);
  EXPECT_FALSE(c.model.use_proprio);
}

TEST(Config, UnknownKeyNamesKeyAndSetsNothing) {
  RunConfig c;
  try {
    apply_pairs(c, {{"epochs", "3"}, {"epoks", "4"}}, "file.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epoks"), std::string::npos);
  }
  EXPECT_EQ(c.train.epochs, 40);
}

TEST(Config, BadValues) {
  RunConfig c;
  EXPECT_THROW(apply_pairs(c, {{"epochs", "many"}}, "t"), ConfigError);
  EXPECT_THROW(apply_pairs(c, {{"counts", "1,2,3"}}, "t"), ConfigError);
  EXPECT_THROW(apply_pairs(c, {{"jobs", "-1"}}, "t"), ConfigError);
  EXPECT_THROW(apply_pairs(c, {{"modality", "v,x"}}, "t"), ConfigError);
  RunConfig none;
  apply_pairs(none, {{"modality", ""}}, "t");
  EXPECT_THROW(validate_config(none), ConfigError);
}

TEST(Config, RenderRoundTrip) {
  RunConfig c;
  apply_pairs(c,
              {{"epochs", "7"}, {"seeds", "3,1,2"}, {"modality", "a,p"}, {"backbone", "resnet18"},
               {"avg_pool", "on"}, {"audio_kernels", "16x4:1x1:0x0,16x5:1x1:0x0,3x3:1x1:1x1,3x3:1x1:1x1"},
               {"noise_probs", "0,0.25"}, {"counts", "3,3,3,3,3,3,4"}, {"learning_rate", "0.000123"}},
              "t");
  const auto text1 = render_config(c);
  RunConfig d;
  apply_pairs(d, parse_kv_text(text1, "rendered"), "rendered");
  EXPECT_EQ(render_config(d), text1);
  EXPECT_EQ(d.seeds, (std::vector<std::uint64_t>{3, 1, 2}));
  EXPECT_EQ(d.model.backbone.kind, BackboneKind::resnet18);
  EXPECT_TRUE(d.model.backbone.with_avg_pool);
  EXPECT_EQ(d.model.audio_layers[0].kernel.h, 16u);
  EXPECT_EQ(d.model.audio_layers[1].kernel.w, 5u);
  EXPECT_EQ(d.counts[6], 4u);
  EXPECT_DOUBLE_EQ(d.train.learning_rate, 0.000123);
  // Every schema key appears exactly once.
  for (const auto& f : ConfigSchema::instance().fields())
    EXPECT_NE(text1.find("\n" + f.key + "="), std::string::npos) << f.key;
}

TEST(Config, ModalityParsing) {
  ModelConfig m;
  cfgfmt::parse_modality("v,a", m);
  EXPECT_TRUE(m.use_visual);
  EXPECT_TRUE(m.use_audio);
  EXPECT_FALSE(m.use_proprio);
  EXPECT_EQ(cfgfmt::modality_str(m), "v,a");
  cfgfmt::parse_modality(" p ", m);
  EXPECT_EQ(cfgfmt::modality_str(m), "p");
  EXPECT_THROW(cfgfmt::parse_modality("audio", m), ConfigError);
}

TEST(Config, FileLoadingAndPlan) {
  const auto dir = clue::testing::temp_dir("cfg");
  text::write_file(dir / "run.cfg", "epochs=2\nclass_weighting=off\nseeds=4,5\n");
  RunConfig c;
  load_config_file(c, dir / "run.cfg");
  EXPECT_THROW(load_config_file(c, dir / "missing.cfg"), IoError);
  DatasetManifest m;
  m.counts = kReferenceCounts;
  const auto plan = make_plan(c, m);
  EXPECT_EQ(plan.seeds, (std::vector<std::uint64_t>{4, 5}));
  for (double w : plan.train.class_weights) EXPECT_EQ(w, 1.0);
  c.class_weighting = true;
  EXPECT_NEAR(make_plan(c, m).train.class_weights[4] / make_plan(c, m).train.class_weights[0], 68.0 / 18.0, 1e-12);
}
