#include <gtest/gtest.h>

#include <map>

#include "support.hpp"

using namespace clue;
namespace fs = std::filesystem;

namespace {

double rms(const audio::Waveform& w) {
  double s = 0;
  for (double x : w.samples) s += x * x;
  return std::sqrt(s / double(w.samples.size()));
}

// Pixels whose colour is close to the object's red.
std::size_t blob_mass(const Episode& ep, std::size_t t) {
  const auto f = ep.frame(t);
  const std::size_t S = ep.image_size();
  std::size_t n = 0;
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j)
      if (f.at(0, i, j) > 0.7f && f.at(1, i, j) < 0.35f && f.at(2, i, j) < 0.35f) ++n;
  return n;
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_bytes(e.path());
  return out;
}

DatasetManifest synthetic_manifest(const std::array<std::size_t, kNumClasses>& counts) {
  DatasetManifest m;
  m.counts = counts;
  std::size_t next = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      const auto id = "e" + std::to_string(next++);
      m.rows.push_back({id, static_cast<AnomalyClass>(c), id, 0, 0, 0});
    }
  return m;
}

}  // namespace

TEST(Episode, DeterministicAndWellFormed) {
  const GeneratorParams p;
  const auto a = generate_episode(AnomalyClass::DIS, 7, p), b = generate_episode(AnomalyClass::DIS, 7, p);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.audio.samples, b.audio.samples);
  EXPECT_EQ(a.proprio, b.proprio);
  EXPECT_EQ(a.signal_region, b.signal_region);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto ep = generate_episode(static_cast<AnomalyClass>(c), 100 + c, p);
    EXPECT_EQ(ep.frames.shape(), (Shape{8, 3, 32, 32}));
    for (float v : ep.frames.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (std::size_t i = 1; i < ep.timestamps.size(); ++i) EXPECT_GT(ep.timestamps[i], ep.timestamps[i - 1]);
    for (std::size_t i = 0; i < ep.proprio.dim(0); ++i) {
      EXPECT_GE(ep.proprio.at(i, 0), 0.0);
      EXPECT_LE(ep.proprio.at(i, 0), 1.0);
      EXPECT_GE(ep.proprio.at(i, 1), 0.0);
      EXPECT_LE(ep.proprio.at(i, 1), 1.0);
    }
    EXPECT_EQ(ep.audio.samples.size(), 16000u);
    EXPECT_LT(ep.signal_region, 4u);
    EXPECT_LT(ep.event_frame, 8u);
  }
  GeneratorParams bad;
  bad.image_size = 4;
  EXPECT_THROW(generate_episode(AnomalyClass::SAFE, 1, bad), ConfigError);
}

TEST(Episode, SafeQuieterThanBurst) {
  const GeneratorParams p;
  for (std::uint64_t s = 0; s < 10; ++s)
    EXPECT_LT(rms(generate_episode(AnomalyClass::SAFE, s, p).audio), rms(generate_episode(AnomalyClass::EUA, s, p).audio));
}

TEST(Episode, DisappearanceRemovesBlob) {
  const GeneratorParams p;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ep = generate_episode(AnomalyClass::DIS, s, p);
    const auto first = blob_mass(ep, 0), last = blob_mass(ep, ep.num_frames() - 1);
    EXPECT_GT(first, 0u);
    EXPECT_LT(double(last), 0.1 * double(first)) << "seed " << s;
  }
}

TEST(Dataset, ReferenceCountsAndByteIdenticalTrees) {
  const auto a = clue::testing::temp_dir("ds_a"), b = clue::testing::temp_dir("ds_b");
  const GeneratorParams p;
  const auto m = generate_dataset(kReferenceCounts, 3, p, a);
  EXPECT_EQ(m.total(), 249u);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(a)) dirs += e.is_directory();
  EXPECT_EQ(dirs, 249u);
  const std::array<std::size_t, kNumClasses> small{2, 1, 1, 1, 1, 1, 2};
  const auto c = clue::testing::temp_dir("ds_c");
  generate_dataset(small, 3, p, b);
  generate_dataset(small, 3, p, c);
  EXPECT_EQ(tree_bytes(b), tree_bytes(c));
  const auto ones = clue::testing::temp_dir("ds_ones");
  std::array<std::size_t, kNumClasses> one;
  one.fill(1);
  EXPECT_EQ(generate_dataset(one, 1, p, ones).total(), 7u);
  EXPECT_EQ(read_dataset_manifest(ones).rows.size(), 7u);
  one[4] = 0;
  EXPECT_THROW(generate_dataset(one, 1, p, ones), ConfigError);
}

TEST(Dataset, UnwritableDirectory) {
  const auto blocker = clue::testing::temp_dir("ds_block") / "file";
  text::write_file(blocker, "x");
  std::array<std::size_t, kNumClasses> one;
  one.fill(1);
  EXPECT_THROW(generate_dataset(one, 1, GeneratorParams{}, blocker / "sub"), IoError);
}

TEST(Subsample, Examples) {
  std::vector<double> ts;
  for (int i = 0; i < 64; ++i) ts.push_back(i);
  EXPECT_EQ(subsample_indices(ts, 0.125), (std::vector<std::size_t>{0, 8, 16, 24, 32, 40, 48, 56}));
  EXPECT_EQ(subsample_indices(ts, 1.0).size(), 64u);
  EXPECT_EQ(subsample_indices(ts, 5.0).size(), 64u);
  EXPECT_EQ(subsample_indices({3.5}, 0.125), (std::vector<std::size_t>{0}));
  EXPECT_THROW(subsample_indices({}, 1.0), InputError);
  EXPECT_THROW(subsample_indices({0, 2, 1}, 1.0), InputError);
  const std::vector<int> frames{10, 11, 12, 13};
  auto [f, t] = temporal_subsample(frames, std::vector<double>{0, 3, 9, 10}, 0.125);
  EXPECT_EQ(f, (std::vector<int>{10, 12}));
  EXPECT_EQ(t, (std::vector<double>{0, 9}));
}

TEST(Subsample, AlwaysNonEmptyAndAscending) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> ts;
    double t = rng.uniform(0, 5);
    for (int i = 0; i < 1 + int(rng.below(30)); ++i) ts.push_back(t += rng.uniform(0.01, 10));
    const auto keep = subsample_indices(ts, rng.uniform(0.01, 2));
    ASSERT_FALSE(keep.empty());
    EXPECT_EQ(keep[0], 0u);
    for (std::size_t i = 1; i < keep.size(); ++i) EXPECT_GT(keep[i], keep[i - 1]);
  }
}

TEST(Split, ReferenceCountsAndPartition) {
  const auto m = synthetic_manifest(kReferenceCounts);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = stratified_split(m, 0.8, seed);
    std::array<std::size_t, kNumClasses> test{}, train{};
    std::map<std::string, int> seen;
    for (const auto& id : s.test) ++seen[id];
    for (const auto& id : s.train) ++seen[id];
    EXPECT_EQ(seen.size(), 249u);
    for (const auto& [id, n] : seen) EXPECT_EQ(n, 1) << id;
    for (const auto& r : m.rows) {
      const bool in_test = std::find(s.test.begin(), s.test.end(), r.id) != s.test.end();
      ++(in_test ? test : train)[class_index(r.label)];
    }
    EXPECT_EQ(train[0], 54u);
    EXPECT_EQ(test[0], 14u);
    EXPECT_EQ(train[4], 14u);
    EXPECT_EQ(test[4], 4u);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      EXPECT_EQ(test[c], std::max<std::size_t>(1, std::size_t(std::lround(0.2 * double(kReferenceCounts[c])))));
  }
  EXPECT_NE(stratified_split(m, 0.8, 1).test, stratified_split(m, 0.8, 2).test);
  EXPECT_EQ(stratified_split(m, 0.8, 1).test, stratified_split(m, 0.8, 1).test);
  EXPECT_THROW(stratified_split(synthetic_manifest({2, 1, 2, 2, 2, 2, 2}), 0.8, 1), DataError);
}

TEST(ClassWeights, InverseFrequency) {
  std::array<std::size_t, kNumClasses> uniform;
  uniform.fill(5);
  for (double w : class_weights(uniform)) EXPECT_DOUBLE_EQ(w, 1.0);
  const auto w = class_weights(kReferenceCounts);
  EXPECT_NEAR(w[4] / w[0], 68.0 / 18.0, 1e-12);
  EXPECT_NEAR(w[4] / w[0], 3.78, 0.005);
  double mean = 0;
  for (double v : w) mean += v / 7;
  EXPECT_NEAR(mean, 1.0, 1e-12);
  for (std::size_t a = 0; a < kNumClasses; ++a)
    for (std::size_t b = 0; b < kNumClasses; ++b)
      if (kReferenceCounts[a] < kReferenceCounts[b]) EXPECT_GT(w[a], w[b]);
  auto empty = kReferenceCounts;
  empty[2] = 0;
  EXPECT_THROW(class_weights(empty), DataError);
}

TEST(Persistence, SaveLoadSaveIsByteIdentical) {
  const auto a = clue::testing::temp_dir("ep_a"), b = clue::testing::temp_dir("ep_b");
  const auto ep = generate_episode(AnomalyClass::OTA, 11, GeneratorParams{});
  save_episode(ep, a);
  const auto loaded = load_episode(a);
  save_episode(loaded, b);
  EXPECT_EQ(tree_bytes(a), tree_bytes(b));
  EXPECT_EQ(loaded.frames.shape(), ep.frames.shape());
  for (std::size_t i = 0; i < ep.frames.size(); ++i) EXPECT_NEAR(loaded.frames[i], ep.frames[i], 0.5f / 255 + 1e-6f);
}

TEST(Persistence, TruncatedPpm) {
  const auto bytes = io::encode_ppm(Tensor<float>(Shape{3, 4, 4}, 0.5f));
  EXPECT_EQ(io::decode_ppm(bytes, "ok.ppm").shape(), (Shape{3, 4, 4}));
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 5);
  try {
    io::decode_ppm(cut, "cut.ppm");
    FAIL() << "truncated PPM accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cut.ppm"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
  EXPECT_THROW(io::decode_ppm({'P', '3', '\n'}, "p3.ppm"), FormatError);
}

TEST(Persistence, MissingEpisodeIsNamed) {
  const auto dir = clue::testing::temp_dir("ds_missing");
  std::array<std::size_t, kNumClasses> one;
  one.fill(1);
  generate_dataset(one, 5, GeneratorParams{}, dir);
  fs::remove_all(dir / "e3");
  try {
    load_dataset(dir);
    FAIL() << "missing episode accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("e3"), std::string::npos);
  }
}

// Mean audio RMS and final-frame blob mass alone beat chance.
TEST(Separability, NearestCentroidAboveChance) {
  const GeneratorParams p;
  auto feature = [&](AnomalyClass c, std::uint64_t seed) {
    const auto ep = generate_episode(c, seed, p);
    return std::array<double, 2>{rms(ep.audio) * 50.0, double(blob_mass(ep, ep.num_frames() - 1)) / 10.0};
  };
  std::array<std::array<double, 2>, kNumClasses> centroid{};
  const int n_train = 12, n_test = 12;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (int i = 0; i < n_train; ++i) {
      const auto f = feature(static_cast<AnomalyClass>(c), 1000 + c * 100 + i);
      centroid[c][0] += f[0] / n_train;
      centroid[c][1] += f[1] / n_train;
    }
  int correct = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (int i = 0; i < n_test; ++i) {
      const auto f = feature(static_cast<AnomalyClass>(c), 5000 + c * 100 + i);
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        const double d = std::hypot(f[0] - centroid[k][0], f[1] - centroid[k][1]);
        if (d < bd) bd = d, best = k;
      }
      correct += best == c;
    }
  EXPECT_GT(double(correct) / (kNumClasses * n_test), 1.0 / 7.0);
}
