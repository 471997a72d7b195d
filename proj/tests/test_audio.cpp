#include <gtest/gtest.h>

#include "support.hpp"

using namespace clue;
using namespace clue::audio;

namespace {

Waveform noise(std::size_t n, std::uint64_t seed, double amp = 0.5) {
  Rng rng(seed, "wave");
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(rng.uniform(-amp, amp));
  return w;
}

std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t L = x.size();
  std::vector<std::complex<double>> X(L);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t n = 0; n < L; ++n) X[k] += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * n % L) / double(L));
  return X;
}

}  // namespace

TEST(Framing, Counts) {
  EXPECT_EQ(frame_count(512, 512, 999), 1u);
  EXPECT_EQ(frame_count(1024, 512, 256), 3u);
  EXPECT_EQ(frame_count(16000, 512, 256), 61u);
  for (std::size_t n : {37u, 100u, 513u, 4000u})
    for (std::size_t L : {8u, 32u})
      for (std::size_t hop : {1u, 3u, 8u, 16u}) EXPECT_EQ(frame_count(n, L, hop), 1 + (n - L) / hop);
  EXPECT_THROW(frame_count(100, 512, 256), InputError);
  Waveform w;
  w.samples.assign(100, 0.0);
  EXPECT_THROW(frame_and_window(w, 512, 256), InputError);
}

TEST(Framing, ConstantSignalGivesHannWindow) {
  Waveform w;
  w.samples.assign(64, 1.0);
  const auto f = frame_and_window(w, 64, 16);
  ASSERT_EQ(f.dim(0), 1u);
  for (std::size_t n = 0; n < 64; ++n)
    EXPECT_DOUBLE_EQ(f.at(0, n), 0.5 * (1 - std::cos(2 * std::numbers::pi * double(n) / 63.0)));
}

TEST(Spectrum, ZeroFrame) {
  const auto p = power_spectrum(Tensor<double>(Shape{2, 16}));
  EXPECT_EQ(p.shape(), (Shape{2, 9}));
  for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Spectrum, SineAtBin) {
  const std::size_t L = 64, k = 5;
  Tensor<double> f(Shape{1, L});
  for (std::size_t n = 0; n < L; ++n) f.at(0, n) = std::sin(2 * std::numbers::pi * double(k * n) / double(L));
  const auto p = power_spectrum(f);
  for (std::size_t b = 0; b <= L / 2; ++b) {
    if (b == k) EXPECT_NEAR(p.at(0, b), double(L * L) / 4, 1e-9);
    else EXPECT_NEAR(p.at(0, b), 0.0, 1e-9);
  }
}

TEST(Spectrum, FftMatchesDirectDftOnAllLengths) {
  for (std::size_t L = 8; L <= 1024; L *= 2)
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed, "fft");
      std::vector<std::complex<double>> x(L);
      for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto fast = x;
      fft(fast);
      const auto slow = direct_dft(x);
      double num = 0, den = 0;
      for (std::size_t k = 0; k < L; ++k) {
        num = std::max(num, std::abs(fast[k] - slow[k]));
        den = std::max(den, std::abs(slow[k]));
      }
      EXPECT_LT(num / den, 1e-6) << "L=" << L;
    }
  std::vector<std::complex<double>> bad(12);
  EXPECT_THROW(fft(bad), ParameterError);
  EXPECT_THROW(power_spectrum(Tensor<double>(Shape{1, 12})), ParameterError);
}

TEST(Mel, Scale) {
  EXPECT_NEAR(hz_to_mel(700.0), 781.17, 0.005);
  EXPECT_DOUBLE_EQ(hz_to_mel(700.0), 2595.0 * std::log10(2.0));
  for (double f : {0.0, 100.0, 1234.5, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Mel, FiltersAreNonNegativeAndPeakAtCentre) {
  const auto fb = mel_filter_matrix(26, 512, 16000, 0, 8000);
  for (std::size_t m = 0; m < 26; ++m) {
    double peak = 0;
    for (std::size_t k = 0; k < 257; ++k) {
      EXPECT_GE(fb.at(m, k), 0.0);
      peak = std::max(peak, fb.at(m, k));
    }
    EXPECT_EQ(peak, 1.0);
  }
  const auto e = mel_filterbank(Tensor<double>(Shape{3, 257}), 26, 0, 8000, 16000);
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(mel_filter_matrix(1, 512, 16000, 0, 8000), ParameterError);
  EXPECT_THROW(mel_filter_matrix(26, 512, 16000, 0, 9000), ParameterError);
}

TEST(Dct, Orthonormal) {
  const auto M = dct_matrix(26, 26);
  for (std::size_t i = 0; i < 26; ++i)
    for (std::size_t j = 0; j < 26; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 26; ++k) s += M.at(k, i) * M.at(k, j);
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-6);
    }
  EXPECT_THROW(dct_matrix(4, 5), ParameterError);
}

TEST(Mfcc, SilenceOnlyC0) {
  Waveform w;
  w.samples.assign(16000, 0.0);
  const MfccParams p;
  const auto m = mfcc(w, p);
  ASSERT_EQ(m.n_frames(), 61u);
  ASSERT_EQ(m.coeffs.dim(1), 13u);
  for (std::size_t f = 0; f < m.n_frames(); ++f) {
    EXPECT_NEAR(m.coeffs.at(f, 0), std::sqrt(26.0) * std::log(1e-10), 1e-9);
    for (std::size_t k = 1; k < 13; ++k) EXPECT_NEAR(m.coeffs.at(f, k), 0.0, 1e-9);
  }
}

TEST(Mfcc, GainChangesOnlyC0) {
  auto w = noise(16000, 3, 0.3);
  auto w2 = w;
  for (auto& s : w2.samples) s *= 2;
  const MfccParams p;
  const auto a = mfcc(w, p), b = mfcc(w2, p);
  for (std::size_t f = 0; f < a.n_frames(); ++f) {
    EXPECT_NEAR(b.coeffs.at(f, 0) - a.coeffs.at(f, 0), std::sqrt(26.0) * std::log(4.0), 1e-6);
    for (std::size_t k = 1; k < 13; ++k) EXPECT_NEAR(b.coeffs.at(f, k), a.coeffs.at(f, k), 1e-6);
  }
}

TEST(Mfcc, MatchesBruteForceOracle) {
  const MfccParams p;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = noise(16000, seed);
    EXPECT_LT(clue::testing::mfcc_oracle_error(mfcc(w, p), clue::testing::oracle_mfcc(w.samples, p)), 1e-6);
  }
}

TEST(Mfcc, DeterministicAndRateChecked) {
  const auto w = noise(4000, 9);
  const MfccParams p;
  EXPECT_EQ(mfcc(w, p).coeffs, mfcc(w, p).coeffs);
  auto w8 = w;
  w8.sample_rate = 8000;
  EXPECT_THROW(mfcc(w8, p), InputError);
}

TEST(Wav, RoundTripAndErrors) {
  auto w = noise(1000, 4, 0.9);
  const auto bytes = encode_wav(w);
  const auto back = decode_wav(bytes, "x.wav");
  ASSERT_EQ(back.samples.size(), w.samples.size());
  EXPECT_EQ(back.sample_rate, 16000.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768);
  EXPECT_EQ(encode_wav(back), bytes);

  auto stereo = bytes;
  stereo[22] = 2;
  try {
    decode_wav(stereo, "s.wav");
    FAIL() << "stereo accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("mono"), std::string::npos);
  }
  auto truncated = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100);
  EXPECT_THROW(decode_wav(truncated, "t.wav"), FormatError);
  EXPECT_THROW(decode_wav(std::vector<std::uint8_t>(10, 0), "z.wav"), FormatError);
}
