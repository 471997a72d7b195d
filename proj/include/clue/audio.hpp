#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "clue/tensor.hpp"

namespace clue::audio {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

struct MfccParams {
  double sample_rate = 16000.0;
  std::size_t frame_len = 512;
  std::size_t hop = 256;
  std::size_t n_mels = 26;
  std::size_t n_mfcc = 13;
  double f_min = 0.0;
  double f_max = 8000.0;
  /// y[n] = x[n] - a*x[n-1]; 0 disables.
  double pre_emphasis = 0.0;
  /// Sinusoidal cepstral lifter length; 0 disables.
  std::size_t lifter = 0;
};

struct MfccMatrix {
  Tensor<double> coeffs;  // [n_frames, n_mfcc]
  std::size_t frame_hop = 0;
  std::size_t n_mfcc = 0;

  std::size_t n_frames() const { return coeffs.dim(0); }
};

inline constexpr double kLogFloor = 1e-10;

inline std::size_t frame_count(std::size_t n, std::size_t frame_len, std::size_t hop) {
  if (frame_len == 0 || hop == 0) throw ParameterError("frame_len and hop must be >= 1");
  if (n < frame_len)
    throw InputError("waveform of " + std::to_string(n) + " samples is shorter than one frame (" +
                     std::to_string(frame_len) + ")");
  return 1 + (n - frame_len) / hop;
}

inline std::vector<double> hann_window(std::size_t len) {
  std::vector<double> w(len, 1.0);
  if (len == 1) return w;
  for (std::size_t n = 0; n < len; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(len - 1)));
  return w;
}

/// Overlapping Hann-windowed frames, [n_frames, frame_len].
inline Tensor<double> frame_and_window(const Waveform& w, std::size_t frame_len, std::size_t hop) {
  if (!(w.sample_rate > 0.0)) throw InputError("sample rate must be positive");
  const std::size_t nf = frame_count(w.samples.size(), frame_len, hop);
  const auto win = hann_window(frame_len);
  Tensor<double> out(Shape{nf, frame_len});
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t n = 0; n < frame_len; ++n) out.at(f, n) = w.samples[f * hop + n] * win[n];
  return out;
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 Cooley-Tukey FFT.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw ParameterError("FFT length " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
  }
}

/// |DFT|^2 over the non-negative frequency bins, [n_frames, L/2+1].
inline Tensor<double> power_spectrum(const Tensor<double>& frames) {
  require_rank(frames, 2, "power_spectrum");
  const std::size_t nf = frames.dim(0), L = frames.dim(1);
  if (!is_power_of_two(L)) throw ParameterError("frame length " + std::to_string(L) + " is not a power of two");
  const std::size_t bins = L / 2 + 1;
  Tensor<double> out(Shape{nf, bins});
  std::vector<std::complex<double>> buf(L);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t n = 0; n < L; ++n) buf[n] = {frames.at(f, n), 0.0};
    fft(buf);
    for (std::size_t k = 0; k < bins; ++k) out.at(f, k) = std::norm(buf[k]);
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters on mel-uniform centres, [n_mels, n_fft/2+1]. Each filter
/// rises from the previous centre's bin to its own and falls to the next one.
inline Tensor<double> mel_filter_matrix(std::size_t n_mels, std::size_t n_fft, double sample_rate, double f_min,
                                        double f_max) {
  if (n_mels < 2) throw ParameterError("n_mels must be >= 2");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ParameterError("mel range must satisfy 0 <= f_min < f_max <= sample_rate/2");
  const std::size_t bins = n_fft / 2 + 1;
  const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
  std::vector<std::size_t> edge(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i) {
    const double mel = m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1);
    const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(n_fft + 1) * mel_to_hz(mel) / sample_rate));
    edge[i] = std::min(b, bins - 1);
  }
  Tensor<double> fb(Shape{n_mels, bins});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const std::size_t l = edge[m], c = edge[m + 1], r = edge[m + 2];
    for (std::size_t k = l; k < c; ++k) fb.at(m, k) = static_cast<double>(k - l) / static_cast<double>(c - l);
    fb.at(m, c) = 1.0;
    for (std::size_t k = c + 1; k <= r; ++k) fb.at(m, k) = static_cast<double>(r - k) / static_cast<double>(r - c);
  }
  return fb;
}

/// Filterbank energies: spectrum [n_frames, bins] times the filter matrix.
inline Tensor<double> mel_filterbank(const Tensor<double>& spectrum, std::size_t n_mels, double f_min, double f_max,
                                     double sample_rate) {
  require_rank(spectrum, 2, "mel_filterbank");
  const std::size_t nf = spectrum.dim(0), bins = spectrum.dim(1);
  const auto fb = mel_filter_matrix(n_mels, (bins - 1) * 2, sample_rate, f_min, f_max);
  Tensor<double> out(Shape{nf, n_mels});
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t m = 0; m < n_mels; ++m) {
      double s = 0.0;
      for (std::size_t k = 0; k < bins; ++k) s += fb.at(m, k) * spectrum.at(f, k);
      out.at(f, m) = s;
    }
  return out;
}

/// Orthonormal DCT-II basis, [n_out, n_in].
inline Tensor<double> dct_matrix(std::size_t n_in, std::size_t n_out) {
  if (n_out > n_in) throw ParameterError("cannot keep more DCT coefficients than inputs");
  Tensor<double> d(Shape{n_out, n_in});
  const double N = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
    for (std::size_t n = 0; n < n_in; ++n)
      d.at(k, n) = s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(n) + 1.0) / (2.0 * N));
  }
  return d;
}

inline MfccMatrix mfcc(const Waveform& w, const MfccParams& p) {
  if (std::abs(w.sample_rate - p.sample_rate) > 1e-9)
    throw InputError("waveform sample rate " + std::to_string(w.sample_rate) + " differs from configured " +
                     std::to_string(p.sample_rate));
  if (p.n_mfcc < 1 || p.n_mfcc > p.n_mels) throw ParameterError("n_mfcc must be in [1, n_mels]");
  const Waveform* src = &w;
  Waveform emphasized;
  if (p.pre_emphasis != 0.0) {
    emphasized = w;
    for (std::size_t n = w.samples.size(); n-- > 1;)
      emphasized.samples[n] = w.samples[n] - p.pre_emphasis * w.samples[n - 1];
    src = &emphasized;
  }
  const auto frames = frame_and_window(*src, p.frame_len, p.hop);
  const auto energies = mel_filterbank(power_spectrum(frames), p.n_mels, p.f_min, p.f_max, p.sample_rate);
  const auto dct = dct_matrix(p.n_mels, p.n_mfcc);
  const std::size_t nf = energies.dim(0);
  MfccMatrix out{Tensor<double>(Shape{nf, p.n_mfcc}), p.hop, p.n_mfcc};
  std::vector<double> logs(p.n_mels);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t m = 0; m < p.n_mels; ++m) logs[m] = std::log(energies.at(f, m) + kLogFloor);
    for (std::size_t k = 0; k < p.n_mfcc; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < p.n_mels; ++m) s += dct.at(k, m) * logs[m];
      if (p.lifter > 0)
        s *= 1.0 + 0.5 * static_cast<double>(p.lifter) *
                       std::sin(std::numbers::pi * static_cast<double>(k) / static_cast<double>(p.lifter));
      out.coeffs.at(f, k) = s;
    }
  }
  require_finite(out.coeffs, "mfcc output");
  return out;
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM16, mono)

inline std::int16_t to_pcm16(double x) {
  const double v = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto put = [&](std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
  tag("RIFF");
  put(36 + data_bytes, 4);
  tag("WAVE");
  tag("fmt ");
  put(16, 4);
  put(1, 2);  // PCM
  put(1, 2);  // mono
  put(rate, 4);
  put(rate * 2, 4);
  put(2, 2);
  put(16, 2);
  tag("data");
  put(data_bytes, 4);
  for (double x : w.samples) put(static_cast<std::uint16_t>(to_pcm16(x)), 2);
  return out;
}

inline Waveform decode_wav(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  auto fail = [&](std::size_t off, const std::string& msg) -> FormatError {
    return FormatError(name + " @ byte " + std::to_string(off) + ": " + msg);
  };
  auto u32 = [&](std::size_t off) {
    if (off + 4 > bytes.size()) throw fail(off, "truncated");
    return static_cast<std::uint32_t>(bytes[off]) | (static_cast<std::uint32_t>(bytes[off + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[off + 2]) << 16) | (static_cast<std::uint32_t>(bytes[off + 3]) << 24);
  };
  auto u16 = [&](std::size_t off) {
    if (off + 2 > bytes.size()) throw fail(off, "truncated");
    return static_cast<std::uint16_t>(bytes[off] | (bytes[off + 1] << 8));
  };
  auto is_tag = [&](std::size_t off, const char* t) {
    return off + 4 <= bytes.size() && std::equal(t, t + 4, bytes.begin() + static_cast<std::ptrdiff_t>(off));
  };
  if (!is_tag(0, "RIFF")) throw fail(0, "missing RIFF tag");
  if (!is_tag(8, "WAVE")) throw fail(8, "missing WAVE tag");
  std::size_t off = 12;
  bool have_fmt = false;
  std::uint32_t rate = 0;
  while (off + 8 <= bytes.size()) {
    const std::uint32_t len = u32(off + 4);
    const std::size_t body = off + 8;
    if (is_tag(off, "fmt ")) {
      if (len < 16) throw fail(body, "fmt chunk too short");
      if (u16(body) != 1) throw fail(body, "not PCM (format tag " + std::to_string(u16(body)) + ")");
      if (u16(body + 2) != 1) throw fail(body + 2, "not mono (" + std::to_string(u16(body + 2)) + " channels)");
      rate = u32(body + 4);
      if (u16(body + 14) != 16) throw fail(body + 14, "not 16-bit samples");
      have_fmt = true;
    } else if (is_tag(off, "data")) {
      if (!have_fmt) throw fail(off, "data chunk before fmt chunk");
      if (body + len > bytes.size()) throw fail(bytes.size(), "data chunk truncated");
      if (len % 2) throw fail(body, "odd data length");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<double>(static_cast<std::int16_t>(u16(body + 2 * i))) / 32768.0;
      return w;
    }
    off = body + len + (len & 1);
  }
  throw fail(off, "no data chunk");
}

inline void write_wav(const Waveform& w, const std::filesystem::path& path) {
  const auto bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

}  // namespace clue::audio
