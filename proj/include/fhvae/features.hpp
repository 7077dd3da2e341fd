// Copyright (c) 2026 The contrastive-fhvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "fhvae/binary_io.hpp"
#include "fhvae/diff.hpp"
#include "fhvae/error.hpp"

namespace fhvae {

using Matrix = diff::Matrix;
using Index = diff::Index;

inline constexpr Index kDefaultSegmentLength = 20;

struct Utterance {
  std::string speaker_id;
  std::string utterance_id;
  Matrix frames;             // T x F natural-log magnitudes
  double frame_hop = 0.010;  // seconds

  Index num_frames() const { return frames.rows(); }
  Index feat_dim() const { return frames.cols(); }
};

struct Segment {
  std::string speaker_id;
  std::string utterance_id;
  Index start_frame = 0;
  Matrix frames;  // seg_len x F
};

struct Waveform {
  std::vector<double> samples;  // nominal range [-1, 1]
  int sample_rate = 16000;
};

struct StftConfig {
  int sample_rate = 16000;
  double window = 0.025;   // seconds
  double hop = 0.010;      // seconds
  int n_bands = 40;        // 0 keeps all fft_size/2 + 1 bins
  double floor_eps = 1e-10;

  int window_samples() const { return static_cast<int>(std::lround(window * sample_rate)); }
  int hop_samples() const { return static_cast<int>(std::lround(hop * sample_rate)); }
  int fft_size() const {
    int n = 1;
    while (n < window_samples()) n <<= 1;
    return n;
  }
  int num_bins() const { return fft_size() / 2 + 1; }
  int feat_dim() const { return n_bands > 0 ? n_bands : num_bins(); }
  Index num_frames(std::size_t signal_length) const {
    return 1 + static_cast<Index>((signal_length - window_samples()) / hop_samples());
  }
};

namespace detail {

// FFTW planning is not thread safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  // frame.size() <= n; zero padded.
  std::vector<std::complex<double>> forward(const std::vector<double>& frame) {
    for (int i = 0; i < n_; ++i) real_[i] = i < static_cast<int>(frame.size()) ? frame[i] : 0.0;
    fftw_execute(forward_);
    std::vector<std::complex<double>> out(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k) out[k] = {spec_[k][0], spec_[k][1]};
    return out;
  }

  // Normalized inverse: forward(inverse(X)) == X for Hermitian X.
  std::vector<double> inverse(const std::vector<std::complex<double>>& spectrum) {
    for (int k = 0; k <= n_ / 2; ++k) {
      spec_[k][0] = spectrum[k].real();
      spec_[k][1] = spectrum[k].imag();
    }
    fftw_execute(inverse_);
    std::vector<double> out(n_);
    for (int i = 0; i < n_; ++i) out[i] = real_[i] / n_;
    return out;
  }

 private:
  int n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace detail

inline std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  for (int n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  return w;
}

using ComplexFrames = std::vector<std::vector<std::complex<double>>>;

inline ComplexFrames stft_complex(const std::vector<double>& signal, const StftConfig& cfg) {
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  if (win <= 0 || hop <= 0) throw DataError("stft: window and hop must be positive");
  if (signal.size() < static_cast<std::size_t>(win))
    throw DataError("stft: waveform shorter than one analysis window");
  const Index frames = cfg.num_frames(signal.size());
  const std::vector<double> window = hann_window(win);
  detail::RealFft fft(cfg.fft_size());
  ComplexFrames out;
  out.reserve(frames);
  std::vector<double> buf(win);
  for (Index t = 0; t < frames; ++t) {
    for (int i = 0; i < win; ++i) buf[i] = signal[t * hop + i] * window[i];
    out.push_back(fft.forward(buf));
  }
  return out;
}

// [begin, end) bin ranges of the averaged bands.
inline std::vector<std::pair<int, int>> band_edges(const StftConfig& cfg) {
  const int bins = cfg.num_bins();
  std::vector<std::pair<int, int>> edges;
  if (cfg.n_bands <= 0) {
    for (int k = 0; k < bins; ++k) edges.emplace_back(k, k + 1);
    return edges;
  }
  if (cfg.n_bands > bins) throw DataError("stft: more bands than frequency bins");
  for (int b = 0; b < cfg.n_bands; ++b)
    edges.emplace_back(b * bins / cfg.n_bands, (b + 1) * bins / cfg.n_bands);
  return edges;
}

// Magnitudes per frame and band, before the log.
inline Matrix band_magnitudes(const ComplexFrames& spectra, const StftConfig& cfg) {
  const auto edges = band_edges(cfg);
  Matrix mag(static_cast<Index>(spectra.size()), static_cast<Index>(edges.size()));
  for (std::size_t t = 0; t < spectra.size(); ++t) {
    for (std::size_t b = 0; b < edges.size(); ++b) {
      double acc = 0.0;
      for (int k = edges[b].first; k < edges[b].second; ++k) acc += std::abs(spectra[t][k]);
      mag(static_cast<Index>(t), static_cast<Index>(b)) = acc / (edges[b].second - edges[b].first);
    }
  }
  return mag;
}

inline Utterance stft_log_magnitude(const Waveform& wave, const StftConfig& cfg = {}) {
  if (wave.sample_rate <= 0) throw DataError("stft: sample rate must be positive");
  StftConfig c = cfg;
  c.sample_rate = wave.sample_rate;
  Matrix mag = band_magnitudes(stft_complex(wave.samples, c), c);
  Utterance utt;
  utt.frames = (mag.array() + c.floor_eps).log().matrix();
  utt.frame_hop = static_cast<double>(c.hop_samples()) / c.sample_rate;
  return utt;
}

inline Index segment_count(Index num_frames, Index seg_len, Index seg_hop) {
  if (num_frames < seg_len) return 0;
  return 1 + (num_frames - seg_len) / seg_hop;
}

inline std::vector<Segment> segment_utterance(const Utterance& utt,
                                              Index seg_len = kDefaultSegmentLength,
                                              Index seg_hop = kDefaultSegmentLength) {
  if (seg_len <= 0 || seg_hop <= 0) throw DataError("segment: length and hop must be positive");
  if (utt.num_frames() < seg_len)
    throw DataError("segment: utterance '" + utt.utterance_id + "' has " +
                    std::to_string(utt.num_frames()) + " frames, fewer than segment length " +
                    std::to_string(seg_len));
  const Index count = segment_count(utt.num_frames(), seg_len, seg_hop);
  std::vector<Segment> out;
  out.reserve(count);
  for (Index n = 0; n < count; ++n) {
    Segment s;
    s.speaker_id = utt.speaker_id;
    s.utterance_id = utt.utterance_id;
    s.start_frame = n * seg_hop;
    s.frames = utt.frames.middleRows(s.start_frame, seg_len);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- utterance container -------------------------------------------------
// "FHVU" | version u32 | T u32 | F u32 | hop_us u32 | T*F f64, row-major, LE.

inline constexpr std::uint32_t kUtteranceVersion = 1;

inline std::vector<char> encode_utterance(const Utterance& utt) {
  io::ByteWriter w;
  w.raw("FHVU");
  w.u32(kUtteranceVersion);
  w.u32(static_cast<std::uint32_t>(utt.num_frames()));
  w.u32(static_cast<std::uint32_t>(utt.feat_dim()));
  w.u32(static_cast<std::uint32_t>(std::lround(utt.frame_hop * 1e6)));
  for (Index t = 0; t < utt.num_frames(); ++t)
    for (Index f = 0; f < utt.feat_dim(); ++f) w.f64(utt.frames(t, f));
  return w.bytes();
}

inline Utterance decode_utterance(const std::vector<char>& bytes, const std::string& what) {
  io::ByteReader r(bytes, what);
  if (r.raw(4) != "FHVU") throw DataError(what + ": not an FHVU utterance container");
  const std::uint32_t version = r.u32();
  if (version != kUtteranceVersion)
    throw DataError(what + ": unsupported utterance container version " + std::to_string(version));
  const Index T = r.u32();
  const Index F = r.u32();
  const std::uint32_t hop_us = r.u32();
  Utterance utt;
  utt.frame_hop = hop_us * 1e-6;
  utt.frames.resize(T, F);
  for (Index t = 0; t < T; ++t)
    for (Index f = 0; f < F; ++f) utt.frames(t, f) = r.f64();
  if (!r.at_end()) throw DataError(what + ": trailing bytes after frame data");
  if (!utt.frames.allFinite()) throw DataError(what + ": non-finite frame values");
  return utt;
}

inline void write_utterance_file(const std::filesystem::path& path, const Utterance& utt) {
  io::write_file(path, encode_utterance(utt));
}

inline Utterance read_utterance_file(const std::filesystem::path& path) {
  return decode_utterance(io::read_file(path), path.string());
}

// ---- 16-bit PCM mono WAV ----------------------------------------------------

inline Waveform read_wav(const std::filesystem::path& path) {
  const std::vector<char> bytes = io::read_file(path);
  const std::string what = path.string();
  io::ByteReader r(bytes, what);
  if (r.raw(4) != "RIFF") throw DataError(what + ": not a RIFF file");
  r.u32();
  if (r.raw(4) != "WAVE") throw DataError(what + ": not a WAVE file");
  Waveform wave;
  bool have_fmt = false;
  while (!r.at_end()) {
    const std::string id = r.raw(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      const std::string body = r.raw(size);
      const std::vector<char> fmt_bytes(body.begin(), body.end());
      io::ByteReader f(fmt_bytes, what);
      const std::uint32_t fmt_and_channels = f.u32();
      const std::uint32_t format = fmt_and_channels & 0xFFFFu;
      const std::uint32_t channels = fmt_and_channels >> 16;
      wave.sample_rate = static_cast<int>(f.u32());
      f.u32();
      const std::uint32_t bits = f.u32() >> 16;
      if (format != 1 || channels != 1 || bits != 16)
        throw DataError(what + ": only mono 16-bit PCM is supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(what + ": data chunk before fmt chunk");
      const std::string body = r.raw(size);
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto lo = static_cast<unsigned char>(body[2 * i]);
        const auto hi = static_cast<unsigned char>(body[2 * i + 1]);
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        wave.samples[i] = v / 32768.0;
      }
      return wave;
    } else {
      r.raw(size + (size & 1u));
    }
  }
  throw DataError(what + ": no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  io::ByteWriter w;
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  w.raw("RIFF");
  w.u32(36 + 2 * n);
  w.raw("WAVE");
  w.raw("fmt ");
  w.u32(16);
  w.u32(1u | (1u << 16));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate * 2));
  w.u32(2u | (16u << 16));
  w.raw("data");
  w.u32(2 * n);
  std::string pcm;
  pcm.reserve(2 * n);
  for (double s : wave.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
    pcm.push_back(static_cast<char>(v & 0xFF));
    pcm.push_back(static_cast<char>(v >> 8));
  }
  w.raw(pcm);
  io::write_file(path, w.bytes());
}

}  // namespace fhvae
