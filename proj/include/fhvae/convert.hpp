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

#include <cmath>
#include <complex>
#include <optional>
#include <random>
#include <vector>

#include "fhvae/error.hpp"
#include "fhvae/features.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

// z2 - mu2_src + mu2_tar, evaluated as z2 + (mu2_tar - mu2_src) so that a
// zero shift returns z2 unchanged bit for bit.
inline Vector convert_z2(const Vector& z2_src, const Vector& mu2_src, const Vector& mu2_tar) {
  if (z2_src.size() != mu2_src.size() || z2_src.size() != mu2_tar.size())
    throw DataError("convert_z2: dimension mismatch");
  return z2_src + (mu2_tar - mu2_src);
}

struct ConversionRequest {
  Utterance source;
  Vector target_mu2;
  // Defaults to infer_mu2 over the source utterance.
  std::optional<Vector> source_mu2;
};

namespace detail {

struct SourceLatents {
  std::vector<Segment> segments;
  std::vector<Vector> z2;  // posterior means
  std::vector<Vector> z1;  // posterior means given the z2 means
};

inline SourceLatents encode_source(const Utterance& utt, const ModelParams& m) {
  SourceLatents s;
  s.segments = segment_utterance(utt, m.seg_len, m.seg_len);
  for (const auto& g : encode_z2(s.segments, m)) s.z2.push_back(g.mean);
  for (const auto& g : encode_z1(s.segments, s.z2, m)) s.z1.push_back(g.mean);
  return s;
}

inline Utterance assemble(const Utterance& like, const std::vector<std::vector<GaussianParams>>& decoded) {
  Utterance out;
  out.speaker_id = like.speaker_id;
  out.utterance_id = like.utterance_id;
  out.frame_hop = like.frame_hop;
  const Index L = static_cast<Index>(decoded.at(0).size());
  out.frames.resize(L * static_cast<Index>(decoded.size()), decoded[0][0].dim());
  for (std::size_t n = 0; n < decoded.size(); ++n)
    out.frames.middleRows(static_cast<Index>(n) * L, L) = frame_means(decoded[n]);
  return out;
}

}  // namespace detail

// Decoder means from (z1, z2) posterior means of every non-overlapping
// segment, concatenated. Trailing frames that do not fill a segment are dropped.
inline Utterance reconstruct_utterance(const Utterance& utt, const ModelParams& m) {
  const auto src = detail::encode_source(utt, m);
  return detail::assemble(utt, decode(src.z1, src.z2, m));
}

// z1 comes from the source content pathway with the original z2; only the
// decoder sees the shifted z2.
inline Utterance convert_utterance(const ConversionRequest& req, const ModelParams& m) {
  require(req.target_mu2.size() == m.z_dim(), "convert: target mu2 dimension mismatch");
  require(req.target_mu2.allFinite(), "convert: target mu2 must be finite");
  const auto src = detail::encode_source(req.source, m);
  const Vector mu_src = req.source_mu2 ? *req.source_mu2 : infer_mu2_from_means(src.z2, m.hyper.sigma_z2);
  std::vector<Vector> shifted;
  for (const Vector& z2 : src.z2) shifted.push_back(convert_z2(z2, mu_src, req.target_mu2));
  return detail::assemble(req.source, decode(src.z1, shifted, m));
}

inline Vector infer_mu2(const Utterance& utt, const ModelParams& m) {
  const auto segs = segment_utterance(utt, m.seg_len, m.seg_len);
  return infer_mu2(segs, m);
}

// ---- Griffin-Lim -------------------------------------------------------------

namespace detail {

// Full-spectrum (Hermitian) squared Frobenius distance between |X| and M.
inline double magnitude_mismatch(const ComplexFrames& X, const std::vector<std::vector<double>>& M) {
  double acc = 0.0;
  for (std::size_t t = 0; t < X.size(); ++t) {
    const std::size_t K = X[t].size();
    for (std::size_t k = 0; k < K; ++k) {
      const double d = std::abs(X[t][k]) - M[t][k];
      acc += (k == 0 || k + 1 == K ? 1.0 : 2.0) * d * d;
    }
  }
  return acc;
}

// Least-squares inverse STFT: weighted overlap-add divided by the summed
// squared window.
inline std::vector<double> istft(const ComplexFrames& X, const StftConfig& cfg, std::size_t length) {
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const std::vector<double> w = hann_window(win);
  RealFft fft(cfg.fft_size());
  std::vector<double> num(length, 0.0), den(length, 0.0);
  for (std::size_t t = 0; t < X.size(); ++t) {
    const std::vector<double> y = fft.inverse(X[t]);
    for (int i = 0; i < win; ++i) {
      const std::size_t n = t * hop + i;
      num[n] += w[i] * y[i];
      den[n] += w[i] * w[i];
    }
  }
  std::vector<double> x(length, 0.0);
  for (std::size_t n = 0; n < length; ++n)
    if (den[n] > 1e-12) x[n] = num[n] / den[n];
  return x;
}

}  // namespace detail

struct GriffinLimTrace {
  // mismatch[k]: spectral-magnitude distance of the estimate after k
  // iterations, relative to |M|. Entry 0 is the random-phase start.
  std::vector<double> mismatch;
};

// Iterative phase reconstruction from exp(log-magnitude). With averaged
// bands, each band's magnitude is spread over its bins.
inline Waveform griffin_lim_invert(const Utterance& spec, const StftConfig& cfg, int iterations = 60,
                                   GriffinLimTrace* trace = nullptr, std::uint64_t phase_seed = 0) {
  if (spec.feat_dim() != cfg.feat_dim())
    throw DataError("griffin_lim: spectrogram has " + std::to_string(spec.feat_dim()) +
                    " bins but the STFT config yields " + std::to_string(cfg.feat_dim()));
  if (std::abs(spec.frame_hop - static_cast<double>(cfg.hop_samples()) / cfg.sample_rate) > 1e-6)
    throw DataError("griffin_lim: frame hop does not match the STFT config");
  require(iterations >= 0, "griffin_lim: iterations must be non-negative");
  require(spec.num_frames() >= 1, "griffin_lim: empty spectrogram");

  const auto edges = band_edges(cfg);
  const int bins = cfg.num_bins();
  const std::size_t T = static_cast<std::size_t>(spec.num_frames());
  std::vector<std::vector<double>> M(T, std::vector<double>(bins, 0.0));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < edges.size(); ++b) {
      const double mag = std::max(std::exp(spec.frames(static_cast<Index>(t), static_cast<Index>(b))) - cfg.floor_eps, 0.0);
      for (int k = edges[b].first; k < edges[b].second; ++k) M[t][k] = mag;
    }
  double norm_m = 0.0;
  for (const auto& row : M)
    for (std::size_t k = 0; k < row.size(); ++k)
      norm_m += (k == 0 || k + 1 == row.size() ? 1.0 : 2.0) * row[k] * row[k];
  norm_m = std::sqrt(norm_m);

  const std::size_t length = (T - 1) * cfg.hop_samples() + cfg.window_samples();
  std::mt19937_64 rng(phase_seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  ComplexFrames Y(T, std::vector<std::complex<double>>(bins));
  for (std::size_t t = 0; t < T; ++t)
    for (int k = 0; k < bins; ++k) Y[t][k] = std::polar(M[t][k], phase(rng));

  std::vector<double> x = detail::istft(Y, cfg, length);
  for (int it = 0; it <= iterations; ++it) {
    if (it == iterations && !trace) break;
    const ComplexFrames X = stft_complex(x, cfg);
    if (trace) {
      const double d = std::sqrt(detail::magnitude_mismatch(X, M));
      trace->mismatch.push_back(norm_m > 0.0 ? d / norm_m : d);
    }
    if (it == iterations) break;
    for (std::size_t t = 0; t < T; ++t)
      for (int k = 0; k < bins; ++k) {
        const double a = std::abs(X[t][k]);
        Y[t][k] = a > 0.0 ? X[t][k] * (M[t][k] / a) : std::complex<double>(M[t][k], 0.0);
      }
    x = detail::istft(Y, cfg, length);
  }
  return {x, cfg.sample_rate};
}

}  // namespace fhvae
