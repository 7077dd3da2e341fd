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

// Synthetic corpus with known factors. A speaker is a per-bin log-gain
// envelope that is constant in time; content is a 20-frame pattern whose
// per-bin time mean is zero. Frame (t, f) of an utterance is
//
//     envelope[f] + pattern[unit(t / 20)](t mod 20, f) + N(0, noise_std^2)
//
// so the utterance time-mean recovers the envelope exactly when noise is off.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fhvae/error.hpp"
#include "fhvae/features.hpp"

namespace fhvae {

using Vector = Eigen::VectorXd;

struct SpeakerProfile {
  std::string speaker_id;
  Vector envelope;                // F log-gains in [-3, 3]
  double pitch_like_offset = 0.0; // mean level of the envelope
};

struct ContentUnit {
  int content_id = 0;
  Matrix pattern;  // 20 x F, zero time-mean in every bin
};

struct UtteranceLabel {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<int> content_ids;
};

struct CorpusManifest {
  std::vector<SpeakerProfile> speakers;
  std::vector<UtteranceLabel> utterances;
  std::uint64_t rng_seed = 0;

  const SpeakerProfile& speaker(const std::string& id) const {
    for (const auto& s : speakers)
      if (s.speaker_id == id) return s;
    throw DataError("unknown speaker '" + id + "'");
  }
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<ContentUnit> units;
  std::vector<Utterance> utterances;  // same order as manifest.utterances

  std::size_t index_of(const std::string& utterance_id) const {
    for (std::size_t i = 0; i < utterances.size(); ++i)
      if (utterances[i].utterance_id == utterance_id) return i;
    throw DataError("unknown utterance '" + utterance_id + "'");
  }
};

struct SynthConfig {
  int n_speakers = 8;
  int utts_per_speaker = 10;
  int units_per_utt = 6;
  int n_content_units = 8;
  int feat_dim = 40;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
  double min_sep = 1.0;
  Index unit_length = kDefaultSegmentLength;
};

namespace detail {

inline std::string speaker_name(int s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%02d", s);
  return buf;
}

inline std::string utterance_name(int s, int u) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "s%02d_u%02d", s, u);
  return buf;
}

inline Vector draw_envelope(int F, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> offset_dist(-1.0, 1.0);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp_dist(0.0, 0.6);
  const double offset = offset_dist(rng);
  double amp[3], phase[3];
  for (int k = 0; k < 3; ++k) {
    amp[k] = amp_dist(rng);
    phase[k] = phase_dist(rng);
  }
  Vector env(F);
  for (int f = 0; f < F; ++f) {
    const double x = F > 1 ? static_cast<double>(f) / (F - 1) : 0.0;
    double v = offset;
    for (int k = 0; k < 3; ++k) v += amp[k] * std::cos(std::numbers::pi * (k + 1) * x + phase[k]);
    env(f) = std::clamp(v, -3.0, 3.0);
  }
  return env;
}

inline Matrix draw_pattern(Index length, int F, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix raw(length, F);
  for (Index k = 0; k < raw.size(); ++k) raw.data()[k] = normal(rng);
  // [1 2 1] / 4 smoothing along frequency, then along time.
  Matrix smooth = raw;
  for (Index t = 0; t < length; ++t)
    for (int f = 0; f < F; ++f) {
      const double lo = raw(t, std::max(f - 1, 0));
      const double hi = raw(t, std::min(f + 1, F - 1));
      smooth(t, f) = 0.25 * lo + 0.5 * raw(t, f) + 0.25 * hi;
    }
  Matrix out = smooth;
  for (Index t = 0; t < length; ++t) {
    const Index lo = std::max<Index>(t - 1, 0);
    const Index hi = std::min<Index>(t + 1, length - 1);
    out.row(t) = 0.25 * smooth.row(lo) + 0.5 * smooth.row(t) + 0.25 * smooth.row(hi);
  }
  out.rowwise() -= out.colwise().mean();
  const double rms = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
  if (rms > 0.0) out /= rms;
  return out;
}

}  // namespace detail

// Noise-free frames of one labelled utterance.
inline Matrix render_clean_frames(const SpeakerProfile& speaker, const std::vector<ContentUnit>& units,
                                  const std::vector<int>& content_ids) {
  const Index L = units.at(0).pattern.rows();
  const Index F = speaker.envelope.size();
  Matrix frames(L * static_cast<Index>(content_ids.size()), F);
  for (std::size_t u = 0; u < content_ids.size(); ++u) {
    const Matrix& p = units.at(content_ids[u]).pattern;
    frames.middleRows(static_cast<Index>(u) * L, L) =
        p.rowwise() + speaker.envelope.transpose();
  }
  return frames;
}

inline Corpus generate_corpus(const SynthConfig& cfg) {
  require(cfg.n_speakers >= 2, "generate_corpus: need at least 2 speakers");
  require(cfg.utts_per_speaker >= 2, "generate_corpus: need at least 2 utterances per speaker");
  require(cfg.n_content_units >= 2, "generate_corpus: need at least 2 content units");
  require(cfg.units_per_utt >= 2, "generate_corpus: need at least 2 content units per utterance");
  require(cfg.feat_dim >= 1, "generate_corpus: feature dimension must be positive");
  require(cfg.noise_std >= 0.0, "generate_corpus: noise_std must be non-negative");

  std::mt19937_64 rng(cfg.seed);
  Corpus corpus;
  corpus.manifest.rng_seed = cfg.seed;

  constexpr int kMaxAttempts = 1000;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    SpeakerProfile prof;
    prof.speaker_id = detail::speaker_name(s);
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      prof.envelope = detail::draw_envelope(cfg.feat_dim, rng);
      ok = true;
      for (const auto& other : corpus.manifest.speakers)
        if ((other.envelope - prof.envelope).norm() < cfg.min_sep) ok = false;
    }
    require(ok, "generate_corpus: could not place speaker envelopes min_sep apart");
    prof.pitch_like_offset = prof.envelope.mean();
    corpus.manifest.speakers.push_back(std::move(prof));
  }

  for (int c = 0; c < cfg.n_content_units; ++c)
    corpus.units.push_back({c, detail::draw_pattern(cfg.unit_length, cfg.feat_dim, rng)});

  std::uniform_int_distribution<int> unit_dist(0, cfg.n_content_units - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int s = 0; s < cfg.n_speakers; ++s) {
    const SpeakerProfile& prof = corpus.manifest.speakers[s];
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      UtteranceLabel label;
      label.utterance_id = detail::utterance_name(s, u);
      label.speaker_id = prof.speaker_id;
      for (int k = 0; k < cfg.units_per_utt; ++k) label.content_ids.push_back(unit_dist(rng));
      Utterance utt;
      utt.speaker_id = label.speaker_id;
      utt.utterance_id = label.utterance_id;
      utt.frames = render_clean_frames(prof, corpus.units, label.content_ids);
      if (cfg.noise_std > 0.0)
        for (Index k = 0; k < utt.frames.size(); ++k)
          utt.frames.data()[k] += cfg.noise_std * noise(rng);
      corpus.manifest.utterances.push_back(std::move(label));
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

// Per speaker, the last `test_per_speaker` utterances (in manifest order) are held out.
struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline CorpusSplit split_by_speaker(const Corpus& corpus, int test_per_speaker) {
  require(test_per_speaker >= 0, "split: test utterances per speaker must be non-negative");
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const std::string& spk = corpus.utterances[i].speaker_id;
    if (!by_speaker.contains(spk)) order.push_back(spk);
    by_speaker[spk].push_back(i);
  }
  CorpusSplit split;
  for (const auto& spk : order) {
    const auto& idx = by_speaker[spk];
    const std::size_t n_test = std::min<std::size_t>(test_per_speaker, idx.size());
    require(idx.size() - n_test >= 2,
            "split: speaker '" + spk + "' keeps fewer than 2 training utterances");
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k + n_test < idx.size() ? split.train : split.test).push_back(idx[k]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---- on-disk layout ----------------------------------------------------------
//   <dir>/manifest.txt
//   <dir>/feats/<utterance_id>.fhvu

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& token, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw DataError(where + ": bad number '" + token + "'");
  return v;
}

}  // namespace detail

inline std::string format_manifest(const Corpus& corpus) {
  std::ostringstream os;
  os << "# synthetic corpus\n";
  os << "seed " << corpus.manifest.rng_seed << "\n";
  for (const auto& s : corpus.manifest.speakers) {
    os << "spk " << s.speaker_id;
    for (Index f = 0; f < s.envelope.size(); ++f) os << ' ' << detail::format_double(s.envelope(f));
    os << "\n";
  }
  for (const auto& u : corpus.units) {
    os << "unit " << u.content_id << ' ' << u.pattern.rows();
    for (Index t = 0; t < u.pattern.rows(); ++t)
      for (Index f = 0; f < u.pattern.cols(); ++f)
        os << ' ' << detail::format_double(u.pattern(t, f));
    os << "\n";
  }
  for (const auto& u : corpus.manifest.utterances) {
    os << "utt " << u.utterance_id << ' ' << u.speaker_id << ' ';
    for (std::size_t k = 0; k < u.content_ids.size(); ++k)
      os << (k ? "," : "") << u.content_ids[k];
    os << "\n";
  }
  return os.str();
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "feats");
  const std::string text = format_manifest(corpus);
  io::write_file(dir / "manifest.txt", std::vector<char>(text.begin(), text.end()));
  for (const auto& utt : corpus.utterances)
    write_utterance_file(dir / "feats" / (utt.utterance_id + ".fhvu"), utt);
}

// Parses manifest text; content patterns and envelopes come back exactly.
inline Corpus parse_manifest(const std::string& text, const std::string& where) {
  Corpus corpus;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string at = where + ":" + std::to_string(lineno);
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "seed") {
      ls >> corpus.manifest.rng_seed;
    } else if (kind == "spk") {
      SpeakerProfile s;
      ls >> s.speaker_id;
      std::vector<double> vals;
      std::string tok;
      while (ls >> tok) vals.push_back(detail::parse_double(tok, at));
      if (vals.empty()) throw DataError(at + ": speaker without envelope");
      s.envelope = Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size()));
      s.pitch_like_offset = s.envelope.mean();
      corpus.manifest.speakers.push_back(std::move(s));
    } else if (kind == "unit") {
      ContentUnit u;
      Index rows = 0;
      ls >> u.content_id >> rows;
      std::vector<double> vals;
      std::string tok;
      while (ls >> tok) vals.push_back(detail::parse_double(tok, at));
      if (rows <= 0 || vals.size() % rows != 0) throw DataError(at + ": malformed content unit");
      const Index cols = static_cast<Index>(vals.size()) / rows;
      u.pattern.resize(rows, cols);
      for (Index t = 0; t < rows; ++t)
        for (Index f = 0; f < cols; ++f) u.pattern(t, f) = vals[t * cols + f];
      if (u.content_id != static_cast<int>(corpus.units.size()))
        throw DataError(at + ": content units must be listed in id order");
      corpus.units.push_back(std::move(u));
    } else if (kind == "utt") {
      UtteranceLabel u;
      std::string ids;
      ls >> u.utterance_id >> u.speaker_id >> ids;
      if (u.speaker_id.empty()) throw DataError(at + ": malformed utterance line");
      std::istringstream is(ids);
      std::string tok;
      while (std::getline(is, tok, ','))
        if (!tok.empty()) u.content_ids.push_back(static_cast<int>(detail::parse_double(tok, at)));
      corpus.manifest.utterances.push_back(std::move(u));
    } else {
      throw DataError(at + ": unknown record '" + kind + "'");
    }
  }
  return corpus;
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest_path))
    throw DataError("corpus manifest not found: " + manifest_path.string());
  const std::vector<char> bytes = io::read_file(manifest_path);
  Corpus corpus = parse_manifest(std::string(bytes.begin(), bytes.end()), manifest_path.string());
  for (const auto& label : corpus.manifest.utterances) {
    Utterance utt = read_utterance_file(dir / "feats" / (label.utterance_id + ".fhvu"));
    utt.utterance_id = label.utterance_id;
    utt.speaker_id = label.speaker_id;
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

}  // namespace fhvae
