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

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "fhvae/binary_io.hpp"
#include "fhvae/synthdata.hpp"

namespace fhvae {
namespace {

namespace fs = std::filesystem;

SynthConfig tiny(double noise = 0.0) {
  SynthConfig c;
  c.n_speakers = 2;
  c.utts_per_speaker = 2;
  c.units_per_utt = 2;
  c.n_content_units = 2;
  c.noise_std = noise;
  c.seed = 5;
  return c;
}

TEST(Generate, TinyCorpusShapesAndReconstruction) {
  const Corpus c = generate_corpus(tiny());
  ASSERT_EQ(c.utterances.size(), 4u);
  ASSERT_EQ(c.manifest.utterances.size(), 4u);
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const Utterance& u = c.utterances[i];
    const UtteranceLabel& l = c.manifest.utterances[i];
    EXPECT_EQ(u.num_frames(), 40);
    EXPECT_EQ(u.feat_dim(), 40);
    EXPECT_EQ(u.utterance_id, l.utterance_id);
    EXPECT_EQ(u.speaker_id, l.speaker_id);
    // Noise-free frames are exactly envelope + pattern, frame by frame.
    const Vector& env = c.manifest.speaker(l.speaker_id).envelope;
    for (Index t = 0; t < u.num_frames(); ++t)
      for (Index f = 0; f < u.feat_dim(); ++f)
        EXPECT_EQ(u.frames(t, f), c.units[l.content_ids[t / 20]].pattern(t % 20, f) + env(f));
  }
}

TEST(Generate, Deterministic) {
  SynthConfig cfg;
  const Corpus a = generate_corpus(cfg);
  const Corpus b = generate_corpus(cfg);
  ASSERT_EQ(a.utterances.size(), 80u);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) EXPECT_EQ(a.utterances[i].frames, b.utterances[i].frames);
  EXPECT_EQ(format_manifest(a), format_manifest(b));
  cfg.seed = 2;
  EXPECT_NE(generate_corpus(cfg).utterances[0].frames, a.utterances[0].frames);
}

TEST(Generate, UtteranceMeansDifferByEnvelopeDifference) {
  const Corpus c = generate_corpus(tiny());
  const Vector m0 = c.utterances[0].frames.colwise().mean().transpose();
  const Vector m2 = c.utterances[2].frames.colwise().mean().transpose();
  const Vector d = c.manifest.speaker("s00").envelope - c.manifest.speaker("s01").envelope;
  EXPECT_LE((m0 - m2 - d).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generate, ProfileAndUnitInvariants) {
  SynthConfig cfg;
  const Corpus c = generate_corpus(cfg);
  ASSERT_EQ(c.manifest.speakers.size(), 8u);
  for (std::size_t i = 0; i < c.manifest.speakers.size(); ++i) {
    const auto& s = c.manifest.speakers[i];
    EXPECT_LE(s.envelope.cwiseAbs().maxCoeff(), 3.0);
    EXPECT_DOUBLE_EQ(s.pitch_like_offset, s.envelope.mean());
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_GE((s.envelope - c.manifest.speakers[j].envelope).norm(), cfg.min_sep);
  }
  ASSERT_EQ(c.units.size(), 8u);
  for (const auto& u : c.units) {
    EXPECT_EQ(u.pattern.rows(), 20);
    EXPECT_NEAR(u.pattern.mean(), 0.0, 1e-12);
    EXPECT_LE(u.pattern.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  }
  for (const auto& l : c.manifest.utterances) {
    EXPECT_EQ(l.content_ids.size(), 6u);
    for (int id : l.content_ids) {
      EXPECT_GE(id, 0);
      EXPECT_LT(id, 8);
    }
  }
}

TEST(Generate, ContentIsSpeakerIndependent) {
  const Corpus c = generate_corpus(tiny());
  // Subtracting the envelope leaves the same deviation for a shared content id.
  for (std::size_t i = 0; i < c.utterances.size(); ++i)
    for (std::size_t j = 0; j < c.utterances.size(); ++j) {
      const auto& li = c.manifest.utterances[i];
      const auto& lj = c.manifest.utterances[j];
      if (li.speaker_id == lj.speaker_id) continue;
      for (std::size_t a = 0; a < li.content_ids.size(); ++a)
        for (std::size_t b = 0; b < lj.content_ids.size(); ++b) {
          if (li.content_ids[a] != lj.content_ids[b]) continue;
          const Matrix di = c.utterances[i].frames.middleRows(20 * a, 20).rowwise() -
                            c.manifest.speaker(li.speaker_id).envelope.transpose();
          const Matrix dj = c.utterances[j].frames.middleRows(20 * b, 20).rowwise() -
                            c.manifest.speaker(lj.speaker_id).envelope.transpose();
          EXPECT_LE((di - dj).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Generate, OracleSeparabilityWithoutNoise) {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  const Corpus c = generate_corpus(cfg);
  std::map<std::string, Vector> centroid;
  std::map<std::string, int> count;
  for (const auto& u : c.utterances) {
    const Vector m = u.frames.colwise().mean().transpose();
    if (!centroid.contains(u.speaker_id)) centroid[u.speaker_id] = Vector::Zero(m.size());
    centroid[u.speaker_id] += m;
    ++count[u.speaker_id];
  }
  for (auto& [k, v] : centroid) v /= count[k];
  for (const auto& u : c.utterances) {
    const Vector m = u.frames.colwise().mean().transpose();
    std::string best;
    double bd = 1e300;
    for (const auto& [k, v] : centroid)
      if ((m - v).norm() < bd) {
        bd = (m - v).norm();
        best = k;
      }
    EXPECT_EQ(best, u.speaker_id);
  }
}

TEST(Generate, NoiseHasRequestedScale) {
  SynthConfig cfg = tiny(0.3);
  const Corpus noisy = generate_corpus(cfg);
  double ss = 0.0;
  Index n = 0;
  for (std::size_t i = 0; i < noisy.utterances.size(); ++i) {
    const auto& l = noisy.manifest.utterances[i];
    const Matrix clean = render_clean_frames(noisy.manifest.speaker(l.speaker_id), noisy.units, l.content_ids);
    ss += (noisy.utterances[i].frames - clean).squaredNorm();
    n += clean.size();
  }
  EXPECT_NEAR(std::sqrt(ss / n), 0.3, 0.03);
}

TEST(Generate, PreconditionsRaise) {
  auto bad = tiny();
  bad.n_speakers = 1;
  EXPECT_THROW(generate_corpus(bad), DataError);
  bad = tiny();
  bad.utts_per_speaker = 1;
  EXPECT_THROW(generate_corpus(bad), DataError);
  bad = tiny();
  bad.n_content_units = 1;
  EXPECT_THROW(generate_corpus(bad), DataError);
  bad = tiny();
  bad.units_per_utt = 1;
  EXPECT_THROW(generate_corpus(bad), DataError);
  bad = tiny();
  bad.noise_std = -1;
  EXPECT_THROW(generate_corpus(bad), DataError);
  bad = tiny();
  bad.min_sep = 1e6;
  EXPECT_THROW(generate_corpus(bad), DataError);
}

TEST(Split, HoldsOutLastUtterancesPerSpeaker) {
  const Corpus c = generate_corpus(SynthConfig{});
  const CorpusSplit s = split_by_speaker(c, 3);
  EXPECT_EQ(s.train.size(), 56u);
  EXPECT_EQ(s.test.size(), 24u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (std::size_t i : s.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 80u);
  for (std::size_t i : s.test) EXPECT_GE(i % 10, 7u);
  EXPECT_TRUE(split_by_speaker(c, 0).test.empty());
  EXPECT_THROW(split_by_speaker(c, 9), DataError);
  EXPECT_THROW(split_by_speaker(c, -1), DataError);
}

TEST(Disk, RoundTripIsExact) {
  const Corpus c = generate_corpus(tiny(0.1));
  const fs::path dir = fs::temp_directory_path() / "fhvae_synth_rt";
  fs::remove_all(dir);
  write_corpus(c, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
  const Corpus back = read_corpus(dir);
  EXPECT_EQ(back.manifest.rng_seed, 5u);
  ASSERT_EQ(back.utterances.size(), c.utterances.size());
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    EXPECT_EQ(back.utterances[i].frames, c.utterances[i].frames);
    EXPECT_EQ(back.utterances[i].speaker_id, c.utterances[i].speaker_id);
    EXPECT_EQ(back.manifest.utterances[i].content_ids, c.manifest.utterances[i].content_ids);
  }
  for (std::size_t s = 0; s < c.manifest.speakers.size(); ++s)
    EXPECT_EQ(back.manifest.speakers[s].envelope, c.manifest.speakers[s].envelope);
  for (std::size_t u = 0; u < c.units.size(); ++u) EXPECT_EQ(back.units[u].pattern, c.units[u].pattern);
  EXPECT_EQ(format_manifest(back), format_manifest(c));

  // Writing the same corpus twice yields identical bytes.
  const fs::path dir2 = fs::temp_directory_path() / "fhvae_synth_rt2";
  fs::remove_all(dir2);
  write_corpus(generate_corpus(tiny(0.1)), dir2);
  EXPECT_EQ(io::git_blob_hash_file(dir / "manifest.txt"), io::git_blob_hash_file(dir2 / "manifest.txt"));
  EXPECT_EQ(io::git_blob_hash_file(dir / "feats/s00_u00.fhvu"), io::git_blob_hash_file(dir2 / "feats/s00_u00.fhvu"));
}

TEST(Disk, ManifestLineFormats) {
  const std::string text = format_manifest(generate_corpus(tiny()));
  EXPECT_NE(text.find("\nspk s00 "), std::string::npos);
  EXPECT_NE(text.find("\nutt s00_u00 s00 "), std::string::npos);
  EXPECT_THROW(parse_manifest("bogus line\n", "m"), DataError);
  EXPECT_THROW(parse_manifest("spk s00 1.0 x\n", "m"), DataError);
  EXPECT_THROW(parse_manifest("unit 1 20 0.5\n", "m"), DataError);
  EXPECT_THROW(read_corpus(fs::temp_directory_path() / "fhvae_no_such_corpus"), DataError);
}

}  // namespace
}  // namespace fhvae
