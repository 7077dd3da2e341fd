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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fhvae/convert.hpp"
#include "fhvae/error.hpp"
#include "fhvae/features.hpp"
#include "fhvae/model.hpp"
#include "fhvae/synthdata.hpp"

namespace fhvae {

struct Trial {
  Vector embedding_a;
  Vector embedding_b;
  bool same = false;
};

struct EvalReport {
  double eer = 0.0;
  double speaker_id_acc = 0.0;
  double content_probe_acc = 0.0;
  double silhouette = 0.0;

  static constexpr const char* kCsvHeader = "eer,speaker_id_acc,content_probe_acc,silhouette";

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << eer << ',' << speaker_id_acc << ',' << content_probe_acc << ',' << silhouette;
    return os.str();
  }

  std::string json() const {
    std::ostringstream os;
    os.precision(10);
    os << "{\n  \"eer\": " << eer << ",\n  \"speaker_id_acc\": " << speaker_id_acc
       << ",\n  \"content_probe_acc\": " << content_probe_acc << ",\n  \"silhouette\": " << silhouette
       << "\n}\n";
    return os.str();
  }
};

// ---- embeddings -----------------------------------------------------------------

inline std::vector<Segment> evaluation_segments(const Utterance& utt, const ModelParams& m) {
  return segment_utterance(utt, m.seg_len, m.seg_len);
}

// Average of q(z2 | x) posterior means over non-overlapping segments.
inline Vector extract_speaker_embedding(const Utterance& utt, const ModelParams& m) {
  const auto segs = evaluation_segments(utt, m);
  Vector acc = Vector::Zero(m.z_dim());
  for (const auto& g : encode_z2(segs, m)) acc += g.mean;
  return acc / static_cast<double>(segs.size());
}

// [mean; variance] of q(z1 | x, z2 posterior mean), one per segment.
inline std::vector<Vector> extract_content_embeddings(std::span<const Segment> segs, const ModelParams& m) {
  std::vector<Vector> z2;
  for (const auto& g : encode_z2(segs, m)) z2.push_back(g.mean);
  std::vector<Vector> out;
  for (const auto& g : encode_z1(segs, z2, m)) {
    Vector e(2 * g.dim());
    e << g.mean, g.variance();
    out.push_back(std::move(e));
  }
  return out;
}

inline Vector extract_content_embedding(const Segment& seg, const ModelParams& m) {
  return extract_content_embeddings(std::span<const Segment>(&seg, 1), m).front();
}

// ---- verification -----------------------------------------------------------------

inline double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DataError("cosine: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// EER from raw scores, accepting when score >= threshold. The operating
// points are the distinct scores plus +inf; the EER is where the two
// piecewise-linear error curves cross between adjacent points.
inline double eer_from_scores(std::vector<double> target, std::vector<double> nontarget) {
  if (target.empty() || nontarget.empty())
    throw DataError("eer: need at least one same-speaker and one different-speaker trial");
  std::sort(target.begin(), target.end());
  std::sort(nontarget.begin(), nontarget.end());
  std::vector<double> thresholds(target);
  thresholds.insert(thresholds.end(), nontarget.begin(), nontarget.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(target.size());
  const double nn = static_cast<double>(nontarget.size());
  double prev_far = 1.0, prev_frr = 0.0;
  for (double th : thresholds) {
    const double frr =
        static_cast<double>(std::lower_bound(target.begin(), target.end(), th) - target.begin()) / nt;
    const double far = static_cast<double>(nontarget.end() -
                                           std::lower_bound(nontarget.begin(), nontarget.end(), th)) /
                       nn;
    const double d = far - frr;
    if (d <= 0.0) {
      if (d == 0.0) return far;
      const double prev_d = prev_far - prev_frr;
      const double t = prev_d / (prev_d - d);
      return prev_far + t * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  return 0.0;  // unreachable: FRR reaches 1 at +inf
}

inline double cosine_eer(const std::vector<Trial>& trials) {
  std::vector<double> target, nontarget;
  for (const Trial& t : trials) {
    if (t.embedding_a.size() != t.embedding_b.size() || !t.embedding_a.allFinite() ||
        !t.embedding_b.allFinite())
      throw DataError("cosine_eer: trial embeddings must be finite and equally sized");
    (t.same ? target : nontarget).push_back(cosine_similarity(t.embedding_a, t.embedding_b));
  }
  return eer_from_scores(std::move(target), std::move(nontarget));
}

// All same-speaker pairs plus an equally sized seeded sample of
// different-speaker pairs.
inline std::vector<Trial> make_trials(const std::vector<Vector>& embeddings,
                                      const std::vector<std::string>& labels, std::uint64_t seed) {
  require(embeddings.size() == labels.size(), "make_trials: one label per embedding");
  std::vector<std::pair<std::size_t, std::size_t>> same, diff;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings.size(); ++j)
      (labels[i] == labels[j] ? same : diff).emplace_back(i, j);
  std::mt19937_64 rng(seed);
  std::shuffle(diff.begin(), diff.end(), rng);
  diff.resize(std::min(diff.size(), same.size()));
  std::vector<Trial> trials;
  for (auto [i, j] : same) trials.push_back({embeddings[i], embeddings[j], true});
  for (auto [i, j] : diff) trials.push_back({embeddings[i], embeddings[j], false});
  return trials;
}

// ---- probes -----------------------------------------------------------------------

enum class Distance { kCosine, kEuclidean };

inline double distance(const Vector& a, const Vector& b, Distance metric) {
  return metric == Distance::kCosine ? 1.0 - cosine_similarity(a, b) : (a - b).norm();
}

template <class Label>
std::map<Label, Vector> class_centroids(const std::vector<Vector>& emb, const std::vector<Label>& labels) {
  require(emb.size() == labels.size(), "centroids: one label per embedding");
  require(!emb.empty(), "centroids: empty class set");
  std::map<Label, Vector> sums;
  std::map<Label, std::size_t> counts;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    auto [it, inserted] = sums.try_emplace(labels[i], Vector::Zero(emb[i].size()));
    it->second += emb[i];
    ++counts[labels[i]];
  }
  for (auto& [label, v] : sums) v /= static_cast<double>(counts[label]);
  return sums;
}

template <class Label>
std::vector<Label> nearest_centroid_predict(const std::map<Label, Vector>& centroids,
                                            const std::vector<Vector>& test, Distance metric) {
  std::vector<Label> out;
  for (const Vector& x : test) {
    double best = std::numeric_limits<double>::infinity();
    const Label* best_label = nullptr;
    for (const auto& [label, c] : centroids) {
      const double d = distance(x, c, metric);
      if (d < best) {
        best = d;
        best_label = &label;
      }
    }
    out.push_back(*best_label);
  }
  return out;
}

template <class Label>
double nearest_centroid_accuracy(const std::vector<Vector>& train, const std::vector<Label>& train_labels,
                                 const std::vector<Vector>& test, const std::vector<Label>& test_labels,
                                 Distance metric) {
  require(test.size() == test_labels.size(), "nearest_centroid: one label per test embedding");
  require(!test.empty(), "nearest_centroid: no test embeddings");
  const auto centroids = class_centroids(train, train_labels);
  for (const Label& l : test_labels)
    require(centroids.contains(l), "nearest_centroid: test label has no training examples");
  const auto pred = nearest_centroid_predict(centroids, test, metric);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// Speaker identification by cosine distance to per-speaker centroids.
inline double nearest_centroid_speaker_id(const std::vector<Vector>& train,
                                          const std::vector<std::string>& train_labels,
                                          const std::vector<Vector>& test,
                                          const std::vector<std::string>& test_labels) {
  return nearest_centroid_accuracy(train, train_labels, test, test_labels, Distance::kCosine);
}

// Content recoverability: Euclidean nearest centroid over content ids.
inline double content_probe(const std::vector<Vector>& train, const std::vector<int>& train_labels,
                            const std::vector<Vector>& test, const std::vector<int>& test_labels) {
  return nearest_centroid_accuracy(train, train_labels, test, test_labels, Distance::kEuclidean);
}

// Mean silhouette with Euclidean distance. A point whose intra and nearest
// inter-class distances are both zero scores 0.
template <class Label>
double silhouette(const std::vector<Vector>& emb, const std::vector<Label>& labels) {
  require(emb.size() == labels.size(), "silhouette: one label per embedding");
  std::map<Label, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  require(members.size() >= 2, "silhouette: need at least two classes");
  for (const auto& [label, idx] : members)
    require(idx.size() >= 2, "silhouette: every class needs at least two points");
  const std::size_t n = emb.size();
  Matrix dist(static_cast<Index>(n), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist(i, j) = (emb[i] - emb[j]).norm();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0, b = std::numeric_limits<double>::infinity();
    for (const auto& [label, idx] : members) {
      double s = 0.0;
      for (std::size_t j : idx) s += dist(i, j);
      if (label == labels[i]) {
        a = s / static_cast<double>(idx.size() - 1);
      } else {
        b = std::min(b, s / static_cast<double>(idx.size()));
      }
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

// ---- end-to-end protocol ----------------------------------------------------------

struct EvalOptions {
  std::uint64_t trial_seed = 7;
};

// Speaker metrics on held-out utterances (centroids from the training
// split); content probe fit on training-split segments, scored on test ones.
inline EvalReport evaluate(const ModelParams& m, const Corpus& corpus, const CorpusSplit& split,
                           const EvalOptions& opts = {}) {
  require(!split.test.empty(), "evaluate: empty test split");
  require(corpus.manifest.utterances.size() == corpus.utterances.size(),
          "evaluate: corpus manifest and utterances disagree");
  std::vector<Vector> train_emb, test_emb;
  std::vector<std::string> train_spk, test_spk;
  std::vector<Vector> train_content, test_content;
  std::vector<int> train_cid, test_cid;
  const auto collect = [&](std::size_t idx, std::vector<Vector>& emb, std::vector<std::string>& spk,
                           std::vector<Vector>& content, std::vector<int>& cid) {
    const Utterance& utt = corpus.utterances[idx];
    const auto segs = evaluation_segments(utt, m);
    Vector acc = Vector::Zero(m.z_dim());
    std::vector<Vector> z2;
    for (const auto& g : encode_z2(segs, m)) {
      acc += g.mean;
      z2.push_back(g.mean);
    }
    emb.push_back(acc / static_cast<double>(segs.size()));
    spk.push_back(utt.speaker_id);
    const auto& labels = corpus.manifest.utterances[idx].content_ids;
    const auto z1 = encode_z1(segs, z2, m);
    for (std::size_t n = 0; n < segs.size() && n < labels.size(); ++n) {
      Vector e(2 * m.z_dim());
      e << z1[n].mean, z1[n].variance();
      content.push_back(std::move(e));
      cid.push_back(labels[n]);
    }
  };
  for (std::size_t idx : split.train) collect(idx, train_emb, train_spk, train_content, train_cid);
  for (std::size_t idx : split.test) collect(idx, test_emb, test_spk, test_content, test_cid);

  EvalReport r;
  r.eer = cosine_eer(make_trials(test_emb, test_spk, opts.trial_seed));
  r.speaker_id_acc = nearest_centroid_speaker_id(train_emb, train_spk, test_emb, test_spk);
  r.silhouette = silhouette(test_emb, test_spk);
  r.content_probe_acc = content_probe(train_content, train_cid, test_content, test_cid);
  return r;
}

struct ConversionDirection {
  std::size_t pairs = 0;
  std::size_t closer_to_target = 0;
  double fraction() const { return pairs ? static_cast<double>(closer_to_target) / pairs : 0.0; }
};

// Converts every held-out utterance to every other held-out speaker's
// utterances and checks whether the converted time-mean spectrum sits
// closer to the target speaker's true envelope than to the source's.
inline ConversionDirection conversion_direction(const ModelParams& m, const Corpus& corpus,
                                                const CorpusSplit& split) {
  std::vector<Vector> target_mu2;
  for (std::size_t idx : split.test) target_mu2.push_back(infer_mu2(corpus.utterances[idx], m));
  ConversionDirection out;
  for (std::size_t s = 0; s < split.test.size(); ++s) {
    const Utterance& src = corpus.utterances[split.test[s]];
    const Vector& src_env = corpus.manifest.speaker(src.speaker_id).envelope;
    for (std::size_t t = 0; t < split.test.size(); ++t) {
      const Utterance& tar = corpus.utterances[split.test[t]];
      if (tar.speaker_id == src.speaker_id) continue;
      const Vector& tar_env = corpus.manifest.speaker(tar.speaker_id).envelope;
      const Utterance conv = convert_utterance({src, target_mu2[t], std::nullopt}, m);
      const Vector env = conv.frames.colwise().mean().transpose();
      ++out.pairs;
      if ((env - tar_env).norm() < (env - src_env).norm()) ++out.closer_to_target;
    }
  }
  return out;
}

}  // namespace fhvae
