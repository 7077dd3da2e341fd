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

#include <algorithm>
#include <cmath>
#include <random>

#include "fhvae/eval.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae {
namespace {

// Smallest max(FAR, FRR) over every threshold, with an independent
// count of errors per threshold.
double brute_force_eer(const std::vector<double>& target, const std::vector<double>& nontarget) {
  std::vector<double> thresholds(target);
  thresholds.insert(thresholds.end(), nontarget.begin(), nontarget.end());
  thresholds.push_back(1e300);
  double best = 1.0;
  for (double th : thresholds) {
    int fr = 0, fa = 0;
    for (double s : target) fr += s < th;
    for (double s : nontarget) fa += s >= th;
    const double frr = static_cast<double>(fr) / target.size();
    const double far = static_cast<double>(fa) / nontarget.size();
    best = std::min(best, std::max(frr, far));
  }
  return best;
}

TEST(Eer, Examples) {
  EXPECT_EQ(eer_from_scores({0.9, 0.8}, {0.1, 0.2}), 0.0);
  EXPECT_EQ(eer_from_scores({0.1, 0.2}, {0.9, 0.8}), 1.0);
  EXPECT_DOUBLE_EQ(eer_from_scores({0.5}, {0.5}), 0.5);
  // One of two targets below one of two non-targets.
  EXPECT_DOUBLE_EQ(eer_from_scores({0.9, 0.3}, {0.4, 0.1}), 0.5);
  EXPECT_THROW(eer_from_scores({}, {0.1}), DataError);
  EXPECT_THROW(eer_from_scores({0.1}, {}), DataError);
}

TEST(Eer, MatchesExhaustiveSweepWithinOneStep) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 300; ++trial) {
    const int nt = 1 + static_cast<int>(rng() % 10), nn = 1 + static_cast<int>(rng() % 10);
    std::vector<double> t, f;
    for (int i = 0; i < nt; ++i) t.push_back(std::round(4.0 * (n(rng) + 0.7)) / 4.0);
    for (int i = 0; i < nn; ++i) f.push_back(std::round(4.0 * n(rng)) / 4.0);
    const double step = 1.0 / std::min(nt, nn);
    EXPECT_LE(std::abs(eer_from_scores(t, f) - brute_force_eer(t, f)), step + 1e-12);
  }
}

TEST(Eer, ShuffledLabelsAreChance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::vector<double> t, f;
  const int N = 4000;
  for (int i = 0; i < N; ++i) (rng() % 2 ? t : f).push_back(n(rng));
  const double sd = std::sqrt(0.25 / std::min(t.size(), f.size()));
  EXPECT_NEAR(eer_from_scores(t, f), 0.5, 3.0 * sd);
}

TEST(Eer, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> t, f;
  for (int i = 0; i < 40; ++i) t.push_back(n(rng) + 1.0);
  for (int i = 0; i < 60; ++i) f.push_back(n(rng));
  const double base = eer_from_scores(t, f);
  EXPECT_GT(base, 0.0);
  const auto map = [](std::vector<double> v, auto fn) {
    for (double& x : v) x = fn(x);
    return v;
  };
  const auto affine = [](double x) { return 3.0 * x - 7.0; };
  const auto cubic = [](double x) { return x * x * x + x; };
  EXPECT_DOUBLE_EQ(eer_from_scores(map(t, affine), map(f, affine)), base);
  EXPECT_DOUBLE_EQ(eer_from_scores(map(t, cubic), map(f, cubic)), base);
}

TEST(Trials, AllSamePairsAndBalancedDifferentPairs) {
  std::vector<Vector> emb;
  std::vector<std::string> labels;
  for (int s = 0; s < 4; ++s)
    for (int u = 0; u < 3; ++u) {
      emb.push_back(Vector::Constant(2, s + 0.1 * u));
      labels.push_back("s" + std::to_string(s));
    }
  const auto trials = make_trials(emb, labels, 7);
  const auto same = std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.same; });
  EXPECT_EQ(same, 4 * 3);
  EXPECT_EQ(trials.size(), 24u);
  const auto again = make_trials(emb, labels, 7);
  for (std::size_t i = 0; i < trials.size(); ++i) EXPECT_EQ(trials[i].embedding_a, again[i].embedding_a);
  Trial bad{Vector::Zero(2), Vector::Zero(3), true};
  EXPECT_THROW(cosine_eer({bad, {Vector::Ones(2), Vector::Ones(2), false}}), DataError);
}

TEST(Trials, CosineEerSeparatesOrthogonalSpeakers) {
  std::vector<Vector> emb;
  std::vector<std::string> labels;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int s = 0; s < 3; ++s)
    for (int u = 0; u < 4; ++u) {
      Vector v = Vector::Zero(3);
      v(s) = 1.0;
      for (Index k = 0; k < 3; ++k) v(k) += 0.05 * n(rng);
      emb.push_back(v);
      labels.push_back(std::to_string(s));
    }
  EXPECT_EQ(cosine_eer(make_trials(emb, labels, 3)), 0.0);
}

Matrix random_rotation(Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix a(d, d);
  for (Index k = 0; k < a.size(); ++k) a.data()[k] = n(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ();
}

struct Clusters {
  std::vector<Vector> points;
  std::vector<std::string> labels;
};

Clusters make_clusters(int classes, int per_class, double spread, std::uint64_t seed, Index d = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Clusters c;
  for (int k = 0; k < classes; ++k) {
    Vector centre(d);
    for (Index j = 0; j < d; ++j) centre(j) = 3.0 * n(rng);
    for (int i = 0; i < per_class; ++i) {
      Vector p = centre;
      for (Index j = 0; j < d; ++j) p(j) += spread * n(rng);
      c.points.push_back(p);
      c.labels.push_back("c" + std::to_string(k));
    }
  }
  return c;
}

TEST(NearestCentroid, AgreesWithBruteForce) {
  const Clusters train = make_clusters(3, 6, 1.5, 5), test = make_clusters(3, 5, 1.5, 5);
  // Centroids by hand.
  std::map<std::string, Vector> centroid;
  std::map<std::string, int> count;
  for (std::size_t i = 0; i < train.points.size(); ++i) {
    auto [it, fresh] = centroid.try_emplace(train.labels[i], Vector::Zero(4));
    it->second += train.points[i];
    ++count[train.labels[i]];
  }
  for (auto& [l, v] : centroid) v /= count[l];
  for (Distance metric : {Distance::kCosine, Distance::kEuclidean}) {
    int correct = 0;
    for (std::size_t i = 0; i < test.points.size(); ++i) {
      std::string best;
      double best_d = 1e300;
      for (const auto& [l, v] : centroid) {
        const Vector& x = test.points[i];
        const double d = metric == Distance::kEuclidean
                             ? std::sqrt((x - v).squaredNorm())
                             : 1.0 - x.dot(v) / std::sqrt(x.squaredNorm() * v.squaredNorm());
        if (d < best_d) {
          best_d = d;
          best = l;
        }
      }
      correct += best == test.labels[i];
    }
    EXPECT_DOUBLE_EQ(nearest_centroid_accuracy(train.points, train.labels, test.points, test.labels, metric),
                     static_cast<double>(correct) / test.points.size());
  }
}

TEST(NearestCentroid, EdgeCases) {
  const Clusters c = make_clusters(3, 4, 0.01, 2);
  EXPECT_EQ(nearest_centroid_speaker_id(c.points, c.labels, c.points, c.labels), 1.0);
  const std::vector<std::string> one(c.points.size(), "x");
  EXPECT_EQ(nearest_centroid_speaker_id(c.points, one, c.points, one), 1.0);
  std::vector<std::string> unknown = c.labels;
  unknown[0] = "nobody";
  EXPECT_THROW(nearest_centroid_speaker_id(c.points, c.labels, c.points, unknown), DataError);
  EXPECT_THROW(nearest_centroid_speaker_id(c.points, c.labels, {}, {}), DataError);
}

TEST(NearestCentroid, RotationAndScaleInvariance) {
  const Clusters train = make_clusters(4, 5, 2.0, 8), test = make_clusters(4, 5, 2.0, 9);
  const Matrix R = random_rotation(4, 3);
  const auto rotate = [&](std::vector<Vector> v, double s) {
    for (Vector& x : v) x = s * (R * x);
    return v;
  };
  const double base = nearest_centroid_speaker_id(train.points, train.labels, test.points, test.labels);
  EXPECT_DOUBLE_EQ(nearest_centroid_speaker_id(rotate(train.points, 1.0), train.labels,
                                               rotate(test.points, 1.0), test.labels),
                   base);
  EXPECT_DOUBLE_EQ(nearest_centroid_speaker_id(rotate(train.points, 1.0), train.labels,
                                               rotate(test.points, 4.5), test.labels),
                   base);
}

TEST(ContentProbe, RandomEmbeddingsAreChance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  const int C = 5, N = 3000;
  std::vector<Vector> train, test;
  std::vector<int> tl, sl;
  for (int i = 0; i < N; ++i) {
    Vector a(6), b(6);
    for (Index k = 0; k < 6; ++k) {
      a(k) = n(rng);
      b(k) = n(rng);
    }
    train.push_back(a);
    tl.push_back(i % C);
    test.push_back(b);
    sl.push_back(static_cast<int>(rng() % C));
  }
  const double p = 1.0 / C;
  EXPECT_NEAR(content_probe(train, tl, test, sl), p, 3.0 * std::sqrt(p * (1 - p) / N));
}

TEST(ContentProbe, OracleFeaturesOnCleanCorpusAreExact) {
  SynthConfig sc;
  sc.noise_std = 0.0;
  sc.seed = 6;
  const Corpus corpus = generate_corpus(sc);
  const CorpusSplit split = split_by_speaker(corpus, 3);
  const auto features = [&](const std::vector<std::size_t>& idx, std::vector<Vector>& out,
                            std::vector<int>& labels) {
    for (std::size_t i : idx) {
      const Utterance& u = corpus.utterances[i];
      const Vector& env = corpus.manifest.speaker(u.speaker_id).envelope;
      const auto segs = segment_utterance(u, 20, 20);
      for (std::size_t n = 0; n < segs.size(); ++n) {
        Matrix pattern = segs[n].frames.rowwise() - env.transpose();
        out.push_back(Eigen::Map<const Vector>(pattern.data(), pattern.size()));
        labels.push_back(corpus.manifest.utterances[i].content_ids[n]);
      }
    }
  };
  std::vector<Vector> train, test;
  std::vector<int> tl, sl;
  features(split.train, train, tl);
  features(split.test, test, sl);
  EXPECT_EQ(content_probe(train, tl, test, sl), 1.0);
  EXPECT_EQ(content_probe(train, tl, test, sl), content_probe(train, tl, test, sl));
}

double brute_silhouette(const std::vector<Vector>& x, const std::vector<std::string>& l) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::map<std::string, std::pair<double, int>> acc;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (j == i) continue;
      auto& [sum, cnt] = acc[l[j]];
      sum += std::sqrt((x[i] - x[j]).squaredNorm());
      ++cnt;
    }
    const double a = acc[l[i]].first / acc[l[i]].second;
    double b = 1e300;
    for (const auto& [label, sc] : acc)
      if (label != l[i]) b = std::min(b, sc.first / sc.second);
    const double m = std::max(a, b);
    total += m == 0.0 ? 0.0 : (b - a) / m;
  }
  return total / x.size();
}

TEST(Silhouette, MatchesBruteForceOnThirtyPoints) {
  const Clusters c = make_clusters(3, 10, 2.0, 21);
  ASSERT_EQ(c.points.size(), 30u);
  EXPECT_NEAR(silhouette(c.points, c.labels), brute_silhouette(c.points, c.labels), 1e-12);
}

TEST(Silhouette, LimitsAndConventions) {
  const Clusters tight = make_clusters(2, 5, 1e-6, 3);
  EXPECT_NEAR(silhouette(tight.points, tight.labels), 1.0, 1e-4);
  const std::vector<Vector> same(6, Vector::Ones(3));
  const std::vector<std::string> labels{"a", "a", "a", "b", "b", "b"};
  EXPECT_EQ(silhouette(same, labels), 0.0);
  EXPECT_THROW(silhouette(same, std::vector<std::string>(6, "a")), DataError);
  EXPECT_THROW(silhouette(same, std::vector<std::string>{"a", "a", "a", "a", "a", "b"}), DataError);
}

TEST(Silhouette, RotationInvariant) {
  const Clusters c = make_clusters(3, 6, 2.5, 30);
  const Matrix R = random_rotation(4, 31);
  std::vector<Vector> r;
  for (const Vector& x : c.points) r.push_back(R * x);
  EXPECT_NEAR(silhouette(r, c.labels), silhouette(c.points, c.labels), 1e-12);
}

// ---- model-dependent pieces -----------------------------------------------------

class TrainedFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthConfig sc;
    sc.n_speakers = 4;
    sc.utts_per_speaker = 5;
    sc.units_per_utt = 3;
    sc.feat_dim = 10;
    sc.seed = 3;
    corpus_ = new Corpus(generate_corpus(sc));
    split_ = new CorpusSplit(split_by_speaker(*corpus_, 2));
    TrainConfig cfg;
    cfg.hyper.z_dim = 4;
    cfg.hyper.hidden = 8;
    cfg.hyper.batch = 12;
    cfg.hyper.lr = 3e-3;
    cfg.steps = 150;
    model_ = new ModelParams(fit(make_training_set(*corpus_, split_->train), cfg).model);
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete split_;
    delete model_;
  }
  static Corpus* corpus_;
  static CorpusSplit* split_;
  static ModelParams* model_;
};
Corpus* TrainedFixture::corpus_ = nullptr;
CorpusSplit* TrainedFixture::split_ = nullptr;
ModelParams* TrainedFixture::model_ = nullptr;

TEST_F(TrainedFixture, SpeakerEmbeddingIsRescaledSequenceMean) {
  const Utterance& u = corpus_->utterances[split_->test[0]];
  const Vector e = extract_speaker_embedding(u, *model_);
  const double N = 3.0, s2 = model_->hyper.sigma_z2 * model_->hyper.sigma_z2;
  EXPECT_LT((e - infer_mu2(u, *model_) * (N + s2) / N).cwiseAbs().maxCoeff(), 1e-12);
  // Reordering segments leaves the embedding alone.
  Utterance shuffled = u;
  shuffled.frames.middleRows(0, 20) = u.frames.middleRows(40, 20);
  shuffled.frames.middleRows(40, 20) = u.frames.middleRows(0, 20);
  EXPECT_LT((extract_speaker_embedding(shuffled, *model_) - e).cwiseAbs().maxCoeff(), 1e-12);
  Utterance single = u;
  single.frames.conservativeResize(20, u.feat_dim());
  const auto seg = segment_utterance(single, 20, 20);
  EXPECT_LT((extract_speaker_embedding(single, *model_) - encode_z2(seg[0], *model_).mean).cwiseAbs().maxCoeff(),
            1e-12);
  single.frames.conservativeResize(19, u.feat_dim());
  EXPECT_THROW(extract_speaker_embedding(single, *model_), DataError);
}

TEST_F(TrainedFixture, ContentEmbeddingComposition) {
  const auto segs = segment_utterance(corpus_->utterances[0], 20, 20);
  const auto emb = extract_content_embeddings(segs, *model_);
  ASSERT_EQ(emb.size(), 3u);
  for (std::size_t n = 0; n < segs.size(); ++n) {
    ASSERT_EQ(emb[n].size(), 2 * model_->z_dim());
    const Vector z2 = encode_z2(segs[n], *model_).mean;
    const GaussianParams z1 = encode_z1(segs[n], z2, *model_);
    EXPECT_LT((emb[n].head(4) - z1.mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((emb[n].tail(4) - z1.log_var.array().exp().matrix()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((extract_content_embedding(segs[n], *model_) - emb[n]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_F(TrainedFixture, ReportIsInRangeAndReproducible) {
  const EvalReport r = evaluate(*model_, *corpus_, *split_);
  for (double v : {r.eer, r.speaker_id_acc, r.content_probe_acc}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GE(r.silhouette, -1.0);
  EXPECT_LE(r.silhouette, 1.0);
  const EvalReport again = evaluate(*model_, *corpus_, *split_);
  EXPECT_EQ(r.csv_row(), again.csv_row());
  EXPECT_EQ(std::string(EvalReport::kCsvHeader), "eer,speaker_id_acc,content_probe_acc,silhouette");

  // EER recomputed from corpus and checkpoint alone.
  std::vector<Vector> emb;
  std::vector<std::string> spk;
  for (std::size_t i : split_->test) {
    emb.push_back(extract_speaker_embedding(corpus_->utterances[i], *model_));
    spk.push_back(corpus_->utterances[i].speaker_id);
  }
  EXPECT_EQ(r.eer, cosine_eer(make_trials(emb, spk, 7)));
  EXPECT_NEAR(r.silhouette, silhouette(emb, spk), 1e-12);
}

TEST_F(TrainedFixture, ConversionDirectionCoversAllCrossSpeakerPairs) {
  const ConversionDirection d = conversion_direction(*model_, *corpus_, *split_);
  EXPECT_EQ(d.pairs, 8u * 6u);
  EXPECT_LE(d.closer_to_target, d.pairs);
  EXPECT_GE(d.fraction(), 0.0);
  EXPECT_EQ(ConversionDirection{}.fraction(), 0.0);
}

}  // namespace
}  // namespace fhvae
