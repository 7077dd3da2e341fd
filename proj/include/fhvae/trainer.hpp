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
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fhvae/diff.hpp"
#include "fhvae/error.hpp"
#include "fhvae/features.hpp"
#include "fhvae/model.hpp"
#include "fhvae/objective.hpp"
#include "fhvae/synthdata.hpp"

namespace fhvae {

using Rng = std::mt19937_64;

enum class TrainMode { kBaseFhvae, kContrastive };
enum class Batching { kTriplet, kRandom };
enum class ContrastiveGranularity { kUtterance, kSegment };

inline TrainMode parse_mode(const std::string& s) {
  if (s == "base" || s == "base_fhvae") return TrainMode::kBaseFhvae;
  if (s == "contrastive") return TrainMode::kContrastive;
  throw UsageError("unknown training mode '" + s + "' (expected base or contrastive)");
}
inline const char* mode_name(TrainMode m) { return m == TrainMode::kBaseFhvae ? "base" : "contrastive"; }

inline Batching parse_batching(const std::string& s) {
  if (s == "triplet") return Batching::kTriplet;
  if (s == "random") return Batching::kRandom;
  throw UsageError("unknown batching '" + s + "' (expected triplet or random)");
}

inline ContrastiveGranularity parse_granularity(const std::string& s) {
  if (s == "utterance") return ContrastiveGranularity::kUtterance;
  if (s == "segment") return ContrastiveGranularity::kSegment;
  throw UsageError("unknown contrastive granularity '" + s + "' (expected utterance or segment)");
}

struct TrainConfig {
  int steps = 2000;
  std::uint64_t seed = 1;
  HyperParams hyper;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  TrainMode mode = TrainMode::kContrastive;
  Batching batching = Batching::kTriplet;
  int triplets_per_batch = 1;
  ContrastiveGranularity granularity = ContrastiveGranularity::kUtterance;
  bool z1_from_z2_sample = true;  // Enc1 sees the z2 sample (else the posterior mean)
  Index seg_hop = 1;
  double clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  Index per_role() const { return hyper.batch / (3 * triplets_per_batch); }

  void validate() const {
    hyper.validate();
    require(steps >= 0, "train config: steps must be non-negative");
    require(triplets_per_batch >= 1, "train config: triplets_per_batch must be at least 1");
    require(hyper.batch % (3 * triplets_per_batch) == 0,
            "train config: batch must be divisible by 3 * triplets_per_batch");
    require(seg_hop >= 1, "train config: seg_hop must be positive");
    require(clip_norm > 0.0, "train config: clip_norm must be positive");
  }
};

// Training utterances with their overlapping segments. Index i here is
// sequence-mean table entry i.
struct TrainingSet {
  std::vector<Utterance> utterances;
  std::vector<std::vector<Segment>> segments;
  std::vector<std::string> speakers;
  std::vector<std::vector<std::size_t>> by_speaker;
  Index seg_len = kDefaultSegmentLength;
  Index feat_dim = 0;

  std::vector<std::string> utterance_ids() const {
    std::vector<std::string> ids;
    for (const auto& u : utterances) ids.push_back(u.utterance_id);
    return ids;
  }
  Index segment_count(std::size_t utt) const { return static_cast<Index>(segments.at(utt).size()); }
};

inline TrainingSet make_training_set(const Corpus& corpus, const std::vector<std::size_t>& indices,
                                     Index seg_hop = 1, Index seg_len = kDefaultSegmentLength) {
  TrainingSet set;
  set.seg_len = seg_len;
  std::map<std::string, std::size_t> speaker_index;
  for (std::size_t idx : indices) {
    const Utterance& utt = corpus.utterances.at(idx);
    if (set.feat_dim == 0) set.feat_dim = utt.feat_dim();
    require(utt.feat_dim() == set.feat_dim, "training set: mixed feature dimensions");
    set.segments.push_back(segment_utterance(utt, seg_len, seg_hop));
    auto [it, inserted] = speaker_index.emplace(utt.speaker_id, set.speakers.size());
    if (inserted) {
      set.speakers.push_back(utt.speaker_id);
      set.by_speaker.emplace_back();
    }
    set.by_speaker[it->second].push_back(set.utterances.size());
    set.utterances.push_back(utt);
  }
  require(!set.utterances.empty(), "training set: no utterances");
  return set;
}

inline TrainingSet make_training_set(const Corpus& corpus, Index seg_hop = 1) {
  std::vector<std::size_t> all(corpus.utterances.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_training_set(corpus, all, seg_hop);
}

struct TripletRole {
  std::size_t utterance = 0;  // training-set index
  std::vector<Segment> segments;
};

// a: (speaker 1, utterance 1), b: (speaker 1, utterance 2), c: (speaker 2, utterance 3).
struct TripletBatch {
  TripletRole a, b, c;
  Index per_role = 0;
};

namespace detail {

inline std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// S segment indices out of n: without replacement when n >= S, else with.
inline std::vector<std::size_t> draw_segment_indices(std::size_t n, Index S, Rng& rng) {
  std::vector<std::size_t> out;
  if (static_cast<Index>(n) >= S) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (Index k = 0; k < S; ++k) {
      const std::size_t j = k + uniform_index(n - k, rng);
      std::swap(pool[k], pool[j]);
      out.push_back(pool[k]);
    }
  } else {
    for (Index k = 0; k < S; ++k) out.push_back(uniform_index(n, rng));
  }
  return out;
}

inline TripletRole draw_role(const TrainingSet& set, std::size_t utt, Index S, Rng& rng) {
  TripletRole role;
  role.utterance = utt;
  for (std::size_t i : draw_segment_indices(set.segments[utt].size(), S, rng))
    role.segments.push_back(set.segments[utt][i]);
  return role;
}

}  // namespace detail

inline TripletBatch sample_triplet(const TrainingSet& set, Index per_role, Rng& rng) {
  std::vector<std::size_t> anchors;
  for (std::size_t s = 0; s < set.by_speaker.size(); ++s)
    if (set.by_speaker[s].size() >= 2) anchors.push_back(s);
  if (set.by_speaker.size() < 2 || anchors.empty())
    throw DataError("sample_triplet: need 2 speakers and a speaker with 2 utterances");
  require(per_role >= 1, "sample_triplet: per-role segment count must be positive");

  const std::size_t s1 = anchors[detail::uniform_index(anchors.size(), rng)];
  std::size_t s2 = detail::uniform_index(set.by_speaker.size() - 1, rng);
  if (s2 >= s1) ++s2;
  const auto& utts1 = set.by_speaker[s1];
  const std::size_t i1 = detail::uniform_index(utts1.size(), rng);
  std::size_t i2 = detail::uniform_index(utts1.size() - 1, rng);
  if (i2 >= i1) ++i2;
  const auto& utts2 = set.by_speaker[s2];
  const std::size_t u3 = utts2[detail::uniform_index(utts2.size(), rng)];

  TripletBatch batch;
  batch.per_role = per_role;
  batch.a = detail::draw_role(set, utts1[i1], per_role, rng);
  batch.b = detail::draw_role(set, utts1[i2], per_role, rng);
  batch.c = detail::draw_role(set, u3, per_role, rng);
  return batch;
}

// Flat view fed to train_step. For triplet batches the rows are laid out
// triplet by triplet as [a (S rows), b (S rows), c (S rows)].
struct Batch {
  std::vector<Segment> segments;
  std::vector<std::size_t> utterance;  // training-set index per row
  Index triplets = 0;
  Index per_role = 0;

  Index size() const { return static_cast<Index>(segments.size()); }
};

inline Batch flatten(const std::vector<TripletBatch>& triplets) {
  Batch out;
  out.triplets = static_cast<Index>(triplets.size());
  out.per_role = triplets.empty() ? 0 : triplets.front().per_role;
  for (const auto& t : triplets) {
    for (const TripletRole* r : {&t.a, &t.b, &t.c}) {
      for (const auto& s : r->segments) {
        out.segments.push_back(s);
        out.utterance.push_back(r->utterance);
      }
    }
  }
  return out;
}

// Role-free batch: each row from a uniformly drawn utterance and start.
inline Batch sample_random_batch(const TrainingSet& set, Index batch_size, Rng& rng) {
  Batch out;
  for (Index k = 0; k < batch_size; ++k) {
    const std::size_t u = detail::uniform_index(set.utterances.size(), rng);
    const std::size_t n = detail::uniform_index(set.segments[u].size(), rng);
    out.segments.push_back(set.segments[u][n]);
    out.utterance.push_back(u);
  }
  return out;
}

inline Batch sample_batch(const TrainingSet& set, const TrainConfig& cfg, Rng& rng) {
  if (cfg.batching == Batching::kRandom) return sample_random_batch(set, cfg.hyper.batch, rng);
  std::vector<TripletBatch> triplets;
  for (int k = 0; k < cfg.triplets_per_batch; ++k)
    triplets.push_back(sample_triplet(set, cfg.per_role(), rng));
  return flatten(triplets);
}

// Reparameterization noise, drawn outside the tape.
struct StepNoise {
  Matrix z1;
  Matrix z2;
};

inline StepNoise draw_step_noise(Index batch, Index z_dim, Rng& rng) {
  std::normal_distribution<double> normal;
  StepNoise n{Matrix(batch, z_dim), Matrix(batch, z_dim)};
  for (Index k = 0; k < n.z2.size(); ++k) n.z2.data()[k] = normal(rng);
  for (Index k = 0; k < n.z1.size(); ++k) n.z1.data()[k] = normal(rng);
  return n;
}

// Nodes of one training step's graph. Term nodes are batch means.
struct StepGraph {
  Var recon_ll, kl_z1, kl_z2, log_prior_mu2, contrastive, total, objective;
  graph::GaussianVars z2, z1;
  std::vector<std::size_t> utterances;  // distinct table entries touched
  bool has_contrastive = false;
};

inline StepGraph build_step_graph(Tape& tape, ModelParams& m, const Batch& batch,
                                  const TrainingSet& set, const TrainConfig& cfg) {
  const Index B = batch.size();
  const Index d = m.z_dim();
  require(B > 0, "train_step: empty batch");
  StepGraph g;
  auto frames = graph::frame_inputs(tape, m.seg_len, B, m.feat_dim);
  Var eps2 = tape.input("noise/z2", B, d);
  Var eps1 = tape.input("noise/z1", B, d);

  g.z2 = graph::encode_z2(tape, m, frames);
  Var z2_sample = graph::reparameterize(g.z2, eps2);
  g.z1 = graph::encode_z1(tape, m, frames, cfg.z1_from_z2_sample ? z2_sample : g.z2.mean);
  Var z1_sample = graph::reparameterize(g.z1, eps1);
  auto dec = graph::decode(tape, m, z1_sample, z2_sample);

  // Prior means per row: one-hot selection over the distinct utterances.
  std::unordered_map<std::size_t, Index> column;
  std::vector<Index> count;
  for (std::size_t u : batch.utterance) {
    if (!column.contains(u)) {
      column.emplace(u, static_cast<Index>(g.utterances.size()));
      g.utterances.push_back(u);
      count.push_back(0);
    }
    ++count[column[u]];
  }
  const Index k = static_cast<Index>(g.utterances.size());
  Matrix select = Matrix::Zero(B, k);
  for (Index b = 0; b < B; ++b) select(b, column[batch.utterance[b]]) = 1.0;
  std::vector<Var> mus;
  for (std::size_t u : g.utterances) mus.push_back(tape.param(m.seq_means.entry(u)));
  Var prior_mean = diff::matmul(tape.constant(std::move(select)), diff::concat_rows(mus));

  const double inv_b = 1.0 / static_cast<double>(B);
  g.recon_ll = scale(graph::gaussian_log_likelihood(frames, dec), inv_b);
  g.kl_z1 = scale(graph::kl_standard_normal(g.z1), inv_b);
  g.kl_z2 = scale(graph::kl_isotropic(g.z2, prior_mean, m.hyper.sigma_z2), inv_b);
  Var lp{};
  for (Index j = 0; j < k; ++j) {
    const double weight = static_cast<double>(count[j]) * inv_b /
                          static_cast<double>(set.segment_count(g.utterances[j]));
    Var term = graph::log_prior_mu2(mus[j], weight);
    lp = j == 0 ? term : lp + term;
  }
  g.log_prior_mu2 = lp;
  Var elbo = g.recon_ll - g.kl_z1 - g.kl_z2 + g.log_prior_mu2;

  g.has_contrastive = cfg.mode == TrainMode::kContrastive;
  if (g.has_contrastive) {
    require(batch.triplets > 0, "train_step: contrastive mode needs triplet batches");
    const Index S = batch.per_role;
    Var cont{};
    for (Index t = 0; t < batch.triplets; ++t) {
      Var ra = diff::slice_rows(g.z2.mean, (3 * t + 0) * S, S);
      Var rb = diff::slice_rows(g.z2.mean, (3 * t + 1) * S, S);
      Var rc = diff::slice_rows(g.z2.mean, (3 * t + 2) * S, S);
      Var term;
      if (cfg.granularity == ContrastiveGranularity::kUtterance) {
        term = graph::contrastive_loss(graph::row_mean(ra), graph::row_mean(rb), graph::row_mean(rc),
                                       m.hyper.lambda, m.hyper.beta);
      } else {
        term = scale(graph::contrastive_loss(ra, rb, rc, m.hyper.lambda, m.hyper.beta),
                     1.0 / static_cast<double>(S));
      }
      cont = t == 0 ? term : cont + term;
    }
    g.contrastive = scale(cont, 1.0 / static_cast<double>(batch.triplets));
    g.total = elbo - g.contrastive;
  } else {
    g.total = elbo;
  }
  g.objective = scale(g.total, -1.0);

  tape.label(g.recon_ll, "recon_ll");
  tape.label(g.kl_z1, "kl_z1");
  tape.label(g.kl_z2, "kl_z2");
  tape.label(g.log_prior_mu2, "log_prior_mu2");
  if (g.has_contrastive) tape.label(g.contrastive, "contrastive");
  tape.label(g.total, "total");
  return g;
}

inline diff::Bindings step_bindings(const ModelParams& m, const Batch& batch, const StepNoise& noise) {
  diff::Bindings bindings;
  bind_frames(bindings, batch.segments, m.seg_len, m.feat_dim);
  bindings["noise/z1"] = noise.z1;
  bindings["noise/z2"] = noise.z2;
  return bindings;
}

inline LossBreakdown read_breakdown(const Tape& tape, const StepGraph& g) {
  LossBreakdown lb;
  lb.recon_ll = tape.scalar(g.recon_ll);
  lb.kl_z1 = tape.scalar(g.kl_z1);
  lb.kl_z2 = tape.scalar(g.kl_z2);
  lb.log_prior_mu2 = tape.scalar(g.log_prior_mu2);
  lb.contrastive = g.has_contrastive ? tape.scalar(g.contrastive) : 0.0;
  lb.total = tape.scalar(g.total);
  return lb;
}

class AdamState {
 public:
  AdamState() = default;
  AdamState(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update to every param in `params` using its grad.
  void step(const std::vector<Param*>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param* p : params) {
      auto [it, inserted] = moments_.try_emplace(p->name);
      Moments& mo = it->second;
      if (inserted) {
        mo.m = Matrix::Zero(p->value.rows(), p->value.cols());
        mo.v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      mo.m = beta1_ * mo.m + (1.0 - beta1_) * p->grad;
      mo.v = beta2_ * mo.v + (1.0 - beta2_) * p->grad.cwiseAbs2();
      p->value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
inline double clip_global_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Param* p : params) p->grad *= s;
  }
  return norm;
}

inline void check_finite(const LossBreakdown& lb) {
  const std::pair<const char*, double> terms[] = {
      {"recon_ll", lb.recon_ll}, {"kl_z1", lb.kl_z1}, {"kl_z2", lb.kl_z2},
      {"log_prior_mu2", lb.log_prior_mu2}, {"contrastive", lb.contrastive}, {"total", lb.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term: ") + name);
}

// One forward/backward pass and one Adam update. Only sequence-mean entries
// of utterances present in the batch are touched.
inline LossBreakdown train_step(ModelParams& m, AdamState& adam, const Batch& batch,
                                const TrainingSet& set, const TrainConfig& cfg,
                                const StepNoise& noise) {
  Tape tape;
  StepGraph g = build_step_graph(tape, m, batch, set, cfg);
  std::vector<Param*> params = m.network_params();
  for (std::size_t u : g.utterances) params.push_back(&m.seq_means.entry(u));
  for (Param* p : params) p->zero_grad();
  try {
    tape.forward(step_bindings(m, batch, noise));
  } catch (const NumericError& e) {
    throw NumericError(std::string("train_step: ") + e.what());
  }
  LossBreakdown lb = read_breakdown(tape, g);
  check_finite(lb);
  tape.backward(g.objective);
  for (const Param* p : params)
    if (!p->grad.allFinite()) throw NumericError("train_step: non-finite gradient for " + p->name);
  clip_global_norm(params, cfg.clip_norm);
  adam.step(params, cfg.hyper.lr);
  return lb;
}

// Independent, reproducible streams derived from the run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline ModelParams init_for_training(const TrainingSet& set, const TrainConfig& cfg) {
  ModelParams m = init_model(set.feat_dim, cfg.hyper, derive_seed(cfg.seed, 0), set.utterance_ids());
  m.seg_len = set.seg_len;
  return m;
}

struct FitCallbacks {
  std::function<void(int step, const LossBreakdown&)> on_step;
  std::function<void(int step, const ModelParams&)> on_checkpoint;
};

struct FitResult {
  ModelParams model;
  std::vector<LossBreakdown> log;
};

inline FitResult fit(const TrainingSet& set, const TrainConfig& cfg, const FitCallbacks& cb = {}) {
  cfg.validate();
  FitResult result{init_for_training(set, cfg), {}};
  AdamState adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng batch_rng(derive_seed(cfg.seed, 1));
  Rng noise_rng(derive_seed(cfg.seed, 2));
  result.log.reserve(cfg.steps);
  for (int step = 1; step <= cfg.steps; ++step) {
    const Batch batch = sample_batch(set, cfg, batch_rng);
    const StepNoise noise = draw_step_noise(batch.size(), cfg.hyper.z_dim, noise_rng);
    const LossBreakdown lb = train_step(result.model, adam, batch, set, cfg, noise);
    result.log.push_back(lb);
    if (cb.on_step) cb.on_step(step, lb);
    if (cb.on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      cb.on_checkpoint(step, result.model);
  }
  return result;
}

// Trailing moving average of total.
inline std::vector<double> smoothed_total(const std::vector<LossBreakdown>& log, std::size_t window) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    acc += log[i].total;
    if (i >= window) acc -= log[i - window].total;
    out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

inline constexpr const char* kMetricsHeader =
    "step,recon_ll,kl_z1,kl_z2,log_prior_mu2,contrastive,total";

inline std::string metrics_row(int step, const LossBreakdown& lb) {
  std::ostringstream os;
  os.precision(17);
  os << step << ',' << lb.recon_ll << ',' << lb.kl_z1 << ',' << lb.kl_z2 << ',' << lb.log_prior_mu2
     << ',' << lb.contrastive << ',' << lb.total;
  return os.str();
}

}  // namespace fhvae
