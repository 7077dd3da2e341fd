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

// Loss terms. The training objective per segment is
//
//   elbo = log p(x | z1, z2) - KL(q(z1) || N(0, I)) - KL(q(z2) || N(mu2~, s^2 I))
//          + (1/N) log N(mu2~ | 0, I)
//
// and the contrastive term on utterance-level z2 embeddings a, b (same
// speaker, different utterances) and c (another speaker) is
//
//   cont = lambda |a - b|^2 - beta |a - c|^2 - beta |b - c|^2.
//
// The trainer maximizes total = elbo - cont. Each term exists twice: as a
// plain function on doubles and as a tape builder used for training.

#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fhvae/diff.hpp"
#include "fhvae/error.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

inline constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

struct LossBreakdown {
  double recon_ll = 0.0;
  double kl_z1 = 0.0;
  double kl_z2 = 0.0;
  double log_prior_mu2 = 0.0;
  double contrastive = 0.0;
  double total = 0.0;

  double elbo() const { return recon_ll - kl_z1 - kl_z2 + log_prior_mu2; }
  void assemble() { total = elbo() - contrastive; }
};

inline double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
  if (q.dim() != p.dim() || q.log_var.size() != q.dim() || p.log_var.size() != p.dim())
    throw DataError("gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (Index d = 0; d < q.dim(); ++d) {
    const double var_q = std::exp(q.log_var(d));
    const double var_p = std::exp(p.log_var(d));
    const double diff = q.mean(d) - p.mean(d);
    kl += 0.5 * (p.log_var(d) - q.log_var(d)) + (var_q + diff * diff) / (2.0 * var_p) - 0.5;
  }
  return kl;
}

inline GaussianParams isotropic(const Vector& mean, double stddev) {
  return {mean, Vector::Constant(mean.size(), 2.0 * std::log(stddev))};
}

inline GaussianParams standard_normal(Index dim) { return isotropic(Vector::Zero(dim), 1.0); }

// x is seg_len x F; p holds one Gaussian per frame.
inline double gaussian_log_likelihood(const Matrix& x, std::span<const GaussianParams> p) {
  if (static_cast<Index>(p.size()) != x.rows())
    throw DataError("gaussian_log_likelihood: frame count mismatch");
  double ll = 0.0;
  for (Index t = 0; t < x.rows(); ++t) {
    if (p[t].dim() != x.cols()) throw DataError("gaussian_log_likelihood: feature dimension mismatch");
    for (Index f = 0; f < x.cols(); ++f) {
      const double diff = x(t, f) - p[t].mean(f);
      ll += -0.5 * (kLog2Pi + p[t].log_var(f) + diff * diff / std::exp(p[t].log_var(f)));
    }
  }
  return ll;
}

inline double log_prior_mu2(const Vector& mu2, Index n_segments) {
  if (n_segments < 1) throw DataError("log_prior_mu2: segment count must be at least 1");
  const double d = static_cast<double>(mu2.size());
  return (-0.5 * mu2.squaredNorm() - 0.5 * d * kLog2Pi) / static_cast<double>(n_segments);
}

// One segment's four-term bound. z1_sample / z2_sample are carried for
// interface symmetry with the training graph; decoder_out must already be
// conditioned on them.
inline LossBreakdown elbo_fhvae(const Segment& seg, const GaussianParams& z1_post,
                                const GaussianParams& z2_post, const Vector& /*z1_sample*/,
                                const Vector& /*z2_sample*/,
                                std::span<const GaussianParams> decoder_out, const Vector& mu2_tilde,
                                Index n_segments, double sigma_z2) {
  LossBreakdown out;
  out.recon_ll = gaussian_log_likelihood(seg.frames, decoder_out);
  out.kl_z1 = gaussian_kl(z1_post, standard_normal(z1_post.dim()));
  out.kl_z2 = gaussian_kl(z2_post, isotropic(mu2_tilde, sigma_z2));
  out.log_prior_mu2 = log_prior_mu2(mu2_tilde, n_segments);
  out.assemble();
  return out;
}

inline double contrastive_loss(const Vector& a, const Vector& b, const Vector& c, double lambda,
                               double beta) {
  if (a.size() != b.size() || a.size() != c.size())
    throw DataError("contrastive_loss: dimension mismatch");
  // The two negative terms are summed first so swapping a and b is exact.
  return lambda * (a - b).squaredNorm() - beta * ((a - c).squaredNorm() + (b - c).squaredNorm());
}

inline double total_loss(double elbo, double contrastive) { return elbo - contrastive; }

// ---- tape builders ---------------------------------------------------------------
// All return sums over the batch rows; callers divide by the segment count.

namespace graph {

// sum over rows and dims of KL(N(m, e^lv) || N(0, I)).
inline Var kl_standard_normal(const GaussianVars& q) {
  const double n = static_cast<double>(q.mean.tape->rows(q.mean) * q.mean.tape->cols(q.mean));
  Var body = diff::exp(q.log_var) + diff::square(q.mean) - q.log_var;
  return add_scalar(scale(diff::sum(body), 0.5), -0.5 * n);
}

// sum over rows and dims of KL(N(m, e^lv) || N(prior_mean, sigma^2 I)).
inline Var kl_isotropic(const GaussianVars& q, Var prior_mean, double sigma) {
  const double n = static_cast<double>(q.mean.tape->rows(q.mean) * q.mean.tape->cols(q.mean));
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  Var body = scale(q.log_var, -0.5) +
             scale(diff::exp(q.log_var) + diff::square(q.mean - prior_mean), inv_two_var);
  return add_scalar(diff::sum(body), n * (std::log(sigma) - 0.5));
}

// sum over frames, rows, bins of log N(x | mean, e^lv).
inline Var gaussian_log_likelihood(const std::vector<Var>& frames, const std::vector<GaussianVars>& p) {
  if (frames.size() != p.size()) throw ShapeError("gaussian_log_likelihood: frame count mismatch");
  Var acc{};
  double count = 0.0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    Var term = p[t].log_var + diff::square(frames[t] - p[t].mean) * diff::exp(-p[t].log_var);
    Var s = diff::sum(term);
    acc = t == 0 ? s : acc + s;
    count += static_cast<double>(frames[t].tape->rows(frames[t]) * frames[t].tape->cols(frames[t]));
  }
  return add_scalar(scale(acc, -0.5), -0.5 * kLog2Pi * count);
}

// weight * log N(mu2 | 0, I) for a 1 x d row.
inline Var log_prior_mu2(Var mu2, double weight) {
  const double d = static_cast<double>(mu2.tape->cols(mu2));
  return add_scalar(scale(diff::squared_norm(mu2), -0.5 * weight), -0.5 * d * kLog2Pi * weight);
}

inline Var contrastive_loss(Var a, Var b, Var c, double lambda, double beta) {
  return scale(diff::squared_norm(a - b), lambda) -
         scale(diff::squared_norm(a - c) + diff::squared_norm(b - c), beta);
}

// Mean over rows, as a 1 x C row.
inline Var row_mean(Var m) {
  Tape& tape = *m.tape;
  const Index n = tape.rows(m);
  return diff::matmul(tape.constant(Matrix::Constant(1, n, 1.0 / static_cast<double>(n))), m);
}

}  // namespace graph

}  // namespace fhvae
