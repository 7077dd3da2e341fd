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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "fhvae/binary_io.hpp"
#include "fhvae/diff.hpp"
#include "fhvae/error.hpp"
#include "fhvae/features.hpp"

namespace fhvae {

using Vector = Eigen::VectorXd;
using diff::Param;
using diff::Tape;
using diff::Var;

struct HyperParams {
  double sigma_z2 = 0.5;
  double lambda = 0.01;
  double beta = 0.005;
  Index z_dim = 32;
  Index hidden = 256;
  Index batch = 768;
  double lr = 1e-4;

  void validate() const {
    require(sigma_z2 > 0.0, "hyperparameters: sigma_z2 must be positive");
    require(lambda >= 0.0, "hyperparameters: lambda must be non-negative");
    require(beta >= 0.0, "hyperparameters: beta must be non-negative");
    require(z_dim > 0 && hidden > 0, "hyperparameters: z_dim and hidden must be positive");
    require(batch > 0 && batch % 3 == 0, "hyperparameters: batch must be a positive multiple of 3");
    require(lr >= 0.0, "hyperparameters: lr must be non-negative");
  }
};

struct GaussianParams {
  Vector mean;
  Vector log_var;

  Index dim() const { return mean.size(); }
  Vector variance() const { return log_var.array().exp().matrix(); }
};

// Every log-variance head passes through bound * tanh(raw / bound).
inline constexpr double kLogVarBound = 10.0;

// Gate blocks along the 4H axis: input, forget, cell, output.
struct LstmParams {
  Param wx;  // in x 4H
  Param wh;  // H x 4H
  Param b;   // 1 x 4H
};

struct AffineParams {
  Param w;
  Param b;
};

struct GaussianHead {
  AffineParams mean;
  AffineParams log_var;
};

struct RecurrentGaussian {
  LstmParams lstm;
  GaussianHead head;
};

// Trainable sequence-level prior means, one per training utterance.
class SeqMeanTable {
 public:
  void add(const std::string& utterance_id, Index z_dim) {
    if (index_.contains(utterance_id))
      throw DataError("sequence-mean table: duplicate utterance '" + utterance_id + "'");
    index_.emplace(utterance_id, entries_.size());
    entries_.emplace_back("mu2/" + utterance_id, Matrix::Zero(1, z_dim));
    ids_.push_back(utterance_id);
  }

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& id) const { return index_.contains(id); }
  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("sequence-mean table: unknown utterance '" + id + "'");
    return it->second;
  }
  const std::string& id(std::size_t i) const { return ids_.at(i); }

  Param& entry(std::size_t i) {
    if (i >= entries_.size()) throw DataError("sequence-mean table: index out of range");
    return entries_[i];
  }
  const Param& entry(std::size_t i) const {
    if (i >= entries_.size()) throw DataError("sequence-mean table: index out of range");
    return entries_[i];
  }

 private:
  std::vector<std::string> ids_;
  std::vector<Param> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelParams {
  Index feat_dim = 0;
  Index seg_len = kDefaultSegmentLength;
  HyperParams hyper;
  RecurrentGaussian enc2;  // x -> q(z2 | x)
  RecurrentGaussian enc1;  // [x, z2] -> q(z1 | x, z2)
  RecurrentGaussian dec;   // [z1, z2] -> p(x | z1, z2), per frame
  SeqMeanTable seq_means;

  Index z_dim() const { return hyper.z_dim; }
  Index hidden() const { return hyper.hidden; }

  template <class Self>
  static auto collect(Self& self) {
    using P = std::conditional_t<std::is_const_v<Self>, const Param*, Param*>;
    std::vector<P> out;
    for (auto* net : {&self.enc2, &self.enc1, &self.dec}) {
      out.push_back(&net->lstm.wx);
      out.push_back(&net->lstm.wh);
      out.push_back(&net->lstm.b);
      out.push_back(&net->head.mean.w);
      out.push_back(&net->head.mean.b);
      out.push_back(&net->head.log_var.w);
      out.push_back(&net->head.log_var.b);
    }
    return out;
  }
  // Network weights only; sequence means live in seq_means.
  std::vector<Param*> network_params() { return collect(*this); }
  std::vector<const Param*> network_params() const { return collect(*this); }
};

namespace detail {

inline Param uniform_param(std::string name, Index rows, Index cols, Index fan_in,
                           std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return Param(std::move(name), std::move(m));
}

inline RecurrentGaussian init_recurrent(const std::string& prefix, Index in, Index hidden, Index out,
                                        std::mt19937_64& rng) {
  RecurrentGaussian r;
  r.lstm.wx = uniform_param(prefix + "/lstm/wx", in, 4 * hidden, in + hidden, rng);
  r.lstm.wh = uniform_param(prefix + "/lstm/wh", hidden, 4 * hidden, in + hidden, rng);
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();
  r.lstm.b = Param(prefix + "/lstm/b", b);
  r.head.mean.w = uniform_param(prefix + "/mean/w", hidden, out, hidden, rng);
  r.head.mean.b = Param(prefix + "/mean/b", Matrix::Zero(1, out));
  r.head.log_var.w = uniform_param(prefix + "/logvar/w", hidden, out, hidden, rng);
  r.head.log_var.b = Param(prefix + "/logvar/b", Matrix::Zero(1, out));
  return r;
}

}  // namespace detail

// Fresh model; `utterance_ids` become zero-initialized sequence-mean entries.
inline ModelParams init_model(Index feat_dim, const HyperParams& hyper, std::uint64_t seed,
                              const std::vector<std::string>& utterance_ids = {}) {
  hyper.validate();
  require(feat_dim > 0, "init_model: feature dimension must be positive");
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.feat_dim = feat_dim;
  m.hyper = hyper;
  const Index d = hyper.z_dim, H = hyper.hidden;
  m.enc2 = detail::init_recurrent("enc2", feat_dim, H, d, rng);
  m.enc1 = detail::init_recurrent("enc1", feat_dim + d, H, d, rng);
  m.dec = detail::init_recurrent("dec", 2 * d, H, feat_dim, rng);
  for (const auto& id : utterance_ids) m.seq_means.add(id, d);
  return m;
}

// Zero every network weight and bias (including the forget-gate bias).
inline void zero_weights(ModelParams& m) {
  for (Param* p : m.network_params()) p->value.setZero();
}

// ---- graph construction ------------------------------------------------------

namespace graph {

struct GaussianVars {
  Var mean;
  Var log_var;
};

template <class P>
Var bind(Tape& tape, P& p) {
  if constexpr (std::is_const_v<P>)
    return tape.frozen(p);
  else
    return tape.param(p);
}

inline Var bound_log_var(Var raw) {
  return scale(diff::tanh(scale(raw, 1.0 / kLogVarBound)), kLogVarBound);
}

template <class Head>
GaussianVars gaussian_head(Tape& tape, Head& head, Var h) {
  Var mean = diff::affine(h, bind(tape, head.mean.w), bind(tape, head.mean.b));
  Var raw = diff::affine(h, bind(tape, head.log_var.w), bind(tape, head.log_var.b));
  return {mean, bound_log_var(raw)};
}

// Runs the recurrence given the per-step input pre-activations (bias
// included) and returns every hidden state. Zero initial state.
template <class Lstm>
std::vector<Var> run_lstm(Tape& tape, Lstm& lstm, const std::vector<Var>& preact, Index hidden) {
  Var wh = bind(tape, lstm.wh);
  std::vector<Var> hs;
  hs.reserve(preact.size());
  Var h{}, c{};
  for (std::size_t t = 0; t < preact.size(); ++t) {
    Var gates = t == 0 ? preact[t] : preact[t] + diff::matmul(h, wh);
    Var i = diff::sigmoid(diff::slice_cols(gates, 0, hidden));
    Var f = diff::sigmoid(diff::slice_cols(gates, hidden, hidden));
    Var g = diff::tanh(diff::slice_cols(gates, 2 * hidden, hidden));
    Var o = diff::sigmoid(diff::slice_cols(gates, 3 * hidden, hidden));
    c = t == 0 ? i * g : f * c + i * g;
    h = o * diff::tanh(c);
    hs.push_back(h);
  }
  return hs;
}

// frames[t] is the B x F matrix of frame t across the batch.
template <class Model>
GaussianVars encode_z2(Tape& tape, Model& m, const std::vector<Var>& frames) {
  Var wx = bind(tape, m.enc2.lstm.wx);
  Var b = bind(tape, m.enc2.lstm.b);
  std::vector<Var> pre;
  for (Var x : frames) pre.push_back(diff::affine(x, wx, b));
  auto hs = run_lstm(tape, m.enc2.lstm, pre, m.hidden());
  return gaussian_head(tape, m.enc2.head, hs.back());
}

// Each frame is concatenated with z2; the affine map of [x_t, z2] is split
// into its x and z2 row blocks so the z2 term is computed once.
template <class Model>
GaussianVars encode_z1(Tape& tape, Model& m, const std::vector<Var>& frames, Var z2) {
  Var wx = bind(tape, m.enc1.lstm.wx);
  Var wx_frame = diff::slice_rows(wx, 0, m.feat_dim);
  Var wx_latent = diff::slice_rows(wx, m.feat_dim, m.z_dim());
  Var latent_pre = diff::affine(z2, wx_latent, bind(tape, m.enc1.lstm.b));
  std::vector<Var> pre;
  for (Var x : frames) pre.push_back(diff::matmul(x, wx_frame) + latent_pre);
  auto hs = run_lstm(tape, m.enc1.lstm, pre, m.hidden());
  return gaussian_head(tape, m.enc1.head, hs.back());
}

// The concatenated latent is the decoder input at every step.
template <class Model>
std::vector<GaussianVars> decode(Tape& tape, Model& m, Var z1, Var z2) {
  Var latent = diff::concat_cols({z1, z2});
  Var pre = diff::affine(latent, bind(tape, m.dec.lstm.wx), bind(tape, m.dec.lstm.b));
  std::vector<Var> pres(static_cast<std::size_t>(m.seg_len), pre);
  auto hs = run_lstm(tape, m.dec.lstm, pres, m.hidden());
  std::vector<GaussianVars> out;
  out.reserve(hs.size());
  for (Var h : hs) out.push_back(gaussian_head(tape, m.dec.head, h));
  return out;
}

inline Var reparameterize(const GaussianVars& g, Var noise) {
  return g.mean + diff::exp(scale(g.log_var, 0.5)) * noise;
}

inline std::string frame_input_name(Index t) { return "frame/" + std::to_string(t); }

// Declares seg_len frame inputs of shape B x F.
inline std::vector<Var> frame_inputs(Tape& tape, Index seg_len, Index batch, Index feat_dim) {
  std::vector<Var> frames;
  for (Index t = 0; t < seg_len; ++t)
    frames.push_back(tape.input(frame_input_name(t), batch, feat_dim));
  return frames;
}

}  // namespace graph

// Packs segments into per-time-step B x F matrices bound as frame inputs.
inline void bind_frames(diff::Bindings& bindings, std::span<const Segment> segments, Index seg_len,
                        Index feat_dim) {
  const Index B = static_cast<Index>(segments.size());
  for (Index t = 0; t < seg_len; ++t) {
    Matrix x(B, feat_dim);
    for (Index b = 0; b < B; ++b) x.row(b) = segments[b].frames.row(t);
    bindings[graph::frame_input_name(t)] = std::move(x);
  }
}

inline void check_segments(std::span<const Segment> segments, const ModelParams& m) {
  if (segments.empty()) throw DataError("model: no segments given");
  for (const Segment& s : segments) {
    if (s.frames.rows() != m.seg_len)
      throw DataError("model: segment with " + std::to_string(s.frames.rows()) +
                      " frames, expected " + std::to_string(m.seg_len));
    if (s.frames.cols() != m.feat_dim)
      throw DataError("model: segment feature dimension " + std::to_string(s.frames.cols()) +
                      " does not match model " + std::to_string(m.feat_dim));
  }
}

inline GaussianParams row_gaussian(const Matrix& mean, const Matrix& log_var, Index row) {
  return {mean.row(row).transpose(), log_var.row(row).transpose()};
}

// ---- inference (posterior means, no gradients) --------------------------------

inline std::vector<GaussianParams> encode_z2(std::span<const Segment> segments, const ModelParams& m) {
  check_segments(segments, m);
  const Index B = static_cast<Index>(segments.size());
  Tape tape;
  auto frames = graph::frame_inputs(tape, m.seg_len, B, m.feat_dim);
  auto z2 = graph::encode_z2(tape, m, frames);
  diff::Bindings bindings;
  bind_frames(bindings, segments, m.seg_len, m.feat_dim);
  tape.forward(bindings);
  std::vector<GaussianParams> out;
  for (Index b = 0; b < B; ++b) out.push_back(row_gaussian(tape.value(z2.mean), tape.value(z2.log_var), b));
  return out;
}

inline GaussianParams encode_z2(const Segment& segment, const ModelParams& m) {
  return encode_z2(std::span<const Segment>(&segment, 1), m).front();
}

// z2_inputs holds one vector per segment.
inline std::vector<GaussianParams> encode_z1(std::span<const Segment> segments,
                                             const std::vector<Vector>& z2_inputs,
                                             const ModelParams& m) {
  check_segments(segments, m);
  require(z2_inputs.size() == segments.size(), "encode_z1: one z2 per segment required");
  const Index B = static_cast<Index>(segments.size());
  Matrix z2(B, m.z_dim());
  for (Index b = 0; b < B; ++b) {
    require(z2_inputs[b].size() == m.z_dim(), "encode_z1: z2 dimension mismatch");
    require(z2_inputs[b].allFinite(), "encode_z1: z2 must be finite");
    z2.row(b) = z2_inputs[b].transpose();
  }
  Tape tape;
  auto frames = graph::frame_inputs(tape, m.seg_len, B, m.feat_dim);
  Var z2_var = tape.input("z2", B, m.z_dim());
  auto z1 = graph::encode_z1(tape, m, frames, z2_var);
  diff::Bindings bindings;
  bind_frames(bindings, segments, m.seg_len, m.feat_dim);
  bindings["z2"] = std::move(z2);
  tape.forward(bindings);
  std::vector<GaussianParams> out;
  for (Index b = 0; b < B; ++b) out.push_back(row_gaussian(tape.value(z1.mean), tape.value(z1.log_var), b));
  return out;
}

inline GaussianParams encode_z1(const Segment& segment, const Vector& z2, const ModelParams& m) {
  return encode_z1(std::span<const Segment>(&segment, 1), std::vector<Vector>{z2}, m).front();
}

// One sequence of seg_len per-frame Gaussians for each (z1, z2) pair.
inline std::vector<std::vector<GaussianParams>> decode(const std::vector<Vector>& z1s,
                                                       const std::vector<Vector>& z2s,
                                                       const ModelParams& m) {
  require(!z1s.empty() && z1s.size() == z2s.size(), "decode: need equal, non-empty latent lists");
  const Index B = static_cast<Index>(z1s.size());
  Matrix z1(B, m.z_dim()), z2(B, m.z_dim());
  for (Index b = 0; b < B; ++b) {
    require(z1s[b].size() == m.z_dim() && z2s[b].size() == m.z_dim(), "decode: latent dimension mismatch");
    if (!z1s[b].allFinite() || !z2s[b].allFinite()) throw DataError("decode: non-finite latent");
    z1.row(b) = z1s[b].transpose();
    z2.row(b) = z2s[b].transpose();
  }
  Tape tape;
  Var z1v = tape.input("z1", B, m.z_dim());
  Var z2v = tape.input("z2", B, m.z_dim());
  auto frames = graph::decode(tape, m, z1v, z2v);
  tape.forward({{"z1", z1}, {"z2", z2}});
  std::vector<std::vector<GaussianParams>> out(B);
  for (const auto& fr : frames)
    for (Index b = 0; b < B; ++b)
      out[b].push_back(row_gaussian(tape.value(fr.mean), tape.value(fr.log_var), b));
  return out;
}

inline std::vector<GaussianParams> decode(const Vector& z1, const Vector& z2, const ModelParams& m) {
  return decode(std::vector<Vector>{z1}, std::vector<Vector>{z2}, m).front();
}

// Stacks per-frame decoder means into a seg_len x F block.
inline Matrix frame_means(const std::vector<GaussianParams>& frames) {
  Matrix out(static_cast<Index>(frames.size()), frames.at(0).dim());
  for (std::size_t t = 0; t < frames.size(); ++t) out.row(static_cast<Index>(t)) = frames[t].mean.transpose();
  return out;
}

inline Vector reparameterize(const GaussianParams& p, const Vector& noise) {
  if (noise.size() != p.dim() || p.log_var.size() != p.dim())
    throw DataError("reparameterize: noise dimension does not match distribution");
  return p.mean + ((0.5 * p.log_var.array()).exp() * noise.array()).matrix();
}

inline Vector lookup_mu2(std::size_t utterance_index, const SeqMeanTable& table) {
  return table.entry(utterance_index).value.row(0).transpose();
}

inline Vector lookup_mu2(const std::string& utterance_id, const SeqMeanTable& table) {
  return lookup_mu2(table.index_of(utterance_id), table);
}

// MAP estimate of mu2 for an unseen sequence, treating each segment's
// posterior mean as an observation of z2 ~ N(mu2, sigma^2 I) under
// mu2 ~ N(0, I): sum / (N + sigma^2).
inline Vector infer_mu2_from_means(const std::vector<Vector>& posterior_means, double sigma_z2) {
  require(!posterior_means.empty(), "infer_mu2: no segments");
  Vector acc = Vector::Zero(posterior_means.front().size());
  for (const Vector& v : posterior_means) acc += v;
  return acc / (static_cast<double>(posterior_means.size()) + sigma_z2 * sigma_z2);
}

inline Vector infer_mu2(std::span<const Segment> segments, const ModelParams& m) {
  require(!segments.empty(), "infer_mu2: no segments");
  std::vector<Vector> means;
  for (const auto& g : encode_z2(segments, m)) means.push_back(g.mean);
  return infer_mu2_from_means(means, m.hyper.sigma_z2);
}

// ---- checkpoint ----------------------------------------------------------------
// "FHVC" | version u32 | feat_dim, seg_len, z_dim, hidden, batch : u32 |
// sigma_z2, lambda, beta, lr : f64 | n u32 | n x (name str, rows u32, cols u32,
// rows*cols f64 row-major). Sequence means are blobs named "mu2/<utterance id>".

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const ModelParams& m) {
  io::ByteWriter w;
  w.raw("FHVC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(m.feat_dim));
  w.u32(static_cast<std::uint32_t>(m.seg_len));
  w.u32(static_cast<std::uint32_t>(m.hyper.z_dim));
  w.u32(static_cast<std::uint32_t>(m.hyper.hidden));
  w.u32(static_cast<std::uint32_t>(m.hyper.batch));
  w.f64(m.hyper.sigma_z2);
  w.f64(m.hyper.lambda);
  w.f64(m.hyper.beta);
  w.f64(m.hyper.lr);
  const auto net = m.network_params();
  w.u32(static_cast<std::uint32_t>(net.size() + m.seq_means.size()));
  const auto blob = [&](const Param& p) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rows()));
    w.u32(static_cast<std::uint32_t>(p.value.cols()));
    for (Index r = 0; r < p.value.rows(); ++r)
      for (Index c = 0; c < p.value.cols(); ++c) w.f64(p.value(r, c));
  };
  for (const Param* p : net) blob(*p);
  for (std::size_t i = 0; i < m.seq_means.size(); ++i) blob(m.seq_means.entry(i));
  return w.bytes();
}

inline ModelParams decode_checkpoint(const std::vector<char>& bytes, const std::string& what) {
  io::ByteReader r(bytes, what);
  if (r.raw(4) != "FHVC") throw DataError(what + ": not an FHVC checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
  HyperParams hyper;
  const Index feat_dim = r.u32();
  const Index seg_len = r.u32();
  hyper.z_dim = r.u32();
  hyper.hidden = r.u32();
  hyper.batch = r.u32();
  hyper.sigma_z2 = r.f64();
  hyper.lambda = r.f64();
  hyper.beta = r.f64();
  hyper.lr = r.f64();
  ModelParams m = init_model(feat_dim, hyper, 0);
  m.seg_len = seg_len;
  std::unordered_map<std::string, Param*> by_name;
  for (Param* p : m.network_params()) by_name[p->name] = p;
  const std::uint32_t n = r.u32();
  std::size_t seen = 0;
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::string name = r.str();
    const Index rows = r.u32(), cols = r.u32();
    Matrix value(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) value(i, j) = r.f64();
    if (name.starts_with("mu2/")) {
      if (rows != 1 || cols != hyper.z_dim) throw DataError(what + ": bad shape for " + name);
      m.seq_means.add(name.substr(4), hyper.z_dim);
      m.seq_means.entry(m.seq_means.size() - 1).value = value;
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(what + ": unknown parameter blob '" + name + "'");
    if (it->second->value.rows() != rows || it->second->value.cols() != cols)
      throw DataError(what + ": shape mismatch for " + name);
    it->second->value = value;
    ++seen;
  }
  if (seen != by_name.size()) throw DataError(what + ": checkpoint is missing network parameters");
  if (!r.at_end()) throw DataError(what + ": trailing bytes in checkpoint");
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& m) {
  io::write_file(path, encode_checkpoint(m));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace fhvae
