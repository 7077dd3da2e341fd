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

// Paired base / contrastive training over several seeds on one corpus, with
// the full evaluation protocol per checkpoint and per-mode medians.

#pragma once

#include <algorithm>
#include <functional>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "fhvae/binary_io.hpp"
#include "fhvae/eval.hpp"
#include "fhvae/model.hpp"
#include "fhvae/synthdata.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae {

struct SweepRow {
  TrainMode mode = TrainMode::kBaseFhvae;
  std::uint64_t seed = 0;
  EvalReport report;
  double conversion = 0.0;  // fraction of pairs converted toward the target
  std::string checkpoint_hash;
};

struct SweepMedians {
  EvalReport report;
  double conversion = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepMedians base;
  SweepMedians contrastive;

  std::string table() const;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline SweepMedians median_of(const std::vector<SweepRow>& rows, TrainMode mode) {
  std::vector<double> eer, acc, content, sil, conv;
  for (const auto& r : rows) {
    if (r.mode != mode) continue;
    eer.push_back(r.report.eer);
    acc.push_back(r.report.speaker_id_acc);
    content.push_back(r.report.content_probe_acc);
    sil.push_back(r.report.silhouette);
    conv.push_back(r.conversion);
  }
  SweepMedians m;
  m.report = {median(eer), median(acc), median(content), median(sil)};
  m.conversion = median(conv);
  return m;
}

inline std::string SweepResult::table() const {
  std::ostringstream os;
  os << "mode,seed," << EvalReport::kCsvHeader << ",conversion\n";
  os.precision(10);
  for (const auto& r : rows)
    os << mode_name(r.mode) << ',' << r.seed << ',' << r.report.csv_row() << ',' << r.conversion << "\n";
  os << "base,median," << base.report.csv_row() << ',' << base.conversion << "\n";
  os << "contrastive,median," << contrastive.report.csv_row() << ',' << contrastive.conversion << "\n";
  return os.str();
}

// Reduced network and schedule for single-core sweeps on the default
// synthetic corpus; the loss weights and sigma_z2 keep their defaults.
inline TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.hyper.z_dim = 16;
  cfg.hyper.hidden = 32;
  cfg.hyper.batch = 24;
  cfg.hyper.lr = 3e-3;
  cfg.steps = 2000;
  return cfg;
}

struct SweepOptions {
  int seeds = 5;
  std::uint64_t first_seed = 1;
  int jobs = 1;
  EvalOptions eval;
  std::function<void(const SweepRow&)> on_row;
};

// `cfg.mode` and `cfg.seed` are overridden per run; everything else is shared
// so the two modes see identical initializations and batch streams.
inline SweepRow train_and_evaluate(const Corpus& corpus, const CorpusSplit& split, TrainConfig cfg,
                                   TrainMode mode, std::uint64_t seed, const EvalOptions& eval) {
  cfg.mode = mode;
  cfg.seed = seed;
  const TrainingSet set = make_training_set(corpus, split.train, cfg.seg_hop);
  const FitResult fitted = fit(set, cfg);
  SweepRow row;
  row.mode = mode;
  row.seed = seed;
  row.report = evaluate(fitted.model, corpus, split, eval);
  row.conversion = conversion_direction(fitted.model, corpus, split).fraction();
  row.checkpoint_hash = io::git_blob_hash(encode_checkpoint(fitted.model));
  return row;
}

inline SweepResult run_seed_sweep(const Corpus& corpus, const CorpusSplit& split, const TrainConfig& cfg,
                                  const SweepOptions& opts) {
  require(opts.seeds >= 1, "sweep: need at least one seed");
  struct Job {
    TrainMode mode;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (TrainMode mode : {TrainMode::kBaseFhvae, TrainMode::kContrastive})
    for (int k = 0; k < opts.seeds; ++k) jobs.push_back({mode, opts.first_seed + k});

  SweepResult result;
  result.rows.resize(jobs.size());
  const int workers = std::max(1, opts.jobs);
  for (std::size_t start = 0; start < jobs.size(); start += workers) {
    std::vector<std::future<SweepRow>> running;
    for (std::size_t j = start; j < std::min(jobs.size(), start + workers); ++j)
      running.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                   train_and_evaluate, std::cref(corpus), std::cref(split), cfg,
                                   jobs[j].mode, jobs[j].seed, opts.eval));
    for (std::size_t j = 0; j < running.size(); ++j) {
      result.rows[start + j] = running[j].get();
      if (opts.on_row) opts.on_row(result.rows[start + j]);
    }
  }
  result.base = median_of(result.rows, TrainMode::kBaseFhvae);
  result.contrastive = median_of(result.rows, TrainMode::kContrastive);
  return result;
}

}  // namespace fhvae
