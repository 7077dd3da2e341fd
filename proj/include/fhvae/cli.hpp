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

// The `fhvae` command-line tool: gen | train | extract | convert | eval.
// Exit codes: 0 success, 1 usage, 2 data or shape error, 3 numeric failure.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fhvae/binary_io.hpp"
#include "fhvae/convert.hpp"
#include "fhvae/error.hpp"
#include "fhvae/eval.hpp"
#include "fhvae/experiment.hpp"
#include "fhvae/features.hpp"
#include "fhvae/model.hpp"
#include "fhvae/synthdata.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Written next to every command's outputs. Holds no timestamps so that
// identical invocations produce identical files.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  ordered_json inputs = ordered_json::object();
  ordered_json outputs = ordered_json::object();
  std::string checkpoint_hash;
  std::string effective_config;

  std::string json() const {
    ordered_json j;
    j["command"] = command;
    j["config"] = config_path.empty() ? ordered_json(nullptr) : ordered_json(config_path);
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["checkpoint_hash"] = checkpoint_hash.empty() ? ordered_json(nullptr) : ordered_json(checkpoint_hash);
    j["effective_config"] = effective_config;
    return j.dump(2) + "\n";
  }

  void write(const fs::path& path) const {
    const std::string text = json();
    io::write_file(path, std::vector<char>(text.begin(), text.end()));
  }
};

inline void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::vector<char>(text.begin(), text.end()));
}

inline fs::path sidecar_manifest(const fs::path& output) {
  return output.parent_path() / (output.filename().string() + ".manifest.json");
}

// Option names accept both snake_case and kebab-case spellings.
inline std::string names(const std::string& key) {
  std::string dashed = key;
  std::replace(dashed.begin(), dashed.end(), '_', '-');
  return dashed == key ? "--" + key : "--" + key + ",--" + dashed;
}

inline std::string effective_config(const CLI::App* app) {
  return app->config_to_str(true, false);
}

// ---- shared option groups ------------------------------------------------------

struct TrainArgs {
  TrainConfig cfg;
  std::string mode = "contrastive";
  std::string batching = "triplet";
  std::string granularity = "utterance";
  std::string z1_input = "sample";
  int test_utts = 3;
  int log_every = 0;

  void add_to(CLI::App* app) {
    auto& h = cfg.hyper;
    app->add_option(names("mode"), mode, "base | contrastive")->capture_default_str();
    app->add_option(names("steps"), cfg.steps)->capture_default_str();
    app->add_option(names("seed"), cfg.seed)->capture_default_str();
    app->add_option(names("lambda"), h.lambda)->capture_default_str();
    app->add_option(names("beta"), h.beta)->capture_default_str();
    app->add_option(names("sigma_z2"), h.sigma_z2)->capture_default_str();
    app->add_option(names("z_dim"), h.z_dim)->capture_default_str();
    app->add_option(names("hidden"), h.hidden)->capture_default_str();
    app->add_option(names("batch"), h.batch)->capture_default_str();
    app->add_option(names("lr"), h.lr)->capture_default_str();
    app->add_option(names("batching"), batching, "triplet | random")->capture_default_str();
    app->add_option(names("triplets_per_batch"), cfg.triplets_per_batch)->capture_default_str();
    app->add_option(names("granularity"), granularity, "utterance | segment")->capture_default_str();
    app->add_option(names("z1_input"), z1_input, "sample | mean")->capture_default_str();
    app->add_option(names("seg_hop"), cfg.seg_hop)->capture_default_str();
    app->add_option(names("clip_norm"), cfg.clip_norm)->capture_default_str();
    app->add_option(names("test_utts"), test_utts, "held-out utterances per speaker")->capture_default_str();
    app->add_option(names("log_every"), log_every, "progress line every N steps (0: silent)")
        ->capture_default_str();
  }

  TrainConfig resolve() const {
    TrainConfig out = cfg;
    out.mode = parse_mode(mode);
    out.batching = parse_batching(batching);
    out.granularity = parse_granularity(granularity);
    if (z1_input == "sample")
      out.z1_from_z2_sample = true;
    else if (z1_input == "mean")
      out.z1_from_z2_sample = false;
    else
      throw UsageError("unknown z1 input '" + z1_input + "' (expected sample or mean)");
    if (test_utts < 0) throw UsageError("test_utts must be non-negative");
    try {
      out.validate();
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
    return out;
  }
};

inline Corpus load_corpus(const std::string& dir) {
  if (dir.empty()) throw UsageError("--corpus is required");
  return read_corpus(dir);
}

inline ModelParams load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

inline const Utterance& find_utterance(const Corpus& corpus, const std::string& id) {
  const auto idx = corpus.index_of(id);
  return corpus.utterances[idx];
}

inline std::string format_vector(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  for (Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

// ---- gen -------------------------------------------------------------

struct GenArgs {
  SynthConfig synth;
  std::string out;
};

inline int cmd_gen(const GenArgs& a, const CLI::App* app, const std::string& config, std::ostream& out) {
  if (a.out.empty()) throw UsageError("--out is required");
  const Corpus corpus = generate_corpus(a.synth);
  write_corpus(corpus, a.out);
  RunManifest rm;
  rm.command = "gen";
  rm.config_path = config;
  rm.seed = a.synth.seed;
  rm.outputs["corpus"] = a.out;
  rm.outputs["manifest"] = (fs::path(a.out) / "manifest.txt").string();
  rm.effective_config = effective_config(app);
  rm.write(fs::path(a.out) / "run_manifest.json");
  out << "wrote " << corpus.utterances.size() << " utterances to " << a.out << "\n";
  return kOk;
}

// ---- train -------------------------------------------------------------

struct TrainCmdArgs {
  TrainArgs train;
  std::string corpus;
  std::string out;
};

inline int cmd_train(const TrainCmdArgs& a, const CLI::App* app, const std::string& config, std::ostream& out,
                     std::ostream& err) {
  if (a.out.empty()) throw UsageError("--out is required");
  const TrainConfig cfg = a.train.resolve();
  const Corpus corpus = load_corpus(a.corpus);
  const CorpusSplit split = split_by_speaker(corpus, a.train.test_utts);
  const TrainingSet set = make_training_set(corpus, split.train, cfg.seg_hop);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  std::ostringstream metrics;
  metrics << kMetricsHeader << "\n";
  RunManifest rm;
  rm.command = "train";
  rm.config_path = config;
  rm.seed = cfg.seed;
  rm.inputs["corpus"] = a.corpus;
  std::vector<std::string> periodic;

  FitCallbacks cb;
  cb.on_step = [&](int step, const LossBreakdown& lb) {
    metrics << metrics_row(step, lb) << "\n";
    if (a.train.log_every > 0 && step % a.train.log_every == 0)
      err << "step " << step << " total " << lb.total << " recon " << lb.recon_ll << "\n";
  };
  cb.on_checkpoint = [&](int step, const ModelParams& m) {
    const fs::path p = dir / ("checkpoint_step" + std::to_string(step) + ".fhvc");
    save_checkpoint(p, m);
    periodic.push_back(p.string());
  };
  const FitResult fitted = fit(set, cfg, cb);

  const fs::path ckpt = dir / "checkpoint.fhvc";
  const auto bytes = encode_checkpoint(fitted.model);
  io::write_file(ckpt, bytes);
  write_text(dir / "metrics.csv", metrics.str());
  rm.outputs["checkpoint"] = ckpt.string();
  rm.outputs["metrics"] = (dir / "metrics.csv").string();
  rm.outputs["periodic_checkpoints"] = periodic;
  rm.checkpoint_hash = io::git_blob_hash(bytes);
  rm.effective_config = effective_config(app);
  rm.write(dir / "run_manifest.json");
  out << "checkpoint " << ckpt.string() << " " << rm.checkpoint_hash << "\n";
  return kOk;
}

// ---- extract -------------------------------------------------------------

struct ExtractArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::string kind = "speaker";
  std::string subset = "all";
  int test_utts = 3;
};

inline std::vector<std::size_t> select_utterances(const Corpus& corpus, const std::string& subset, int test_utts) {
  if (subset == "all") {
    std::vector<std::size_t> all(corpus.utterances.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const CorpusSplit split = split_by_speaker(corpus, test_utts);
  if (subset == "train") return split.train;
  if (subset == "test") return split.test;
  throw UsageError("unknown subset '" + subset + "' (expected all, train or test)");
}

inline int cmd_extract(const ExtractArgs& a, const CLI::App* app, const std::string& config, std::ostream& out) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.kind != "speaker" && a.kind != "content")
    throw UsageError("unknown kind '" + a.kind + "' (expected speaker or content)");
  const Corpus corpus = load_corpus(a.corpus);
  const ModelParams m = load_model(a.checkpoint);
  const auto indices = select_utterances(corpus, a.subset, a.test_utts);
  std::ostringstream text;
  std::size_t rows = 0;
  for (std::size_t idx : indices) {
    const Utterance& utt = corpus.utterances[idx];
    if (a.kind == "speaker") {
      text << utt.utterance_id << ' ' << format_vector(extract_speaker_embedding(utt, m)) << "\n";
      ++rows;
      continue;
    }
    const auto segs = evaluation_segments(utt, m);
    const auto emb = extract_content_embeddings(segs, m);
    for (std::size_t n = 0; n < emb.size(); ++n, ++rows)
      text << utt.utterance_id << ':' << n << ' ' << format_vector(emb[n]) << "\n";
  }
  write_text(a.out, text.str());
  RunManifest rm;
  rm.command = "extract";
  rm.config_path = config;
  rm.inputs["checkpoint"] = a.checkpoint;
  rm.inputs["corpus"] = a.corpus;
  rm.outputs["embeddings"] = a.out;
  rm.checkpoint_hash = io::git_blob_hash_file(a.checkpoint);
  rm.effective_config = effective_config(app);
  rm.write(sidecar_manifest(a.out));
  out << "wrote " << rows << " " << a.kind << " embeddings to " << a.out << "\n";
  return kOk;
}

// ---- convert -------------------------------------------------------------

struct ConvertArgs {
  std::string checkpoint;
  std::string corpus;
  std::string source;
  std::string target;
  std::string out;
  std::string render_wav;
  std::string mu2 = "infer";
  bool reconstruct = false;
  bool all_pairs = false;
  int test_utts = 3;
  int gl_iters = 60;
  std::uint64_t phase_seed = 0;
};

inline Vector utterance_mu2(const Utterance& utt, const ModelParams& m, const std::string& source) {
  if (source == "infer") return infer_mu2(utt, m);
  if (source == "table") {
    if (!m.seq_means.contains(utt.utterance_id))
      throw DataError("utterance '" + utt.utterance_id + "' has no trained sequence mean in the checkpoint");
    return lookup_mu2(utt.utterance_id, m.seq_means);
  }
  throw UsageError("unknown mu2 source '" + source + "' (expected infer or table)");
}

inline Utterance convert_one(const Utterance& src, const Utterance* tar, const ModelParams& m,
                             const std::string& mu2_source) {
  if (!tar) return reconstruct_utterance(src, m);
  ConversionRequest req{src, utterance_mu2(*tar, m, mu2_source), std::nullopt};
  if (mu2_source == "table") req.source_mu2 = utterance_mu2(src, m, mu2_source);
  return convert_utterance(req, m);
}

inline void render(const Utterance& spec, const fs::path& wav, int iters, std::uint64_t phase_seed) {
  StftConfig stft;
  stft.n_bands = static_cast<int>(spec.feat_dim());
  write_wav(wav, griffin_lim_invert(spec, stft, iters, nullptr, phase_seed));
}

inline int cmd_convert(const ConvertArgs& a, const CLI::App* app, const std::string& config, std::ostream& out) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.mu2 != "infer" && a.mu2 != "table")
    throw UsageError("unknown mu2 source '" + a.mu2 + "' (expected infer or table)");
  const Corpus corpus = load_corpus(a.corpus);
  const ModelParams m = load_model(a.checkpoint);
  RunManifest rm;
  rm.command = "convert";
  rm.config_path = config;
  rm.seed = a.phase_seed;
  rm.inputs["checkpoint"] = a.checkpoint;
  rm.inputs["corpus"] = a.corpus;
  rm.checkpoint_hash = io::git_blob_hash_file(a.checkpoint);
  rm.effective_config = effective_config(app);

  if (a.all_pairs) {
    // One representative held-out utterance per speaker, converted to every
    // other held-out speaker.
    const CorpusSplit split = split_by_speaker(corpus, a.test_utts);
    std::vector<std::size_t> reps;
    std::vector<std::string> seen;
    for (std::size_t idx : split.test) {
      const auto& spk = corpus.utterances[idx].speaker_id;
      if (std::find(seen.begin(), seen.end(), spk) == seen.end()) {
        seen.push_back(spk);
        reps.push_back(idx);
      }
    }
    const fs::path dir = a.out;
    fs::create_directories(dir);
    std::ostringstream summary;
    summary.precision(10);
    summary << "source,target,dist_to_target,dist_to_source,closer_to_target\n";
    std::size_t pairs = 0, closer = 0;
    for (std::size_t s : reps)
      for (std::size_t t : reps) {
        if (s == t) continue;
        const Utterance& src = corpus.utterances[s];
        const Utterance& tar = corpus.utterances[t];
        const Utterance conv = convert_one(src, &tar, m, a.mu2);
        const std::string name = src.utterance_id + "__to__" + tar.utterance_id;
        write_utterance_file(dir / (name + ".fhvu"), conv);
        const Vector env = conv.frames.colwise().mean().transpose();
        const double dt = (env - corpus.manifest.speaker(tar.speaker_id).envelope).norm();
        const double ds = (env - corpus.manifest.speaker(src.speaker_id).envelope).norm();
        ++pairs;
        closer += dt < ds;
        summary << src.utterance_id << ',' << tar.utterance_id << ',' << dt << ',' << ds << ',' << (dt < ds)
                << "\n";
      }
    write_text(dir / "summary.csv", summary.str());
    rm.outputs["directory"] = dir.string();
    rm.outputs["summary"] = (dir / "summary.csv").string();
    rm.write(dir / "run_manifest.json");
    out << "converted " << pairs << " pairs, " << closer << " closer to target\n";
    return kOk;
  }

  if (a.source.empty()) throw UsageError("--source is required");
  if (!a.reconstruct && a.target.empty()) throw UsageError("--target is required unless --reconstruct is given");
  const Utterance& src = find_utterance(corpus, a.source);
  const Utterance* tar = a.reconstruct ? nullptr : &find_utterance(corpus, a.target);
  const Utterance conv = convert_one(src, tar, m, a.mu2);
  write_utterance_file(a.out, conv);
  rm.inputs["source"] = a.source;
  if (tar) rm.inputs["target"] = a.target;
  rm.outputs["spectrogram"] = a.out;
  if (!a.render_wav.empty()) {
    render(conv, a.render_wav, a.gl_iters, a.phase_seed);
    rm.outputs["wav"] = a.render_wav;
  }
  rm.write(sidecar_manifest(a.out));
  out << "wrote " << a.out << "\n";
  return kOk;
}

// ---- eval -------------------------------------------------------------

struct EvalArgs {
  TrainArgs train;
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::string csv;
  std::uint64_t trial_seed = 7;
  int sweep_seeds = 0;
  std::uint64_t first_seed = 1;
  int jobs = 1;
};

inline int cmd_eval(const EvalArgs& a, const CLI::App* app, const std::string& config, std::ostream& out,
                    std::ostream& err) {
  const Corpus corpus = load_corpus(a.corpus);
  const CorpusSplit split = split_by_speaker(corpus, a.train.test_utts);
  RunManifest rm;
  rm.command = "eval";
  rm.config_path = config;
  rm.inputs["corpus"] = a.corpus;
  rm.effective_config = effective_config(app);

  if (a.sweep_seeds > 0) {
    if (a.jobs < 1) throw UsageError("--jobs must be positive");
    if (!a.checkpoint.empty()) throw UsageError("--checkpoint and --sweep-seeds are mutually exclusive");
    SweepOptions opts;
    opts.seeds = a.sweep_seeds;
    opts.first_seed = a.first_seed;
    opts.jobs = a.jobs;
    opts.eval.trial_seed = a.trial_seed;
    opts.on_row = [&](const SweepRow& r) {
      err << mode_name(r.mode) << " seed " << r.seed << " eer " << r.report.eer << " silhouette "
          << r.report.silhouette << "\n";
    };
    const SweepResult result = run_seed_sweep(corpus, split, a.train.resolve(), opts);
    const std::string table = result.table();
    out << table;
    rm.seed = a.first_seed;
    if (!a.out.empty()) {
      const fs::path dir = a.out;
      write_text(dir / "sweep.csv", table);
      ordered_json runs = ordered_json::array();
      for (const auto& r : result.rows)
        runs.push_back({{"mode", mode_name(r.mode)}, {"seed", r.seed}, {"checkpoint_hash", r.checkpoint_hash}});
      rm.outputs["sweep"] = (dir / "sweep.csv").string();
      rm.outputs["runs"] = runs;
      rm.write(dir / "run_manifest.json");
    }
    return kOk;
  }

  const ModelParams m = load_model(a.checkpoint);
  const EvalReport report = evaluate(m, corpus, split, {a.trial_seed});
  out << report.json();
  rm.seed = a.trial_seed;
  rm.inputs["checkpoint"] = a.checkpoint;
  rm.checkpoint_hash = io::git_blob_hash_file(a.checkpoint);
  if (!a.csv.empty()) {
    write_text(a.csv, std::string(EvalReport::kCsvHeader) + "\n" + report.csv_row() + "\n");
    rm.outputs["csv"] = a.csv;
  }
  if (!a.out.empty()) {
    write_text(a.out, report.json());
    rm.outputs["report"] = a.out;
    rm.write(sidecar_manifest(a.out));
  } else if (!a.csv.empty()) {
    rm.write(sidecar_manifest(a.csv));
  }
  return kOk;
}

// ---- entry point -------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Factorized hierarchical VAE with a contrastive speaker loss", "fhvae"};
  app.require_subcommand(1);

  std::string config;
  const auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value configuration file; flags override it");
    sub->allow_config_extras(CLI::config_extras_mode::error);
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic corpus");
  with_config(g);
  g->add_option(names("speakers"), gen.synth.n_speakers)->capture_default_str();
  g->add_option(names("utts"), gen.synth.utts_per_speaker, "utterances per speaker")->capture_default_str();
  g->add_option(names("units_per_utt"), gen.synth.units_per_utt)->capture_default_str();
  g->add_option(names("content_units"), gen.synth.n_content_units)->capture_default_str();
  g->add_option(names("feat_dim"), gen.synth.feat_dim)->capture_default_str();
  g->add_option(names("noise"), gen.synth.noise_std)->capture_default_str();
  g->add_option(names("min_sep"), gen.synth.min_sep)->capture_default_str();
  g->add_option(names("seed"), gen.synth.seed)->capture_default_str();
  g->add_option(names("out"), gen.out, "corpus directory");

  TrainCmdArgs train;
  auto* t = app.add_subcommand("train", "train a checkpoint");
  with_config(t);
  train.train.add_to(t);
  t->add_option(names("corpus"), train.corpus);
  t->add_option(names("out"), train.out, "run directory");
  t->add_option(names("checkpoint_every"), train.train.cfg.checkpoint_every)->capture_default_str();

  ExtractArgs ex;
  auto* x = app.add_subcommand("extract", "write speaker or content embeddings");
  with_config(x);
  x->add_option(names("checkpoint"), ex.checkpoint);
  x->add_option(names("corpus"), ex.corpus);
  x->add_option(names("out"), ex.out, "text file, one embedding per line");
  x->add_option(names("kind"), ex.kind, "speaker | content")->capture_default_str();
  x->add_option(names("subset"), ex.subset, "all | train | test")->capture_default_str();
  x->add_option(names("test_utts"), ex.test_utts)->capture_default_str();

  ConvertArgs cv;
  auto* c = app.add_subcommand("convert", "voice conversion by shifting the sequence mean");
  with_config(c);
  c->add_option(names("checkpoint"), cv.checkpoint);
  c->add_option(names("corpus"), cv.corpus);
  c->add_option(names("source"), cv.source, "source utterance id");
  c->add_option(names("target"), cv.target, "target utterance id");
  c->add_option(names("out"), cv.out, "output .fhvu file (directory with --all-pairs)");
  c->add_option(names("render_wav"), cv.render_wav, "also write a Griffin-Lim waveform");
  c->add_option(names("mu2"), cv.mu2, "infer | table")->capture_default_str();
  c->add_flag(names("reconstruct"), cv.reconstruct, "decode the source without conversion");
  c->add_flag(names("all_pairs"), cv.all_pairs, "convert between all held-out speakers");
  c->add_option(names("test_utts"), cv.test_utts)->capture_default_str();
  c->add_option(names("gl_iters"), cv.gl_iters)->capture_default_str();
  c->add_option(names("phase_seed"), cv.phase_seed)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint or run a base/contrastive seed sweep");
  with_config(e);
  ev.train.add_to(e);
  e->add_option(names("checkpoint"), ev.checkpoint);
  e->add_option(names("corpus"), ev.corpus);
  e->add_option(names("out"), ev.out, "report JSON (sweep: output directory)");
  e->add_option(names("csv"), ev.csv, "report as a CSV row");
  e->add_option(names("trial_seed"), ev.trial_seed)->capture_default_str();
  e->add_option(names("sweep_seeds"), ev.sweep_seeds, "train and evaluate k seeds per mode")
      ->capture_default_str();
  e->add_option(names("first_seed"), ev.first_seed)->capture_default_str();
  e->add_option(names("jobs"), ev.jobs, "parallel trainings in a sweep")->capture_default_str();

  try {
    app.parse(argc, argv);
    // Config values only fill options the command line left unset.
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) {
        err << "error: cannot read config file " << config << "\n";
        return kData;
      }
      app.get_subcommands().front()->parse_from_stream(in);
    }
  } catch (const CLI::ParseError& ex) {
    // Help requests exit 0; everything else is a usage error.
    return app.exit(ex, out, err) == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string& name = sub->get_name();
    if (name == "gen") return cmd_gen(gen, sub, config, out);
    if (name == "train") return cmd_train(train, sub, config, out, err);
    if (name == "extract") return cmd_extract(ex, sub, config, out);
    if (name == "convert") return cmd_convert(cv, sub, config, out);
    return cmd_eval(ev, sub, config, out, err);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumeric;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kData;
  }
}

}  // namespace fhvae::cli
