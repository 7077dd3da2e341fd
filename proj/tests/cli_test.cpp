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
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fhvae/cli.hpp"

namespace fhvae {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fhvae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

const std::vector<std::string> kTinyTrain = {"--steps", "4",      "--z-dim", "3",  "--hidden",
                                             "5",       "--batch", "6",       "--lr", "0.001"};

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("fhvae_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    corpus_ = (root_ / "corpus").string();
    const Result r = run({"gen", "--out", corpus_, "--speakers", "3", "--utts", "5", "--units-per-utt", "2",
                          "--content-units", "3", "--feat-dim", "6", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static Result train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--corpus", corpus_, "--out", out};
    args.insert(args.end(), kTinyTrain.begin(), kTinyTrain.end());
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  static fs::path root_;
  static std::string corpus_;
};
fs::path CliTest::root_;
std::string CliTest::corpus_;

TEST_F(CliTest, GenIsReproducible) {
  const std::string other = (root_ / "corpus2").string();
  ASSERT_EQ(run({"gen", "--out", other, "--speakers", "3", "--utts", "5", "--units-per-utt", "2",
                 "--content-units", "3", "--feat-dim", "6", "--seed", "4"})
                .code,
            0);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(corpus_)) {
    if (!entry.is_regular_file()) continue;
    const auto name = fs::relative(entry.path(), corpus_);
    if (name == "run_manifest.json") continue;
    EXPECT_EQ(io::git_blob_hash_file(entry.path()), io::git_blob_hash_file(fs::path(other) / name)) << name;
    ++files;
  }
  EXPECT_EQ(files, 16u);  // 15 utterances and the manifest
  EXPECT_TRUE(fs::exists(fs::path(corpus_) / "run_manifest.json"));
}

TEST_F(CliTest, GenRejectsBadArguments) {
  EXPECT_EQ(run({"gen", "--out", (root_ / "bad").string(), "--speakers", "1"}).code, cli::kData);
  EXPECT_EQ(run({"gen", "--no-such-flag"}).code, cli::kUsage);
  EXPECT_EQ(run({"gen"}).code, cli::kUsage);
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  const Result help = run({"train", "--help"});
  EXPECT_EQ(help.code, cli::kOk);
  EXPECT_NE(help.out.find("--lambda"), std::string::npos);
}

TEST_F(CliTest, TrainWritesCheckpointMetricsAndManifest) {
  const fs::path dir = root_ / "run_a";
  const Result r = train(dir.string(), {"--checkpoint-every", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(line_count(metrics), 5u);
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_step2.fhvc"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_step4.fhvc"));
  const std::string hash = io::git_blob_hash_file(dir / "checkpoint.fhvc");
  EXPECT_NE(r.out.find(hash), std::string::npos) << r.out;
  const auto manifest = nlohmann::json::parse(slurp(dir / "run_manifest.json"));
  EXPECT_EQ(manifest["checkpoint_hash"], hash);
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_NE(manifest["effective_config"].get<std::string>().find("steps=4"), std::string::npos)
      << manifest["effective_config"];
  EXPECT_EQ(load_checkpoint(dir / "checkpoint.fhvc").seq_means.size(), 6u);  // 2 per speaker held in
}

TEST_F(CliTest, TrainFailuresMapToExitCodes) {
  EXPECT_EQ(train((root_ / "x").string(), {"--mode", "bogus"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--corpus", corpus_, "--out", (root_ / "x").string(), "--batch", "7"}).code,
            cli::kUsage);
  EXPECT_EQ(run({"train", "--corpus", (root_ / "missing").string(), "--out", (root_ / "x").string()}).code,
            cli::kData);
  EXPECT_EQ(train((root_ / "x").string(), {"--test-utts", "4"}).code, cli::kData);
}

TEST_F(CliTest, ZeroWeightContrastiveMatchesBase) {
  const std::vector<std::string> zero{"--lambda", "0", "--beta", "0"};
  auto base = zero, cont = zero;
  base.insert(base.end(), {"--mode", "base"});
  cont.insert(cont.end(), {"--mode", "contrastive"});
  ASSERT_EQ(train((root_ / "base0").string(), base).code, 0);
  ASSERT_EQ(train((root_ / "cont0").string(), cont).code, 0);
  EXPECT_EQ(io::git_blob_hash_file(root_ / "base0" / "checkpoint.fhvc"),
            io::git_blob_hash_file(root_ / "cont0" / "checkpoint.fhvc"));
  ASSERT_EQ(train((root_ / "cont1").string(), {"--mode", "contrastive"}).code, 0);
  ASSERT_EQ(train((root_ / "base1").string(), {"--mode", "base"}).code, 0);
  EXPECT_NE(io::git_blob_hash_file(root_ / "base1" / "checkpoint.fhvc"),
            io::git_blob_hash_file(root_ / "cont1" / "checkpoint.fhvc"));
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
  const fs::path ini = root_ / "train.ini";
  std::ofstream(ini) << "steps = 3\nz_dim = 3\nhidden = 5\nbatch = 6\n";
  const fs::path a = root_ / "cfg_a", b = root_ / "cfg_b";
  ASSERT_EQ(run({"train", "--config", ini.string(), "--corpus", corpus_, "--out", a.string()}).code, 0);
  EXPECT_EQ(line_count(slurp(a / "metrics.csv")), 4u);
  ASSERT_EQ(run({"train", "--config", ini.string(), "--corpus", corpus_, "--out", b.string(), "--steps", "2"})
                .code,
            0);
  EXPECT_EQ(line_count(slurp(b / "metrics.csv")), 3u);
  const auto manifest = nlohmann::json::parse(slurp(b / "run_manifest.json"));
  EXPECT_EQ(manifest["config"], ini.string());

  const fs::path bad = root_ / "bad.ini";
  std::ofstream(bad) << "stepz = 3\n";
  EXPECT_EQ(run({"train", "--config", bad.string(), "--corpus", corpus_, "--out", a.string()}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--config", (root_ / "none.ini").string(), "--corpus", corpus_, "--out", a.string()}).code,
            cli::kData);
}

class TrainedCliTest : public CliTest {
 protected:
  static void SetUpTestSuite() {
    CliTest::SetUpTestSuite();
    ckpt_ = (root_ / "trained" / "checkpoint.fhvc").string();
    ASSERT_EQ(train((root_ / "trained").string()).code, 0);
  }
  static std::string ckpt_;
};
std::string TrainedCliTest::ckpt_;

TEST_F(TrainedCliTest, ExtractWritesOneLinePerEmbedding) {
  const fs::path spk = root_ / "spk.txt", content = root_ / "content.txt";
  ASSERT_EQ(run({"extract", "--checkpoint", ckpt_, "--corpus", corpus_, "--out", spk.string()}).code, 0);
  const std::string text = slurp(spk);
  EXPECT_EQ(line_count(text), 15u);
  std::istringstream first(text.substr(0, text.find('\n')));
  std::string id;
  std::vector<double> values;
  first >> id;
  for (double v; first >> v;) values.push_back(v);
  EXPECT_EQ(values.size(), 3u);
  const Corpus corpus = read_corpus(corpus_);
  const Vector want = extract_speaker_embedding(cli::find_utterance(corpus, id), load_checkpoint(ckpt_));
  for (std::size_t k = 0; k < values.size(); ++k) EXPECT_DOUBLE_EQ(values[k], want(static_cast<Index>(k)));
  EXPECT_TRUE(fs::exists(cli::sidecar_manifest(spk)));

  ASSERT_EQ(run({"extract", "--checkpoint", ckpt_, "--corpus", corpus_, "--out", content.string(), "--kind",
                 "content", "--subset", "test"})
                .code,
            0);
  EXPECT_EQ(line_count(slurp(content)), 9u * 2u);  // 3 test utterances per speaker, 2 segments each
  EXPECT_EQ(run({"extract", "--checkpoint", ckpt_, "--corpus", corpus_, "--out", content.string(), "--kind",
                 "pitch"})
                .code,
            cli::kUsage);
  EXPECT_EQ(run({"extract", "--checkpoint", (root_ / "nope.fhvc").string(), "--corpus", corpus_, "--out",
                 content.string()})
                .code,
            cli::kData);
}

TEST_F(TrainedCliTest, SelfConversionEqualsReconstruction) {
  const Corpus corpus = read_corpus(corpus_);
  const std::string id = corpus.utterances[4].utterance_id;
  const fs::path conv = root_ / "self.fhvu", rec = root_ / "rec.fhvu";
  ASSERT_EQ(run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--source", id, "--target", id, "--out",
                 conv.string()})
                .code,
            0);
  ASSERT_EQ(run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--source", id, "--reconstruct",
                 "--out", rec.string()})
                .code,
            0);
  EXPECT_EQ(slurp(conv), slurp(rec));
  EXPECT_TRUE(fs::exists(cli::sidecar_manifest(conv)));
  EXPECT_EQ(run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--source", "nobody", "--reconstruct",
                 "--out", rec.string()})
                .code,
            cli::kData);
  EXPECT_EQ(run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--source", id, "--out", rec.string()})
                .code,
            cli::kUsage);
}

TEST_F(TrainedCliTest, ConvertAllPairsAndRender) {
  const fs::path dir = root_ / "pairs";
  const Result r = run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--all-pairs", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(slurp(dir / "summary.csv")), 1u + 6u);
  std::size_t spectra = 0;
  for (const auto& e : fs::directory_iterator(dir)) spectra += e.path().extension() == ".fhvu";
  EXPECT_EQ(spectra, 6u);

  const Corpus corpus = read_corpus(corpus_);
  const fs::path wav = root_ / "conv.wav";
  ASSERT_EQ(run({"convert", "--checkpoint", ckpt_, "--corpus", corpus_, "--source",
                 corpus.utterances[0].utterance_id, "--target", corpus.utterances[14].utterance_id, "--out",
                 (root_ / "conv.fhvu").string(), "--render-wav", wav.string(), "--gl-iters", "3"})
                .code,
            0);
  const Waveform w = read_wav(wav);
  EXPECT_EQ(w.sample_rate, 16000);
  EXPECT_EQ(w.samples.size(), static_cast<std::size_t>((40 - 1) * 160 + 400));
}

TEST_F(TrainedCliTest, EvalReportsJsonAndCsv) {
  const fs::path json = root_ / "report.json", csv = root_ / "report.csv";
  const Result r = run({"eval", "--checkpoint", ckpt_, "--corpus", corpus_, "--out", json.string(), "--csv",
                        csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(r.out);
  for (const char* key : {"eer", "speaker_id_acc", "content_probe_acc", "silhouette"})
    EXPECT_TRUE(report.contains(key)) << key;
  EXPECT_EQ(nlohmann::json::parse(slurp(json)), report);
  const std::string table = slurp(csv);
  EXPECT_EQ(table.substr(0, table.find('\n')), EvalReport::kCsvHeader);
  EXPECT_EQ(line_count(table), 2u);
  const auto manifest = nlohmann::json::parse(slurp(cli::sidecar_manifest(json)));
  EXPECT_EQ(manifest["checkpoint_hash"], io::git_blob_hash_file(ckpt_));
}

TEST_F(CliTest, EvalSweepEmitsRowsAndMedians) {
  std::vector<std::string> args{"eval", "--corpus", corpus_, "--sweep-seeds", "2", "--out", root_.string()};
  args.insert(args.end(), kTinyTrain.begin(), kTinyTrain.end());
  const Result r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(r.out), 1u + 4u + 2u);
  EXPECT_NE(r.out.find("base,median"), std::string::npos);
  EXPECT_NE(r.out.find("contrastive,median"), std::string::npos);
  EXPECT_EQ(slurp(root_ / "sweep.csv"), r.out);
  const auto manifest = nlohmann::json::parse(slurp(root_ / "run_manifest.json"));
  EXPECT_EQ(manifest["outputs"]["runs"].size(), 4u);
  args.insert(args.end(), {"--checkpoint", "x.fhvc"});
  EXPECT_EQ(run(args).code, cli::kUsage);
}

TEST(CliBinary, ExitStatusReachesTheShell) {
  const std::string bin = FHVAE_CLI_PATH;
  const auto status = [&](const std::string& args) {
    const int raw = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("train --mode"), 1);
  const fs::path tmp = fs::temp_directory_path() / ("fhvae_bin_" + std::to_string(::getpid()));
  EXPECT_EQ(status("gen --speakers 1 --out " + tmp.string()), 2);
  fs::remove_all(tmp);
}

}  // namespace
}  // namespace fhvae
