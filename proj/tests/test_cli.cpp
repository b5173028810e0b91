// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include "bamforge/checkpoint.hpp"
#include "bamforge/cli.hpp"
#include "bamforge/errors.hpp"
#include "bamforge/experiment.hpp"
#include "test_util.hpp"

namespace bamforge {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;
using testing::tiny_experiment_text;

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& file, const std::string& text) { std::ofstream(file) << text; }

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(run({"analyze", "--bogus"}).code, kExitConfig);
  EXPECT_EQ(run({"pretrain"}).code, kExitConfig);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, AnalyzeReproducesTables) {
  const auto start = std::chrono::steady_clock::now();
  const Result r = run({"analyze"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_LT(seconds, 1.0);
  for (const char* v : {"587,209,728", "776,002,560", "662,731,776", "738,253,824", "612,400,128", "700,480,512",
                        "587,234,304", "35,651,584", "12,589,056", "48,257,024", "8,912,896", "21,510,144",
                        "37,767,168", "46,692,352"})
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
}

TEST(Cli, AnalyzeMatch) {
  const Result r = run({"analyze", "--match", "btx=100e6"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("44574120"), std::string::npos);
  EXPECT_EQ(run({"analyze", "--match", "nothing"}).code, kExitConfig);
  EXPECT_EQ(run({"analyze", "--match", "gpt=5"}).code, kExitConfig);
}

TEST(Cli, AnalyzeDenseConfig) {
  TempDir dir("cli_analyze");
  write(dir / "m.cfg", "d_model=64\nd_ff=256\nn_heads=4\nn_layers=2\nvocab=256\nn_ctx=64\n");
  const Result r = run({"analyze", "--config", (dir / "m.cfg").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  // Tied: 256*64 + 64 + 2 * (64 + 4*64*64 + 64*256 + 64*128).
  const std::string total = "98,496";
  const auto active = r.out.find("Active Params"), tot = r.out.find("Total Params");
  EXPECT_NE(r.out.find(total, active), std::string::npos);
  EXPECT_NE(r.out.find(total, tot), std::string::npos);

  write(dir / "bad.cfg", "d_model=64\nwidth=3\n");
  EXPECT_EQ(run({"analyze", "--config", (dir / "bad.cfg").string()}).code, kExitConfig);
  EXPECT_EQ(run({"analyze", "--config", (dir / "missing.cfg").string()}).code, kExitConfig);
}

TEST(Experiment, StrictParsing) {
  std::istringstream ok(tiny_experiment_text());
  EXPECT_NO_THROW(parse_experiment(ok, "tiny"));
  for (const std::string& bad : std::vector<std::string>{tiny_experiment_text() + "[eval]\nsurprise=1\n",
                                tiny_experiment_text() + "[extras]\nx=1\n", "[model]\nd_model=sixteen\n",
                                tiny_experiment_text() + "[domains]\nnames=general\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(parse_experiment(in, "bad").validate(), ConfigError) << bad;
  }
}

TEST(Experiment, WriteReadRoundTrip) {
  std::istringstream in(tiny_experiment_text());
  const ExperimentConfig a = parse_experiment(in, "tiny");
  std::ostringstream first;
  write_experiment(first, a);
  std::istringstream again(first.str());
  std::ostringstream second;
  write_experiment(second, parse_experiment(again, "again"));
  EXPECT_EQ(first.str(), second.str());
}

TEST(Cli, MissingCorpusIsConfigError) {
  TempDir dir("cli_corpus");
  write(dir / "exp.cfg", tiny_experiment_text() + "[domains]\ncorpus_dir=" + (dir / "nowhere").string() + "\n");
  const Result r = run({"pretrain", "--config", (dir / "exp.cfg").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitConfig) << r.err;
}

TEST(Cli, NonEmptyOutputRejected) {
  TempDir dir("cli_nonempty");
  write(dir / "exp.cfg", tiny_experiment_text());
  fs::create_directories(dir / "o");
  write(dir / "o" / "keep.txt", "x");
  EXPECT_EQ(run({"pretrain", "--config", (dir / "exp.cfg").string(), "--out", (dir / "o").string()}).code,
            kExitConfig);
}

TEST(Cli, UnwritableOutputIsIoError) {
  TempDir dir("cli_io");
  write(dir / "exp.cfg", tiny_experiment_text());
  write(dir / "file", "x");
  EXPECT_EQ(run({"pretrain", "--config", (dir / "exp.cfg").string(), "--out", (dir / "file" / "o").string()}).code,
            kExitIo);
}

TEST(Cli, DivergenceIsNumericError) {
  TempDir dir("cli_numeric");
  std::string text = tiny_experiment_text();
  text.replace(text.find("peak_lr=1e-2"), 12, "peak_lr=1e300");
  write(dir / "exp.cfg", text);
  const Result r = run({"pretrain", "--config", (dir / "exp.cfg").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
  std::size_t dumps = 0;
  for (const auto& e : fs::directory_iterator(dir / "o")) dumps += e.path().extension() == ".batch";
  EXPECT_EQ(dumps, 1u);
}

TEST(Cli, EvalMissingCheckpoint) {
  TempDir dir("cli_eval_missing");
  write(dir / "exp.cfg", tiny_experiment_text());
  EXPECT_EQ(run({"eval", "--config", (dir / "exp.cfg").string(), (dir / "none").string()}).code, kExitConfig);
}

class CliFlow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli_flow");
    write(*dir_ / "exp.cfg", tiny_experiment_text());
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string cfg() { return (*dir_ / "exp.cfg").string(); }
  static fs::path path(const std::string& child) { return *dir_ / child; }

  static TempDir* dir_;
};

TempDir* CliFlow::dir_ = nullptr;

TEST_F(CliFlow, PretrainIsByteIdenticalOnRerun) {
  for (const char* out : {"p1", "p2"}) {
    const Result r = run({"pretrain", "--config", cfg(), "--out", path(out).string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  const auto a = tree(path("p1")), b = tree(path("p2"));
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.contains("seed/manifest.txt"));
  EXPECT_TRUE(a.contains("metrics.csv"));
  EXPECT_TRUE(a.contains("experiment.cfg"));

  const Result other = run({"pretrain", "--config", cfg(), "--seed", "8", "--out", path("p3").string()});
  ASSERT_EQ(other.code, kExitOk) << other.err;
  EXPECT_NE(tree(path("p3")).at("seed/embedding_in.bin"), a.at("seed/embedding_in.bin"));
}

TEST_F(CliFlow, BranchMixEval) {
  ASSERT_EQ(run({"pretrain", "--config", cfg(), "--out", path("seed_run").string()}).code, kExitOk);
  const std::string seed = path("seed_run/seed").string();

  // Domains trained in separate invocations match a joint invocation.
  ASSERT_EQ(run({"branch-cpt", "--config", cfg(), "--from", seed, "--out", path("cpt").string()}).code, kExitOk);
  ASSERT_EQ(run({"branch-cpt", "--config", cfg(), "--from", seed, "--domains", "sorted", "--out",
                 path("cpt_sorted").string()})
                .code,
            kExitOk);
  EXPECT_EQ(tree(path("cpt/expert_sorted")), tree(path("cpt_sorted/expert_sorted")));
  EXPECT_EQ(load_checkpoint(path("cpt/expert_arith")).meta.domain_tag, "arith");
  EXPECT_EQ(load_checkpoint(path("cpt/expert_arith")).meta.phase, Phase::specialized);
  EXPECT_EQ(run({"branch-cpt", "--config", cfg(), "--from", seed, "--domains", "law", "--out",
                 path("cpt_law").string()})
                .code,
            kExitConfig);

  write(path("recipe.cfg"), "experiment=exp.cfg\nseed_ckpt=seed_run/seed\n"
                            "experts=cpt/expert_arith,cpt/expert_sorted\narch=btx\nextra_seed_ffn_copies=2\n");
  const Result mix = run({"mix", "--config", path("recipe.cfg").string(), "--out", path("mix").string()});
  ASSERT_EQ(mix.code, kExitOk) << mix.err;
  const Checkpoint m = load_checkpoint(path("mix/mixture"));
  EXPECT_EQ(m.config.arch, Arch::btx);
  EXPECT_EQ(m.config.n_experts, 5u);
  EXPECT_TRUE(fs::exists(path("mix/recipe.cfg")));

  const Result bam = run({"mix", "--config", path("recipe.cfg").string(), "--arch", "bam_expert_kv", "--match", "CM",
                          "--out", path("mix_bam").string()});
  ASSERT_EQ(bam.code, kExitOk) << bam.err;
  EXPECT_EQ(load_checkpoint(path("mix_bam/mixture")).config.n_attn_experts, 3u);

  write(path("bad_recipe.cfg"), "experiment=exp.cfg\nseed_ckpt=seed_run/seed\ncolour=blue\n");
  EXPECT_EQ(run({"mix", "--config", path("bad_recipe.cfg").string(), "--out", path("mix_bad").string()}).code,
            kExitConfig);

  const std::vector<std::string> eval_args{"eval", "--config", cfg(), seed, path("cpt/expert_arith").string(),
                                           path("mix/mixture").string()};
  const Result e1 = run(eval_args), e2 = run(eval_args);
  ASSERT_EQ(e1.code, kExitOk) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  std::istringstream lines(e1.out);
  std::string header, line;
  std::getline(lines, header);
  EXPECT_EQ(header, "model,general,arith,sorted,average");
  std::size_t rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 3u);

  std::vector<std::string> to_file = eval_args;
  to_file.insert(to_file.begin() + 1, {"--out", path("grid.csv").string()});
  ASSERT_EQ(run(to_file).code, kExitOk);
  EXPECT_EQ(slurp(path("grid.csv")), e1.out);
}

TEST_F(CliFlow, RunAndAblateAreDeterministic) {
  for (const char* out : {"run1", "run2"})
    ASSERT_EQ(run({"run", "--config", cfg(), "--out", path(out).string()}).code, kExitOk);
  const auto a = tree(path("run1"));
  EXPECT_EQ(a, tree(path("run2")));
  for (const char* f : {"grid.csv", "runs.csv", "summary.txt", "metrics.csv", "mix_btx/manifest.txt",
                        "mix_bam_expert_kv/manifest.txt", "seed/manifest.txt", "expert_arith/manifest.txt"})
    EXPECT_TRUE(a.contains(f)) << f;

  const Result ab = run({"ablate", "--config", cfg(), "--out", path("ablate").string()});
  ASSERT_EQ(ab.code, kExitOk) << ab.err;
  for (const char* label : {"btx", "bam_soft", "bam_top2", "bam_top1"})
    EXPECT_NE(ab.out.find(label), std::string::npos) << label;
}

}  // namespace
}  // namespace bamforge
