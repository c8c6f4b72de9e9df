#include "ebmgan/cli.hpp"
#include "ebmgan/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace ebmgan;
using ebmgan::testing::TempDir;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "ebmgan");
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

const char* kSmallConfig =
    "batch_size = 16\niterations = 30\nhidden_width = 8\nlatent_dim = 2\n"
    "similarity_every = 10\nsimilarity_batch = 16\nstats_samples = 32\n";

// Generates data, trains a small model and extracts AFVs for the training set.
struct Pipeline {
  TempDir dir{"cli"};
  Pipeline() {
    EXPECT_EQ(run({"gen-dataset", "--kind", "gaussian-mixture-3", "-n", "90", "--seed", "1", "--out",
                   (dir / "data.ds").string()})
                  .code,
              0);
    dump(dir / "cfg.txt", kSmallConfig);
    EXPECT_EQ(run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "data.ds").string(), "--out",
                   (dir / "run").string()})
                  .code,
              0);
    EXPECT_EQ(run({"extract-afv", "--checkpoint", (dir / "run" / "final.ckpt").string(), "--data",
                   (dir / "data.ds").string(), "--out", (dir / "data.afv").string(), "--samples", "64"})
                  .code,
              0);
  }
};

}  // namespace

TEST(Cli, NoArgumentsIsAUsageError) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
}

TEST(Cli, GenDatasetWritesBinaryAndCsv) {
  TempDir dir("cli");
  ASSERT_EQ(run({"gen-dataset", "--kind", "rings", "-n", "20", "--out", (dir / "r.ds").string()}).code, 0);
  EXPECT_EQ(read_dataset(dir / "r.ds").count(), 20u);
  ASSERT_EQ(run({"gen-dataset", "--kind", "rings", "-n", "20", "--csv", "--out", (dir / "r.csv").string()}).code, 0);
  ASSERT_EQ(run({"convert-csv", "--in", (dir / "r.csv").string(), "--out", (dir / "r2.ds").string(), "--labels",
                 "--name", "rings"})
                .code,
            0);
  EXPECT_EQ(read_dataset(dir / "r2.ds").features, read_dataset(dir / "r.ds").features);
  const CliRun bad = run({"gen-dataset", "--kind", "spirals", "--out", (dir / "x").string()});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_NE(bad.err.find("spirals"), std::string::npos);
}

TEST(Cli, ZeroIterationsWritesTheInitialCheckpoint) {
  TempDir dir("cli");
  run({"gen-dataset", "--kind", "two-moons", "-n", "50", "--out", (dir / "d.ds").string()});
  dump(dir / "cfg.txt", "iterations = 0\nhidden_width = 8\n");
  const CliRun r =
      run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "d.ds").string(), "--out",
           (dir / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Checkpoint c = load_checkpoint(dir / "run" / "final.ckpt");
  EXPECT_EQ(c.state.iteration, 0u);
  EXPECT_EQ(c.state, TrainState::initial(c.config, 2));
  EXPECT_TRUE(read_metrics_log(dir / "run" / "metrics.jsonl").records.empty());
}

TEST(Cli, MalformedConfigKeyIsNamed) {
  TempDir dir("cli");
  run({"gen-dataset", "--kind", "two-moons", "-n", "50", "--out", (dir / "d.ds").string()});
  dump(dir / "cfg.txt", "iterations = 5\nlearning_rate_g = 0.1\n");
  const CliRun r =
      run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "d.ds").string(), "--out",
           (dir / "run").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("learning_rate_g"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "final.ckpt"));
}

TEST(Cli, DefaultConfigWritesOneRecordPerIteration) {
  TempDir dir("cli");
  run({"gen-dataset", "--kind", "two-moons", "-n", "500", "--out", (dir / "d.ds").string()});
  const CliRun r = run({"train", "--data", (dir / "d.ds").string(), "--out", (dir / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const MetricsLog log = read_metrics_log(dir / "run" / "metrics.jsonl");
  ASSERT_EQ(log.records.size(), TrainConfig{}.iterations);
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    EXPECT_EQ(log.records[i].iteration, i + 1);
    EXPECT_EQ(log.records[i].fisher_similarity_train.has_value(), (i + 1) % TrainConfig{}.similarity_every == 0);
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "run" / "summary.json"));
  EXPECT_EQ(summary["iterations"], TrainConfig{}.iterations);
  EXPECT_EQ(summary["checkpoint_id"], load_checkpoint(dir / "run" / "final.ckpt").id);
}

TEST(Cli, ResumeReproducesTheMetricsLogExactly) {
  TempDir dir("cli");
  run({"gen-dataset", "--kind", "two-moons", "-n", "80", "--out", (dir / "d.ds").string()});
  dump(dir / "cfg.txt", std::string(kSmallConfig) + "checkpoint_every = 10\n");
  ASSERT_EQ(run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "d.ds").string(), "--out",
                 (dir / "full").string()})
                .code,
            0);
  std::filesystem::create_directories(dir / "part");
  std::filesystem::copy_file(dir / "full" / "metrics.jsonl", dir / "part" / "metrics.jsonl");
  // Simulate a crash mid-write after the second checkpoint.
  const std::string full_log = slurp(dir / "full" / "metrics.jsonl");
  dump(dir / "part" / "metrics.jsonl", full_log.substr(0, full_log.size() - 40));
  const CliRun r = run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "d.ds").string(),
                        "--out", (dir / "part").string(), "--resume",
                        (dir / "full" / "checkpoint-00000020.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "part" / "metrics.jsonl"), full_log);
  EXPECT_EQ(slurp(dir / "part" / "final.ckpt"), slurp(dir / "full" / "final.ckpt"));
}

TEST(Cli, TrainingIsDeterministicAcrossRuns) {
  TempDir dir("cli");
  run({"gen-dataset", "--kind", "rings", "-n", "80", "--out", (dir / "d.ds").string()});
  dump(dir / "cfg.txt", kSmallConfig);
  for (const char* name : {"a", "b"})
    ASSERT_EQ(run({"train", "--config", (dir / "cfg.txt").string(), "--data", (dir / "d.ds").string(), "--out",
                   (dir / name).string()})
                  .code,
              0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "b" / "metrics.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "final.ckpt"), slurp(dir / "b" / "final.ckpt"));
}

TEST(Cli, ExtractAfvRejectsDimensionMismatch) {
  Pipeline p;
  const Dataset wide{"wide", Tensor({4, 3}, 0.5), std::nullopt};
  write_dataset(p.dir / "wide.ds", wide);
  const CliRun r = run({"extract-afv", "--checkpoint", (p.dir / "run" / "final.ckpt").string(), "--data",
                        (p.dir / "wide.ds").string(), "--out", (p.dir / "wide.afv").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("3"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(p.dir / "wide.afv"));
}

TEST(Cli, ExtractAfvWritesVectorsStatsAndIds) {
  Pipeline p;
  const AfvFile afv = read_afv_file(p.dir / "data.afv");
  const Checkpoint c = load_checkpoint(p.dir / "run" / "final.ckpt");
  EXPECT_EQ(afv.vectors.size(), 90u);
  EXPECT_EQ(afv.vectors[0].values.size(), c.state.d.params.size());
  EXPECT_EQ(afv.checkpoint_id, c.id);
  EXPECT_EQ(afv.labels[0], 0);
  const FisherStats stats = read_fisher_stats(p.dir / "data.afv.stats", c.state.d.params.layout);
  EXPECT_EQ(stats.n_samples, 64u);
  // Reusing the statistics reproduces the vectors exactly.
  ASSERT_EQ(run({"extract-afv", "--checkpoint", (p.dir / "run" / "final.ckpt").string(), "--data",
                 (p.dir / "data.ds").string(), "--out", (p.dir / "again.afv").string(), "--stats-in",
                 (p.dir / "data.afv.stats").string()})
                .code,
            0);
  EXPECT_EQ(slurp(p.dir / "again.afv"), slurp(p.dir / "data.afv"));
}

TEST(Cli, DistanceKnnAndClassify) {
  Pipeline p;
  const std::string afv = (p.dir / "data.afv").string();

  const CliRun pair = run({"distance", "--afv", afv, "--pair", "0", "0"});
  ASSERT_EQ(pair.code, 0) << pair.err;
  EXPECT_NE(pair.out.find("distance,0"), std::string::npos) << pair.out;
  EXPECT_NE(pair.out.find("similarity,1"), std::string::npos) << pair.out;

  const CliRun sets = run({"distance", "--afv", afv, "--sets-by-label"});
  ASSERT_EQ(sets.code, 0) << sets.err;
  EXPECT_EQ(std::count(sets.out.begin(), sets.out.end(), '\n'), 4);

  EXPECT_EQ(run({"distance", "--afv", afv, "--pair", "0", "900"}).code, kExitUsage);

  const CliRun knn = run({"knn", "--afv", afv, "--query", "5", "-k", "3"});
  ASSERT_EQ(knn.code, 0) << knn.err;
  EXPECT_EQ(knn.out.substr(0, knn.out.find('\n')), "rank,index,source_id,label,distance");
  EXPECT_NE(knn.out.find("\n1,5,"), std::string::npos) << knn.out;
  const CliRun knn_ex = run({"knn", "--afv", afv, "--query", "5", "-k", "3", "--exclude-self"});
  EXPECT_EQ(knn_ex.out.find("\n1,5,"), std::string::npos) << knn_ex.out;

  const CliRun cls = run({"classify", "--train", afv, "--test", afv, "--epochs", "50"});
  ASSERT_EQ(cls.code, 0) << cls.err;
  EXPECT_NE(cls.out.find("test_accuracy,"), std::string::npos) << cls.out;

  const std::string ds = (p.dir / "data.ds").string();
  for (const char* kind : {"raw", "dpool", "afv"}) {
    const CliRun r = run({"classify", "--train", ds, "--test", ds, "--features", kind, "--checkpoint",
                          (p.dir / "run" / "final.ckpt").string(), "--epochs", "20", "--samples", "32"});
    EXPECT_EQ(r.code, 0) << kind << ": " << r.err;
    EXPECT_NE(r.out.find(std::string("features,") + kind), std::string::npos) << r.out;
  }
}

TEST(Cli, MonitorEmitsOneRowPerMonitoredIteration) {
  Pipeline p;
  const CliRun r = run({"monitor", "--metrics", (p.dir / "run" / "metrics.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line,
            "iteration,fisher_similarity_train,fisher_similarity_val,delta_g,d_loss,g_loss,mean_d_real,mean_d_fake");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 30u);
}

TEST(Cli, MonitorWarnsOnTruncatedTail) {
  Pipeline p;
  const std::string log = slurp(p.dir / "run" / "metrics.jsonl");
  dump(p.dir / "cut.jsonl", log.substr(0, log.size() - 5));
  const CliRun r = run({"monitor", "--metrics", (p.dir / "cut.jsonl").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Cli, OracleCheckPasses) {
  const CliRun r = run({"oracle-check", "--seed", "3"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}
