#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "kshield/dataset.hpp"
#include "kshield/model.hpp"
#include "kshield/report.hpp"

namespace fs = std::filesystem;
using namespace kshield;

namespace {

const char* cli_path() { return KSHIELD_CLI_PATH; }

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "kshield_cli_out.txt").string();
  const std::string cmd = std::string(cli_path()) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  res.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return res;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// One shared workspace: gen-data + train are slow enough that the pipeline
// tests build on each other in order.
struct CliWorkspace {
  fs::path dir;
  std::string data, ckpt;

  CliWorkspace() {
    dir = fs::temp_directory_path() / "kshield_cli_ws";
    fs::remove_all(dir);
    fs::create_directories(dir);
    data = (dir / "data.ksd").string();
    ckpt = (dir / "model.ckpt").string();
    CliResult gen = run_cli("gen-data --classes 3 --per-class 12 --height 16 --width 16 --seed 5 --out " + data);
    if (gen.exit_code != 0) throw std::runtime_error("gen-data failed: " + gen.output);
    CliResult train = run_cli("train --data " + data + " --arch 4,8,8,16 --epochs 6 --seed 3 --out " + ckpt);
    if (train.exit_code != 0) throw std::runtime_error("train failed: " + train.output);
  }
};

CliWorkspace& ws() {
  static CliWorkspace instance;
  return instance;
}

}  // namespace

TEST(Cli, HelpListsSubcommandsAndExitsZero) {
  CliResult res = run_cli("--help");
  EXPECT_EQ(res.exit_code, 0);
  for (const char* cmd : {"gen-data", "train", "build-db", "attack", "eval", "sweep"}) {
    EXPECT_NE(res.output.find(cmd), std::string::npos) << cmd;
  }
}

TEST(Cli, SubcommandHelpListsFlagsWithDefaults) {
  CliResult res = run_cli("attack --help");
  EXPECT_EQ(res.exit_code, 0);
  for (const char* flag : {"--model", "--data", "--method", "--budget", "--iters", "--seed", "--out"}) {
    EXPECT_NE(res.output.find(flag), std::string::npos) << flag;
  }
  EXPECT_NE(res.output.find("10"), std::string::npos);  // default iters
}

TEST(Cli, MissingRequiredFlagIsUsageError) {
  CliResult res = run_cli("train --out /tmp/x.ckpt");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("--data"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  CliResult res = run_cli("fire-ze-missiles");
  EXPECT_EQ(res.exit_code, 2);
}

TEST(Cli, TrainWritesCheckpointWithMagic) {
  EXPECT_EQ(read_bytes(ws().ckpt).substr(0, 8), "KSCKPT01");
}

TEST(Cli, TrainSameSeedIsByteIdentical) {
  const std::string again = (ws().dir / "model2.ckpt").string();
  CliResult res = run_cli("train --data " + ws().data + " --arch 4,8,8,16 --epochs 6 --seed 3 --out " + again);
  ASSERT_EQ(res.exit_code, 0) << res.output;
  EXPECT_EQ(read_bytes(ws().ckpt), read_bytes(again));
}

TEST(Cli, MissingDataFileIsRuntimeError) {
  CliResult res = run_cli("train --data /nonexistent.ksd --out /tmp/x.ckpt");
  EXPECT_EQ(res.exit_code, 1);
  EXPECT_NE(res.output.find("error"), std::string::npos);
}

TEST(Cli, BuildDbWritesExactlyIndexPcaStore) {
  const fs::path db = ws().dir / "db";
  CliResult res = run_cli("build-db --data " + ws().data + " --model " + ws().ckpt +
                          " --pca-dim 8 --out " + db.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(db)) names.insert(entry.path().filename().string());
  EXPECT_EQ(names, (std::set<std::string>{"index.ksidx", "pca.kspca", "store.kskv"}));
}

TEST(Cli, BuildDbPcaDimTooLargeRejectedBeforeBuilding) {
  const fs::path db = ws().dir / "db_bad";
  CliResult res = run_cli("build-db --data " + ws().data + " --model " + ws().ckpt +
                          " --pca-dim 100000 --out " + db.string());
  EXPECT_EQ(res.exit_code, 1);
  EXPECT_NE(res.output.find("pca"), std::string::npos);
  EXPECT_FALSE(fs::exists(db / "index.ksidx"));
}

TEST(Cli, AttackZeroBudgetKeepsImages) {
  const fs::path out = ws().dir / "adv0";
  CliResult res = run_cli("attack --model " + ws().ckpt + " --data " + ws().data +
                          " --method pgd --budget 0 --seed 9 --out " + out.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  Dataset orig = load_container(ws().data);
  Dataset adv = load_container((out / "adversarial.ksd").string());
  ASSERT_EQ(adv.size(), orig.size());
  for (size_t i = 0; i < orig.size(); ++i) EXPECT_EQ(adv.images[i].data, orig.images[i].data);
  std::ifstream csv((out / "attack.csv").string());
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "index,label,delta,success");
}

TEST(Cli, DefenseAwareMethodsRequireAttackDb) {
  CliResult res = run_cli("attack --model " + ws().ckpt + " --data " + ws().data +
                          " --method pgd-fs --out /tmp/advx");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("--attack-db"), std::string::npos);
}

TEST(Cli, AttackWithDbRunsDefenseAwareMethod) {
  const fs::path db = ws().dir / "attackdb";
  CliResult build = run_cli("build-db --data " + ws().data + " --model " + ws().ckpt +
                            " --pca-dim 8 --with-images --out " + db.string());
  ASSERT_EQ(build.exit_code, 0) << build.output;
  EXPECT_TRUE(fs::exists(db / "images.ksd"));
  const fs::path out = ws().dir / "adv_fs";
  CliResult res = run_cli("attack --model " + ws().ckpt + " --data " + ws().data +
                          " --method pgd-fs --budget 0.04 --iters 3 --k-attack 5 --attack-db " +
                          db.string() + " --seed 9 --out " + out.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  Dataset adv = load_container((out / "adversarial.ksd").string());
  EXPECT_EQ(adv.size(), load_container(ws().data).size());
}

TEST(Cli, EvalConfigProducesSingleRowCsv) {
  const fs::path cfg_path = ws().dir / "eval.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "[experiment]\nid = cli-eval\nseed = 6\n"
        << "[data]\nclasses = 3\nper_class = 16\nheight = 16\nwidth = 16\neval_count = 12\n"
        << "distractors = 4\nattacker_pool = 8\n"
        << "[model]\nblocks = 4,8,8,16\nepochs = 6\n"
        << "[defense]\nk = 3\npca_dim = 8\n"
        << "[attack]\nbudget = 0.04\niters = 3\n";
  }
  const fs::path out = ws().dir / "eval_out";
  CliResult res = run_cli("eval --config " + cfg_path.string() + " --out " + out.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  std::vector<ExperimentRow> rows = read_csv((out / "results.csv").string());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].experiment_id, "cli-eval");
  EXPECT_EQ(rows[0].attack, "pgd");
}

TEST(Cli, SweepKAxisMakesOneRowPerGridPoint) {
  const fs::path cfg_path = ws().dir / "sweep.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "[experiment]\nid = cli-sweep\nseed = 6\n"
        << "[data]\nclasses = 3\nper_class = 16\nheight = 16\nwidth = 16\neval_count = 12\n"
        << "distractors = 4\nattacker_pool = 8\n"
        << "[model]\nblocks = 4,8,8,16\nepochs = 6\n"
        << "[defense]\nk = 3\npca_dim = 8\n"
        << "[attack]\nbudget = 0.04\niters = 3\n"
        << "[sweep]\naxis = K\ngrid = 1,5,50\nsvg = true\nsvg_x = k\n";
  }
  const fs::path out = ws().dir / "sweep_out";
  CliResult res = run_cli("sweep --config " + cfg_path.string() + " --out " + out.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  std::vector<ExperimentRow> rows = read_csv((out / "results.csv").string());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].k, 1);
  EXPECT_EQ(rows[1].k, 5);
  EXPECT_EQ(rows[2].k, 50);
  EXPECT_TRUE(fs::exists(out / "sweep.svg"));

  // Rerunning the sweep reproduces the CSV byte for byte.
  const fs::path out2 = ws().dir / "sweep_out2";
  CliResult res2 = run_cli("sweep --config " + cfg_path.string() + " --out " + out2.string());
  ASSERT_EQ(res2.exit_code, 0) << res2.output;
  EXPECT_EQ(read_bytes((out / "results.csv").string()), read_bytes((out2 / "results.csv").string()));
}

TEST(Cli, UnknownConfigKeyNamesTheKey) {
  const fs::path cfg_path = ws().dir / "bad.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "[defense]\nkay = 3\n";
  }
  CliResult res = run_cli("eval --config " + cfg_path.string() + " --out /tmp/bad_out");
  EXPECT_EQ(res.exit_code, 1);
  EXPECT_NE(res.output.find("defense.kay"), std::string::npos);
}
