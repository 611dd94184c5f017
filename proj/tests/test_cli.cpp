// SPDX-License-Identifier: Apache-2.0
// Drives the treeattn binary as a subprocess: help goldens, exit codes,
// determinism of primary artifacts.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace {

namespace fs = std::filesystem;

const char* kCli = TREEATTN_CLI_PATH;
const char* kGolden = TREEATTN_GOLDEN_DIR;
const char* kSamples = TREEATTN_SAMPLES_DIR;

const std::vector<std::string> kSubcommands = {"tree-roundtrip", "tree-validate", "bpe-split",  "oracle-check",
                                               "grad-check",     "train",         "eval",       "attn-stats",
                                               "bench",          "count-params",  "make-synth"};

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("treeattn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + kCli + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

std::string sample(const std::string& name) { return "'" + (fs::path(kSamples) / name).string() + "'"; }

void check_golden(const std::string& name, const std::string& actual) {
  const fs::path p = fs::path(kGolden) / name;
  if (std::getenv("TREEATTN_UPDATE_GOLDEN") != nullptr) {
    std::ofstream(p, std::ios::binary) << actual;
    return;
  }
  ASSERT_TRUE(fs::exists(p)) << p;
  EXPECT_EQ(actual, slurp(p)) << "golden " << name << " differs; rerun with TREEATTN_UPDATE_GOLDEN=1 to refresh";
}

TEST_F(Cli, TopLevelHelpMatchesGolden) {
  const Result r = run("--help");
  EXPECT_EQ(r.code, 0);
  check_golden("help.txt", r.out);
  for (const auto& s : kSubcommands) EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST_F(Cli, SubcommandHelpMatchesGolden) {
  for (const auto& s : kSubcommands) {
    const Result r = run(s + " --help");
    EXPECT_EQ(r.code, 0) << s;
    check_golden("help-" + s + ".txt", r.out);
    for (const char* flag : {"--config", "--preset", "--set", "--seed", "--float-width", "--d "}) {
      EXPECT_NE(r.out.find(flag), std::string::npos) << s << " lacks " << flag;
    }
  }
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("count-params --no-such-flag").code, 1);
  EXPECT_EQ(run("count-params --preset nope").code, 1);
  EXPECT_EQ(run("count-params --set nokey=3").code, 1);
  EXPECT_EQ(run("count-params --d 7").code, 1);
  EXPECT_EQ(run("tree-roundtrip").code, 1);
  EXPECT_EQ(run("bench --lengths 64,x").code, 1);
}

TEST_F(Cli, DataErrorsExitTwo) {
  write("bad.trees", "(S (NP x)\n");
  EXPECT_EQ(run("tree-roundtrip --in bad.trees").code, 2);
  write("bad.jsonl", R"({"leaves":["a","b"],"nodes":["X","Y"],"rules":[["n0","l0"],["n1","l1"]]})" "\n");
  const Result v = run("tree-validate --encodings bad.jsonl");
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.out.find("invalid"), std::string::npos);
  write("not.ckpt", "hello");
  write("c.txt", "0\t(S x)\n");
  EXPECT_EQ(run("eval --checkpoint not.ckpt --in c.txt").code, 2);
  EXPECT_EQ(run("bench --lengths 256,128").code, 2);
}

TEST_F(Cli, RoundTripOnSampleTrees) {
  const Result r = run("tree-roundtrip --in " + sample("sentences.trees") + " --encodings-out enc.jsonl");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("tree 0: ok leaves=3 nodes=5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("roundtrip: 3/3"), std::string::npos);
  const Result v = run("tree-validate --encodings enc.jsonl");
  EXPECT_EQ(v.code, 0) << v.out;
}

TEST_F(Cli, EchoesResolvedConfig) {
  write("x.cfg", "config_version = 1\nd = 32\nheads = 4\n");
  const Result r = run("count-params --preset tiny --config x.cfg --heads 8 --set d=64 --token-vocab 10 --label-vocab 4");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("# d = 64\n"), std::string::npos);
  EXPECT_NE(r.err.find("# heads = 8\n"), std::string::npos);
  EXPECT_NE(r.err.find("# preset = tiny\n"), std::string::npos);
}

TEST_F(Cli, BpeSplitOnSample) {
  const Result r = run("bpe-split --codes " + sample("codes.bpe") + " --in " + sample("sentences.trees"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "(S (NN (NN-BPE H@@) (NN-BPE e)) (VP (PRP (PRP-BPE i@@) (PRP-BPE s)) "
                                               "(V (V-BPE study@@) (V-BPE ing))))");
}

TEST_F(Cli, CountParamsBaseTree) {
  const Result r = run("count-params");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("baseline total          61747200"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("reference total         61810944"), std::string::npos);
  const Result b = run("count-params --preset base-baseline");
  EXPECT_NE(b.out.find("total                   61747200"), std::string::npos) << b.out;
  EXPECT_NE(b.out.find("residual +0"), std::string::npos);
}

TEST_F(Cli, ChecksPass) {
  EXPECT_EQ(run("oracle-check --trees 20").code, 0);
  const Result g = run("grad-check --d 8 --leaves 5");
  EXPECT_EQ(g.code, 0) << g.out << g.err;
  EXPECT_NE(g.out.find("max_rel_error"), std::string::npos);
}

TEST_F(Cli, DeterministicArtifacts) {
  ASSERT_EQ(run("make-synth --size 80 --seed 5 --out a.txt").code, 0);
  ASSERT_EQ(run("make-synth --size 80 --seed 5 --out b.txt").code, 0);
  ASSERT_EQ(run("make-synth --size 30 --seed 6 --out dev.txt").code, 0);
  EXPECT_EQ(slurp(path("a.txt")), slurp(path("b.txt")));
  const std::string train = "train --preset synthetic --d 16 --d-ffn 32 --heads 2 --layers-enc 1 --train a.txt --dev dev.txt "
                            "--max-updates 20 --warmup 5 --eval-every 10 ";
  ASSERT_EQ(run(train + "--out m1.ckpt --report r1.csv --log r1.jsonl").code, 0);
  ASSERT_EQ(run(train + "--out m2.ckpt --report r2.csv --log r2.jsonl").code, 0);
  EXPECT_EQ(slurp(path("m1.ckpt")), slurp(path("m2.ckpt")));
  // Only the seconds column may differ.
  auto strip_time = [](std::string csv) {
    std::string out, line;
    std::istringstream in(csv);
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  EXPECT_EQ(strip_time(slurp(path("r1.csv"))), strip_time(slurp(path("r2.csv"))));
  const Result e1 = run("eval --checkpoint m1.ckpt --in dev.txt --predictions p1.txt");
  const Result e2 = run("eval --checkpoint m2.ckpt --in dev.txt --predictions p2.txt");
  EXPECT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(slurp(path("p1.txt")), slurp(path("p2.txt")));
  EXPECT_NE(e1.err.find("parse_seconds"), std::string::npos);
  const Result a = run("attn-stats --checkpoint m1.ckpt --in dev.txt");
  EXPECT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("node_mass"), std::string::npos);
  EXPECT_EQ(run("bench --lengths 16,32 --repeats 1 --no-timing --out x.csv").code, 0);
  EXPECT_EQ(run("bench --lengths 16,32 --repeats 1 --no-timing --out y.csv").code, 0);
  EXPECT_EQ(slurp(path("x.csv")), slurp(path("y.csv")));
}

}  // namespace
