#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "support.hpp"

using namespace sntf;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream err;
  const int code = cli::dispatch(args, err);
  return {code, err.str()};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fixtures::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    const auto planted = fixtures::planted_stp_data(2, 5.0, 2, 300, 0.01, 0.05);
    save_tensor(dir / "toy.csv", planted.data);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, SimulateWritesOneRowPerAlpha) {
  const auto r = run({"simulate", "--r1", "1", "--r2", "3", "--alpha-min", "1", "--alpha-max", "15", "--steps",
                      "15", "--reps", "100", "--seed", "7", "--out", path("sim.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "sim.csv"), 16u);
  EXPECT_TRUE(fs::exists(dir / "sim.csv.manifest.json"));
  std::ifstream in(dir / "sim.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "alpha,r2,replicates,mean_entries,mean_active_size,mean_ratio");
}

TEST_F(Cli, TrainWritesModelAndLog) {
  const auto r = run({"train", "--data", path("toy.csv"), "--r1", "2", "--r2", "3", "--m", "50", "--lr", "1e-3",
                      "--batch", "200", "--epochs", "20", "--seed", "1", "--out", path("model.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto loaded = load_model(dir / "model.bin");
  EXPECT_EQ(loaded.model.config.r1, 2);
  EXPECT_EQ(loaded.model.config.num_freqs, 50);
  const auto manifest = nlohmann::json::parse(loaded.manifest_json);
  EXPECT_EQ(manifest["subcommand"], "train");
  EXPECT_EQ(count_lines(dir / "model.bin.log.csv"), 21u);
  std::ifstream in(dir / "model.bin.log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,full_elbo,data_term,kl_term,wall_seconds");
}

TEST_F(Cli, PredictAndScoreLinks) {
  ASSERT_EQ(run({"train", "--data", path("toy.csv"), "--m", "5", "--epochs", "2", "--out", path("m.bin")}).code, 0);
  write(dir / "q.csv", "0,0\n1,2\n999,0\n");
  auto r = run({"predict", "--model", path("m.bin"), "--indices", path("q.csv"), "--out", path("p.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "p.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "i1,i2,mean,variance,unseen");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].substr(0, 6), "999,0,");
  EXPECT_EQ(rows[2].back(), '1');

  r = run({"score-links", "--model", path("m.bin"), "--indices", path("q.csv"), "--out", path("s.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream s(dir / "s.csv");
  std::getline(s, line);
  EXPECT_EQ(line, "i1,i2,score,unseen");
  EXPECT_EQ(count_lines(dir / "s.csv"), 4u);
}

TEST_F(Cli, MalformedIndicesExitTwoWithLine) {
  ASSERT_EQ(run({"train", "--data", path("toy.csv"), "--m", "5", "--epochs", "1", "--out", path("m.bin")}).code, 0);
  write(dir / "unknown.csv", "0,0\n1,x\n");
  const auto r = run({"predict", "--model", path("m.bin"), "--indices", path("unknown.csv"), "--out", path("p.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "p.csv"));
}

TEST_F(Cli, MalformedDataExitTwo) {
  write(dir / "bad.csv", "0,0,1.0\n0,1\n");
  const auto r = run({"train", "--data", path("bad.csv"), "--out", path("m.bin")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  const auto r = run({"simulate", "--out", path("x.csv"), "--bogus", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"train", "--out", path("m.bin")}).code, 1);  // --data missing
}

TEST_F(Cli, InvalidValuesExitTwo) {
  EXPECT_EQ(run({"split", "--data", path("toy.csv"), "--fraction", "1.5", "--train-out", path("a.csv"),
                 "--test-out", path("b.csv")})
                .code,
            2);
  EXPECT_EQ(run({"train", "--data", path("toy.csv"), "--r1", "0", "--out", path("m.bin")}).code, 2);
}

TEST_F(Cli, DivergentTrainingExitThree) {
  const auto r = run({"train", "--data", path("toy.csv"), "--m", "3", "--epochs", "20", "--lr", "1e6",
                      "--clip-norm", "0", "--out", path("m.bin")});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(fs::exists(dir / "m.bin.last_good"));
  EXPECT_FALSE(fs::exists(dir / "m.bin"));
  EXPECT_NO_THROW(load_model(dir / "m.bin.last_good"));
}

TEST_F(Cli, SplitEvalSweepExport) {
  ASSERT_EQ(run({"split", "--data", path("toy.csv"), "--fraction", "0.8", "--seed", "3", "--train-out",
                 path("tr.csv"), "--test-out", path("te.csv")})
                .code,
            0);
  EXPECT_EQ(load_tensor(dir / "tr.csv").size() + load_tensor(dir / "te.csv").size(), 300u);
  ASSERT_EQ(run({"train", "--data", path("tr.csv"), "--m", "5", "--epochs", "3", "--out", path("m.bin")}).code, 0);
  auto r = run({"eval", "--model", path("m.bin"), "--test", path("te.csv"), "--train", path("tr.csv"), "--neg-ratio",
                "1", "--out", path("e.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "e.csv"), 2u);
  r = run({"sweep", "--data", path("tr.csv"), "--r-total", "3", "--m", "5", "--epochs", "2", "--out", path("sw.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "sw.csv"), 3u);
  EXPECT_NE(r.err.find("best r1="), std::string::npos);
  r = run({"export-factors", "--model", path("m.bin"), "--out-prefix", path("f"), "--pca"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "f_mode1.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "node,original_id,theta_1,omega_1,omega_tilde_1,pca_1,pca_2");
  EXPECT_TRUE(fs::exists(dir / "f_mode2.csv"));
  EXPECT_TRUE(fs::exists(dir / "f.manifest.json"));
}

TEST_F(Cli, ReplayReproducesOutputs) {
  ASSERT_EQ(run({"train", "--data", path("toy.csv"), "--m", "5", "--epochs", "3", "--seed", "4", "--out",
                 path("m.bin"), "--export-json", path("m.json")})
                .code,
            0);
  const auto model_before = fixtures::file_checksum(dir / "m.bin");
  const auto json_before = fixtures::file_checksum(dir / "m.json");
  fs::remove(dir / "m.bin");
  fs::remove(dir / "m.json");
  const auto r = run({"replay", "--manifest", path("m.bin.manifest.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(fixtures::file_checksum(dir / "m.bin"), model_before);
  EXPECT_EQ(fixtures::file_checksum(dir / "m.json"), json_before);

  ASSERT_EQ(run({"simulate-dense", "--model", "both", "--sizes", "5,10", "--reps", "4", "--seed", "2", "--out",
                 path("d.csv")})
                .code,
            0);
  const auto dense_before = fixtures::file_checksum(dir / "d.csv");
  ASSERT_EQ(run({"replay", "--manifest", path("d.csv.manifest.json")}).code, 0);
  EXPECT_EQ(fixtures::file_checksum(dir / "d.csv"), dense_before);
  EXPECT_EQ(count_lines(dir / "d.csv"), 5u);
}

TEST_F(Cli, ManifestRoundTrip) {
  cli::RunManifest m;
  m.subcommand = "eval";
  m.argv = {"eval", "--model", "a.bin"};
  m.flags = {{"--model", "a.bin"}};
  m.seed = 9;
  m.inputs = {"a.bin"};
  m.outputs = {"e.csv"};
  m.version = "x";
  const auto back = cli::RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(run({"replay", "--manifest", path("nope.json")}).code, 1);
  write(dir / "broken.json", "{not json");
  EXPECT_EQ(run({"replay", "--manifest", path("broken.json")}).code, 2);
}
