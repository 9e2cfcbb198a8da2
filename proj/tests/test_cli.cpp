#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::path(DPN_TEST_SCRATCH) / "cli";

int run(const std::string& args) {
  const std::string cmd = std::string(DPN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path dir(const std::string& name) {
  const fs::path p = kScratch / name;
  fs::remove_all(p);
  return p;
}

fs::path write_config(const std::string& name, const std::string& body) {
  fs::create_directories(kScratch);
  const fs::path p = kScratch / name;
  std::ofstream(p) << body;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

// Small training run: 4 scenes, 1 epoch.
const char* kSmallTrain = R"({"num_scenes": 4, "eval_scenes": 2, "epochs": 1})";

}  // namespace

TEST(Cli, CheckDefaultPasses) {
  const fs::path out = dir("check");
  EXPECT_EQ(run("check --out-dir " + out.string()), 0);
  const nlohmann::json report = read_json(out / "check.json");
  EXPECT_TRUE(report.at("passed").get<bool>());
  EXPECT_EQ(report.at("manifest"), "manifest.json");
  const nlohmann::json manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest.at("subcommand"), "check");
  EXPECT_EQ(manifest.at("outputs").at("checks"), "check.json");
}

TEST(Cli, InvalidGroupSizesFailBeforeCompute) {
  const fs::path cfg = write_config("bad_groups.json", R"({"group_sizes": [6, 6, 6, 5]})");
  const fs::path out = dir("check_invalid");
  EXPECT_EQ(run("check --config " + cfg.string() + " --out-dir " + out.string()), 3);
  EXPECT_FALSE(fs::exists(out / "check.json"));
}

TEST(Cli, MutationMakesCheckFail) {
  EXPECT_EQ(run("check --inject-fault drop-fusion --out-dir " + dir("check_fault").string()), 4);
}

TEST(Cli, UsageErrors) {
  const fs::path cfg = write_config("malformed.json", "{not json");
  EXPECT_EQ(run("check --config " + cfg.string() + " --out-dir " + dir("x").string()), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("check --scheme d"), 2);
  EXPECT_EQ(run("sweep --out-dir " + dir("y").string()), 2);  // --axis is required
  EXPECT_EQ(run("check --config /nonexistent.json"), 2);
}

TEST(Cli, FlagsOverrideFile) {
  const fs::path cfg = write_config("radius.json", R"({"radius_m": 2.0, "k_neighbors": 16})");
  const fs::path out = dir("override");
  ASSERT_EQ(run("gen --scenes 1 --config " + cfg.string() + " --radius-m 4.5 --layers 2 --out-dir " +
                out.string()),
            0);
  const nlohmann::json c = read_json(out / "manifest.json").at("config");
  EXPECT_EQ(c.at("radius_m"), 4.5);
  EXPECT_EQ(c.at("k_neighbors"), 16);
  EXPECT_EQ(c.at("group_sizes"), nlohmann::json({8, 8}));
}

TEST(Cli, GenIsByteIdentical) {
  const fs::path a = dir("gen_a"), b = dir("gen_b");
  ASSERT_EQ(run("gen --scenes 10 --seed 7 --out-dir " + a.string()), 0);
  ASSERT_EQ(run("gen --scenes 10 --seed 7 --out-dir " + b.string()), 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a / "scenes")) {
    const fs::path other = b / "scenes" / e.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path().filename();
    ++files;
  }
  EXPECT_EQ(files, 20u);
}

TEST(Cli, TrainAuxOnOffSameStepZeroTopHead) {
  const fs::path cfg = write_config("small_train.json", kSmallTrain);
  const fs::path on = dir("train_on"), off = dir("train_off");
  ASSERT_EQ(run("train --synthetic --config " + cfg.string() + " --aux-heads on --out-dir " + on.string()), 0);
  ASSERT_EQ(run("train --synthetic --config " + cfg.string() + " --aux-heads off --out-dir " + off.string()), 0);
  const auto lon = lines(slurp(on / "losses.csv"));
  const auto loff = lines(slurp(off / "losses.csv"));
  ASSERT_EQ(lon.size(), 5u);
  ASSERT_EQ(loff.size(), 5u);
  const auto hon = split(lon[0]), hoff = split(loff[0]);
  const auto ron = split(lon[1]), roff = split(loff[1]);
  // Top-head columns are present in both runs and agree at step 0.
  std::size_t compared = 0;
  for (std::size_t i = 0; i < hon.size(); ++i) {
    if (hon[i].find("_aux") != std::string::npos || hon[i].find(".tap") == std::string::npos) continue;
    for (std::size_t j = 0; j < hoff.size(); ++j) {
      if (hoff[j] != hon[i]) continue;
      EXPECT_EQ(ron[i], roff[j]) << hon[i];
      ++compared;
    }
  }
  EXPECT_EQ(compared, 4u);  // rpn and rcnn, cls and reg
  EXPECT_GT(hon.size(), hoff.size());
}

TEST(Cli, TrainReproducible) {
  const fs::path cfg = write_config("small_train.json", kSmallTrain);
  const fs::path a = dir("train_a"), b = dir("train_b");
  ASSERT_EQ(run("train --config " + cfg.string() + " --out-dir " + a.string()), 0);
  ASSERT_EQ(run("train --config " + cfg.string() + " --out-dir " + b.string()), 0);
  EXPECT_EQ(slurp(a / "losses.csv"), slurp(b / "losses.csv"));
  EXPECT_EQ(slurp(a / "ckpt.bin"), slurp(b / "ckpt.bin"));
  const nlohmann::json m = read_json(a / "manifest.json");
  EXPECT_EQ(m.at("outputs").at("checkpoint"), "ckpt.json");
  EXPECT_EQ(read_json(a / "ckpt.json").at("run").at("manifest"), "manifest.json");
}

TEST(Cli, TrainFromGeneratedScenes) {
  const fs::path g = dir("train_scenes_gen"), out = dir("train_scenes");
  ASSERT_EQ(run("gen --scenes 3 --out-dir " + g.string()), 0);
  ASSERT_EQ(run("train --epochs 1 --scenes-dir " + (g / "scenes").string() + " --out-dir " + out.string()), 0);
  EXPECT_EQ(lines(slurp(out / "losses.csv")).size(), 4u);
  EXPECT_EQ(run("train --synthetic --scenes-dir " + (g / "scenes").string() + " --out-dir " + out.string()), 2);
}

TEST(Cli, PaperPresetManifestRecordsLearningRate) {
  const fs::path cfg = write_config("paper_small.json",
                                    R"({"preset": "paper", "num_scenes": 1, "eval_scenes": 1, "epochs": 1})");
  const fs::path out = dir("train_paper");
  ASSERT_EQ(run("train --config " + cfg.string() + " --out-dir " + out.string()), 0);
  const nlohmann::json m = read_json(out / "manifest.json");
  EXPECT_EQ(m.at("config").at("learning_rate"), 0.01);
  EXPECT_EQ(m.at("summary").at("learning_rate"), 0.01);
  EXPECT_EQ(m.at("config").at("preset"), "paper");
}

TEST(Cli, BenchWritesTwoRecordsAndComparison) {
  const fs::path cfg = write_config("bench_small.json",
                                    R"({"bench_points": 4096, "bench_seeds": 1024, "bench_reps": 5})");
  const fs::path out = dir("bench");
  ASSERT_EQ(run("bench --config " + cfg.string() + " --out-dir " + out.string()), 0);
  const nlohmann::json j = read_json(out / "bench.json");
  EXPECT_EQ(j.at("dpointnet").at("stack"), "dpointnet");
  EXPECT_EQ(j.at("sa_baseline").at("stack"), "sa_baseline");
  EXPECT_TRUE(j.at("comparison").contains("sampling_speedup"));
  EXPECT_EQ(j.at("manifest"), "manifest.json");
  EXPECT_EQ(j.at("dpointnet").at("fps_calls"), 1);
  EXPECT_EQ(j.at("sa_baseline").at("fps_calls"), 4);
}

TEST(Cli, SweepRadiusFiveRows) {
  const fs::path cfg = write_config("sweep_small.json",
                                    R"({"sweep_scenes": 2, "sweep_epochs": 1, "sweep_eval_scenes": 1})");
  const fs::path out = dir("sweep_radius");
  ASSERT_EQ(run("sweep --axis radius --config " + cfg.string() + " --out-dir " + out.string()), 0);
  const auto rows = lines(slurp(out / "sweep.csv"));
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<std::string> expect{"1.0", "2.0", "3.0", "4.0", "5.0"};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(split(rows[i + 1]).at(1), expect[i]);
  EXPECT_EQ(read_json(out / "manifest.json").at("outputs").at("sweep"), "sweep.csv");
}
