#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "segkit/cli.hpp"
#include "segkit/config.hpp"
#include "segkit/image_io.hpp"
#include "testing/fixtures.hpp"

namespace segkit {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small synthetic workspace with a config file next to the data.
struct Workspace {
  TempDir dir;
  fs::path config;

  explicit Workspace(int samples = 4, nlohmann::json extra = nlohmann::json::object()) {
    testing::write_synthetic_dataset(dir.path(), samples, 32, 3, 11);
    nlohmann::json j = {{"images_dir", "images"},
                        {"annotations_dir", "annotations"},
                        {"n_classes", 3},
                        {"input_height", 32},
                        {"input_width", 32},
                        {"encoder", "plain"},
                        {"decoder", "fcn32"},
                        {"epochs", 1},
                        {"batch_size", 2},
                        {"out_dir", (dir.path() / "out").string()}};
    j.update(extra);
    config = dir / "run.json";
    std::ofstream(config) << j.dump();
  }
  fs::path out() const { return dir / "out"; }
};

TEST(ConfigTest, DefaultsRoundTripThroughJson) {
  nlohmann::json j = default_config_json();
  j["images_dir"] = "i";
  j["annotations_dir"] = "a";
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.dataset.output_height, c.dataset.input_height);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(checkpoint_dir(c), c.out_dir / "checkpoints");
  const RunConfig again = run_config_from_json(to_json(c));
  EXPECT_EQ(again.spec, c.spec);
  EXPECT_EQ(again.dataset.images_dir, c.dataset.images_dir);
}

TEST(ConfigTest, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(merge_config(default_config_json(), {{"epoch", 3}}), ConfigError);
  nlohmann::json j = default_config_json();
  j["images_dir"] = "i";
  j["annotations_dir"] = "a";
  j["epochs"] = 0;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j["epochs"] = 1;
  j["encoder"] = "inception";
  EXPECT_ANY_THROW(run_config_from_json(j));
  j["encoder"] = "plain";
  j["class_names"] = {"a", "b", "c"};  // n_classes is 2
  EXPECT_THROW(run_config_from_json(j), ConfigError);
}

TEST(ConfigTest, OverrideValuesParseAsJsonWhenPossible) {
  EXPECT_EQ(parse_override_value("3"), nlohmann::json(3));
  EXPECT_EQ(parse_override_value("0.5"), nlohmann::json(0.5));
  EXPECT_EQ(parse_override_value("[1,2]"), nlohmann::json::parse("[1,2]"));
  EXPECT_EQ(parse_override_value("mobilenet"), nlohmann::json("mobilenet"));
}

TEST(ConfigTest, ProfilesParse) {
  const fs::path configs = fs::path(SEGKIT_SOURCE_DIR) / "configs";
  const std::map<std::string, size_t> expected = {{"camvid", 12}, {"sitting_people", 15}, {"suim", 8}};
  for (const auto& [name, k] : expected) {
    const RunConfig c = run_config_from_json(read_config_file(configs / (name + ".json")));
    EXPECT_EQ(c.class_names.size(), k) << name;
    EXPECT_EQ(c.spec.n_classes, static_cast<int>(k)) << name;
    EXPECT_TRUE(c.dataset.images_dir.is_absolute()) << name;
  }
}

TEST(CliTest, VerifyCleanDatasetExitsZero) {
  Workspace ws;
  const CliRun r = cli({"--config", ws.config.string(), "verify"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(ws.out() / "verify.json"));
  EXPECT_TRUE(fs::exists(ws.out() / "config.effective.json"));
}

TEST(CliTest, VerifyReportsDefectsWithExitOne) {
  Workspace ws;
  LabelGrid bad = LabelGrid::Zero(32, 32);
  bad(3, 3) = 9;
  write_png_labels(ws.dir / "annotations/sample_001.png", bad);
  write_png_rgb(ws.dir / "images/lonely.png", testing::paint(LabelGrid::Zero(32, 32)));
  const CliRun r = cli({"--config", ws.config.string(), "verify"});
  EXPECT_EQ(r.code, kExitDataDefects);
  EXPECT_NE(r.out.find("sample_001"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("lonely"), std::string::npos) << r.out;
}

TEST(CliTest, MissingDirectoryIsConfigError) {
  Workspace ws(2, {{"images_dir", "nowhere"}});
  EXPECT_EQ(cli({"--config", ws.config.string(), "verify"}).code, kExitConfigError);
}

TEST(CliTest, UnknownOverrideAndBadValuesAreConfigErrors) {
  Workspace ws;
  EXPECT_EQ(cli({"--config", ws.config.string(), "--epohcs", "3", "train"}).code, kExitConfigError);
  EXPECT_EQ(cli({"--config", ws.config.string(), "--epochs", "0", "train"}).code, kExitConfigError);
  EXPECT_EQ(cli({"--config", ws.config.string()}).code, kExitConfigError);
}

TEST(CliTest, TrainEvaluatePredict) {
  Workspace ws;
  const std::string config = ws.config.string();
  const CliRun trained = cli({"--config", config, "--quiet", "train", "--epochs=2"});
  ASSERT_EQ(trained.code, kExitOk) << trained.err;
  const fs::path ckpt = ws.out() / "checkpoints";
  EXPECT_TRUE(fs::exists(ckpt / "last.ckpt"));
  EXPECT_TRUE(fs::exists(ckpt / "best.ckpt"));
  EXPECT_TRUE(fs::exists(ckpt / "history.jsonl"));
  const auto effective = nlohmann::json::parse(std::ifstream(ws.out() / "config.effective.json"));
  EXPECT_EQ(effective["epochs"], 2);

  const CliRun evaluated = cli({"--config", config, "evaluate"});
  ASSERT_EQ(evaluated.code, kExitOk) << evaluated.err;
  EXPECT_NE(evaluated.out.find("mIoU"), std::string::npos);
  EXPECT_TRUE(fs::exists(ws.out() / "report.json"));

  const std::string image = (ws.dir / "images/sample_000.png").string();
  const CliRun predicted = cli({"--config", config, "predict", "--alpha", "0", image});
  ASSERT_EQ(predicted.code, kExitOk) << predicted.err;
  const LabelGrid labels = read_png_labels(ws.out() / "sample_000.labels.png");
  EXPECT_EQ(labels.rows(), 32);
  EXPECT_LT(labels.maxCoeff(), 3);
  const RgbImage blended = read_png_rgb(ws.out() / "sample_000.overlay.png");
  EXPECT_TRUE((blended.array() == read_png_rgb(image).array()).all());

  const CliRun missing = cli({"--config", config, "predict", (ws.dir / "images/absent.png").string()});
  EXPECT_EQ(missing.code, kExitDataDefects);
}

TEST(CliTest, EvaluateWithoutCheckpointIsConfigError) {
  Workspace ws;
  const CliRun r = cli({"--config", ws.config.string(), "evaluate"});
  EXPECT_EQ(r.code, kExitConfigError);
}

TEST(CliTest, ResumeWithDifferentSpecIsRejected) {
  Workspace ws;
  const std::string config = ws.config.string();
  ASSERT_EQ(cli({"--config", config, "--quiet", "train"}).code, kExitOk);
  const std::string last = (ws.out() / "checkpoints/last.ckpt").string();
  const CliRun r = cli({"--config", config, "--quiet", "--decoder", "fcn8", "train", "--resume", last});
  EXPECT_EQ(r.code, kExitConfigError);
  EXPECT_NE(r.err.find("decoder"), std::string::npos) << r.err;
}

TEST(CliTest, BinaryRunsAndReportsExitCodes) {
  Workspace ws;
  const std::string cmd = std::string(SEGKIT_CLI_PATH) + " --config " + ws.config.string() + " verify > /dev/null";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  const std::string bad = std::string(SEGKIT_CLI_PATH) + " --no-such-flag > /dev/null 2>&1";
  const int bad_status = std::system(bad.c_str());
  ASSERT_TRUE(WIFEXITED(bad_status));
  EXPECT_EQ(WEXITSTATUS(bad_status), 2);
}

}  // namespace
}  // namespace segkit
