#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace augsal;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

Json small_config() {
  return Json{{"seed", 5},
              {"dataset_root", "data"},
              {"output_dir", "out"},
              {"synthetic", {{"n_images", 8}, {"height", 16}, {"width", 16}, {"val_fraction", 0.25}}},
              {"backbone",
               {{"downsample_factor", 2},
                {"hidden_channels", 8},
                {"bottleneck_channels", 8},
                {"feature_channels_low", 6},
                {"feature_channels_high", 6}}},
              {"readouts",
               {{"llfr_hidden_dims", {8}}, {"hlfr_conv_channels", {6}}, {"sr_channels", {6, 6, 6, 6, 6, 6, 1}}}},
              {"training",
               {{"backbone_steps", 6},
                {"readout_steps", 6},
                {"saliency_steps", 6},
                {"readout_batch_size", 2},
                {"saliency_batch_size", 2},
                {"checkpoint_every", 4}}},
              {"augmentor", {{"p", 0.5}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string slurp_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir)) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + '\n' + slurp(f);
  return all;
}

/// A run directory holding a config and the CLI's captured output.
class CliRun {
 public:
  explicit CliRun(const std::string& name, const Json& cfg = small_config()) : dir_(name) {
    std::ofstream(dir_.path() / "run.json") << cfg.dump(2);
  }
  const fs::path& root() const { return dir_.path(); }
  fs::path out() const { return root() / "out"; }

  int operator()(const std::string& args) const {
    const std::string cmd = std::string(AUGSAL_CLI_PATH) + " -c " + (root() / "run.json").string() + " " + args +
                            " > " + (root() / "stdout.txt").string() + " 2> " + (root() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string stderr_text() const { return slurp(root() / "stderr.txt"); }

  void train_all() const {
    ASSERT_EQ((*this)("generate-synthetic"), 0) << stderr_text();
    ASSERT_EQ((*this)("train-backbone --steps 10"), 0) << stderr_text();
    ASSERT_EQ((*this)("train-readouts"), 0) << stderr_text();
    ASSERT_EQ((*this)("train-saliency"), 0) << stderr_text();
  }

 private:
  TempDir dir_;
};

fs::path first_image(const fs::path& split_dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(split_dir / "images")) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  return files.at(0);
}

}  // namespace

TEST(Cli, EndToEndOnASmallSyntheticDataset) {
  const CliRun run("cli_e2e");
  run.train_all();
  EXPECT_EQ(read_json(run.root() / "data" / "manifest.json").value("n_train", 0), 6);
  const std::string log = slurp(run.out() / "logs" / "backbone.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 11);
  EXPECT_TRUE(read_json(run.out() / "checkpoints" / "saliency" / "manifest.json")["meta"].value("complete", false));

  const fs::path img = first_image(run.root() / "data" / "train");
  ASSERT_EQ(run("edit --image " + img.string() + " --kind brightness_increase --alpha 0.3 --name b"), 0)
      << run.stderr_text();
  ASSERT_EQ(run("edit --image " + img.string() + " --kind contrast_increase --alpha 1.5 --name c"), 0)
      << run.stderr_text();
  ASSERT_EQ(run("edit --image " + img.string() + " --kind color_change --alpha 1.0 --color blue --name k"), 0)
      << run.stderr_text();
  for (const char* name : {"b", "c", "k"}) {
    const fs::path dir = run.out() / "edits" / name;
    EXPECT_TRUE(fs::exists(dir / "grid.png"));
    const Json m = read_json(dir / "manifest.json");
    EXPECT_EQ(m["levels"].size(), 3u);
    for (const char* level : {"level1", "level2", "level3"}) EXPECT_TRUE(fs::is_directory(dir / level));
  }
  EXPECT_EQ(run("edit --image " + img.string() + " --kind color_change --alpha 1.0"), 2);
  EXPECT_EQ(run("edit --image " + img.string() + " --kind sharpen --alpha 1.0"), 2);

  ASSERT_EQ(run("augment --n 3"), 0) << run.stderr_text();
  std::size_t samples = 0;
  for (const auto& d : fs::directory_iterator(run.out() / "augment")) samples += d.is_directory();
  EXPECT_EQ(samples, 3u);
  EXPECT_EQ(read_json(run.out() / "augment" / "manifest.json")["samples"].size(), 3u);

  ASSERT_EQ(run("train-saliency --augment"), 0) << run.stderr_text();
  ASSERT_EQ(run("evaluate --model saliency_augmented"), 0) << run.stderr_text();
  ASSERT_EQ(run("evaluate"), 0) << run.stderr_text();
  const fs::path report = run.out() / "eval" / "val_saliency";
  const std::string first = slurp(report / "report.json") + slurp(report / "per_image.csv");
  ASSERT_EQ(run("evaluate"), 0) << run.stderr_text();
  EXPECT_EQ(slurp(report / "report.json") + slurp(report / "per_image.csv"), first);
  EXPECT_EQ(read_json(report / "report.json").value("config_hash", ""), config_hash(load_config(run.root() / "run.json")));
}

TEST(Cli, GroundTruthPredictionsScoreOptimally) {
  const CliRun run("cli_gt");
  ASSERT_EQ(run("generate-synthetic"), 0) << run.stderr_text();
  ASSERT_EQ(run("evaluate --predictions " + (run.root() / "data" / "val" / "saliency").string()), 0)
      << run.stderr_text();
  const Json m = read_json(run.out() / "eval" / "val_predictions" / "report.json")["metrics"];
  EXPECT_NEAR(m["CC"].get<double>(), 1.0, 1e-9);
  EXPECT_NEAR(m["KL"].get<double>(), 0.0, 1e-7 * 16 * 16);
  EXPECT_NEAR(m["SIM"].get<double>(), 1.0, 1e-9);
}

TEST(Cli, ErrorsMapToExitCodesWithoutPartialOutputs) {
  const CliRun run("cli_err");
  EXPECT_EQ(run("evaluate"), 3);
  EXPECT_NE(run.stderr_text().find("does not exist"), std::string::npos);
  EXPECT_EQ(run("train-backbone"), 3);
  EXPECT_FALSE(fs::exists(run.out()));
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("augment"), 2);

  Json bad = small_config();
  bad["training"]["bogus"] = 1;
  const CliRun bad_run("cli_badkey", bad);
  EXPECT_EQ(bad_run("generate-synthetic"), 2);
  EXPECT_NE(bad_run.stderr_text().find("unknown config key training.bogus"), std::string::npos);
  EXPECT_FALSE(fs::exists(bad_run.root() / "data"));

  ASSERT_EQ(run("generate-synthetic"), 0);
  EXPECT_EQ(run("train-readouts"), 3);
  EXPECT_NE(run.stderr_text().find("run train-backbone first"), std::string::npos);
}

TEST(Cli, TrainingLogsAreReproducibleAndResumeExactly) {
  const CliRun a("cli_rep_a");
  const CliRun b("cli_rep_b");
  for (const CliRun* r : {&a, &b}) {
    ASSERT_EQ((*r)("generate-synthetic"), 0) << r->stderr_text();
    ASSERT_EQ((*r)("train-backbone --steps 4"), 0) << r->stderr_text();
  }
  ASSERT_EQ(a("train-backbone --steps 9"), 0) << a.stderr_text();
  ASSERT_EQ(b("train-backbone --steps 9 --restart"), 0) << b.stderr_text();
  EXPECT_EQ(slurp(a.out() / "logs" / "backbone.csv"), slurp(b.out() / "logs" / "backbone.csv"));
  EXPECT_EQ(slurp_dir(a.out() / "checkpoints" / "backbone"), slurp_dir(b.out() / "checkpoints" / "backbone"));
  for (const CliRun* r : {&a, &b}) ASSERT_EQ((*r)("train-readouts"), 0) << r->stderr_text();
  EXPECT_EQ(slurp(a.out() / "logs" / "readouts.csv"), slurp(b.out() / "logs" / "readouts.csv"));
}
