#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "sasav/image.hpp"
#include "sasav/knowledge.hpp"
#include "sasav/synthetic.hpp"
#include "sasav/transfer.hpp"
#include "support.hpp"

using namespace sasav;
using sasav::testing::TempDir;
using sasav::testing::run_cli;
using nlohmann::json;

namespace {

std::string quoted(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

const char* kSmall = " --intermediate-resolution 24 --output-resolution 48 --samples-per-segment 2";

std::string config(const char* scenario) { return quoted(sasav::testing::fixtures_dir() / "configs" / (std::string(scenario) + ".json")); }

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli("run --out /tmp/x"), 64);
  EXPECT_EQ(run_cli("frobnicate"), 64);
  EXPECT_EQ(run_cli(""), 64);
  TempDir dir;
  const auto raw = sasav::testing::write_volume(synthetic::gaussian_blob(8), dir / "v");
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "o") + " --m-isovalues 0"), 64);
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "o") + " --set nonsense=1"), 64);
}

TEST(Cli, RunSimulated) {
  TempDir dir;
  const auto raw = sasav::testing::write_volume(synthetic::gaussian_blob(24), dir / "blob");
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "out") + " --config " + config("simulated") + kSmall,
                    dir / "log.txt"),
            0)
      << sasav::testing::read_file(dir / "log.txt");
  EXPECT_EQ(read_png(dir / "out" / "final.png").width, 48);
  const auto cfg = json::parse(sasav::testing::read_file(dir / "out" / "run.json")).at("config");
  EXPECT_EQ(cfg.at("output_resolution"), 48);

  EXPECT_EQ(run_cli("render --run " + quoted(dir / "out") + " --out " + quoted(dir / "again.png")), 0);
  EXPECT_EQ(sasav::testing::read_file(dir / "again.png"), sasav::testing::read_file(dir / "out" / "final.png"));
  EXPECT_EQ(run_cli("render --run " + quoted(dir / "out") + " --out " + quoted(dir / "big.png") + " --resolution 96"), 0);
  EXPECT_EQ(read_png(dir / "big.png").width, 96);
  EXPECT_EQ(run_cli("render --run " + quoted(dir / "out") + " --out " + quoted(dir / "x.png") + " --camera '{\"position\":[1]}'"),
            64);

  EXPECT_EQ(run_cli("export-tf " + quoted(dir / "out") + " --format ct --out " + quoted(dir / "tf.ct")), 0);
  EXPECT_EQ(sasav::testing::read_file(dir / "tf.ct"), sasav::testing::read_file(dir / "out" / "tf.ct"));
  EXPECT_EQ(run_cli("export-tf " + quoted(dir / "out" / "tf.json") + " --format json --out " + quoted(dir / "tf.json")), 0);
  EXPECT_EQ(tf_from_json(json::parse(sasav::testing::read_file(dir / "tf.json"))),
            tf_from_json(json::parse(sasav::testing::read_file(dir / "out" / "tf.json"))));
}

TEST(Cli, FlagOverridesFile) {
  TempDir dir;
  const auto raw = sasav::testing::write_volume(synthetic::gaussian_blob(16), dir / "blob");
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "out") + " --config " + config("simulated") +
                    kSmall + " --set provider.max_concurrency=2"),
            0);
  const auto cfg = json::parse(sasav::testing::read_file(dir / "out" / "run.json")).at("config");
  EXPECT_EQ(cfg.at("provider").at("max_concurrency"), 2);
  EXPECT_EQ(cfg.at("samples_per_segment"), 2);
}

TEST(Cli, AdversarialExitsDegraded) {
  TempDir dir;
  const auto raw = sasav::testing::write_volume(synthetic::gaussian_blob(24), dir / "blob");
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "out") + " --config " + config("adversarial") + kSmall), 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "final.png"));
}

TEST(Cli, AbortedRunExitsOne) {
  TempDir dir;
  const auto raw = sasav::testing::write_volume(sasav::testing::make_volume({4, 4, 4}, std::vector<float>(64, 1.0f)), dir / "flat");
  EXPECT_EQ(run_cli("run --input " + quoted(raw) + " --out " + quoted(dir / "out") + " --config " + config("simulated")), 1);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "failure.json"));
}

TEST(Cli, KnowledgeBaseBuild) {
  TempDir dir;
  sasav::testing::write_file(dir / "docs" / "a.md", std::string(1800, 'x'));
  sasav::testing::write_file(dir / "docs" / "skip.txt", "ignored");
  EXPECT_EQ(run_cli("kb build --docs " + quoted(dir / "docs") + " --out " + quoted(dir / "kb")), 0);
  const auto index = KnowledgeIndex::load(dir / "kb");
  EXPECT_EQ(index.size(), 2u);

  std::filesystem::create_directories(dir / "empty");
  EXPECT_EQ(run_cli("kb build --docs " + quoted(dir / "empty") + " --out " + quoted(dir / "kb0")), 0);
  EXPECT_EQ(KnowledgeIndex::load(dir / "kb0").size(), 0u);
}

TEST(Cli, BadArtifacts) {
  TempDir dir;
  EXPECT_EQ(run_cli("render --run " + quoted(dir / "nothing") + " --out " + quoted(dir / "x.png")), 66);
  EXPECT_EQ(run_cli("export-tf " + quoted(dir / "nothing")), 66);
}

TEST(Cli, Synth) {
  TempDir dir;
  EXPECT_EQ(run_cli("synth --kind shells --size 8 --out " + quoted(dir / "s")), 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "s.raw"), 8u * 8 * 8 * 4);
  EXPECT_EQ(run_cli("synth --kind labels --size 4 --out " + quoted(dir / "nested" / "l")), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "nested" / "l.json"));
  EXPECT_EQ(run_cli("synth --kind nope --out " + quoted(dir / "s")), 64);
}
