#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "crl/config.hpp"

using namespace crl;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("crl_test_config_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CRL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Presets, KnownGraphs) {
  EXPECT_EQ(preset_dag("y4").edge_count(), 3u);
  EXPECT_EQ(preset_dag("chain4").edge_count(), 3u);
  EXPECT_EQ(preset_dag("fig1").size(), 5u);
  EXPECT_EQ(preset_dag("fig2").size(), 6u);
  EXPECT_THROW(preset_dag("nope"), ConfigError);
}

TEST(RunConfigYaml, EmptyTextGivesDefaults) {
  const RunConfig c = parse_run_config("");
  EXPECT_EQ(c.preset, "y4");
  EXPECT_EQ(c.num_domains, 13u);
  EXPECT_EQ(c.samples_per_domain, 5000u);
  EXPECT_EQ(c.prior, PriorKind::Parametric);
  EXPECT_EQ(c.decoder_variance, 0.01);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfigYaml, PartialOverrides) {
  const RunConfig c = parse_run_config(
      "seed: 42\n"
      "data: {preset: chain4, noise: laplace, domains: 5}\n"
      "model: {prior: flow, flow_layers: 2}\n"
      "train: {lr: 0.002, epochs: 7}\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.preset, "chain4");
  EXPECT_EQ(c.noise, NoiseFamily::Laplace);
  EXPECT_EQ(c.num_domains, 5u);
  EXPECT_EQ(c.prior, PriorKind::Flow);
  EXPECT_EQ(c.flow_layers, 2u);
  EXPECT_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.samples_per_domain, 5000u);
}

TEST(RunConfigYaml, RejectsBadInput) {
  EXPECT_THROW(parse_run_config("bogus: 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train: {learning_rate: 1}\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train: {lr: fast}\n"), ConfigError);
  EXPECT_THROW(parse_run_config("data: {noise: cauchy}\n"), ConfigError);
  EXPECT_THROW(parse_run_config("data: [1, 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model: {decoder_variance: 0}\n").validate(), ConfigError);
  EXPECT_THROW(parse_run_config("data: {preset: custom}\n").validate(), ConfigError);
}

TEST(RunConfigYaml, RoundTripPreservesEveryField) {
  RunConfig c;
  c.seed = 9;
  c.preset = "fig2";
  c.noise = NoiseFamily::Laplace;
  c.mixing.num_layers = 3;
  c.mixing.alpha = 0.3;
  c.prior = PriorKind::Flow;
  c.decoder_variance = 1e-3;
  c.ordering = "5,4,3,2,1,0";
  c.train.lr = 1.0 / 3.0;
  c.train.seed = 9;
  c.eval.baseline = true;
  const RunConfig back = parse_run_config(c.to_yaml());
  EXPECT_EQ(back.to_yaml(), c.to_yaml());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.train.lr, c.train.lr);
  RunConfig other = c;
  other.train.lambda = 0.5;
  EXPECT_NE(other.hash(), c.hash());
}

TEST(Ordering, TopologicalExplicitAndRandom) {
  RunConfig c;
  c.preset = "chain4";
  EXPECT_EQ(c.causal_ordering(), Permutation::identity(4));
  c.ordering = "3,1,2,0";
  EXPECT_EQ(c.causal_ordering().map(), (std::vector<Vertex>{3, 1, 2, 0}));
  c.ordering = "0,1,1,3";
  EXPECT_THROW(c.causal_ordering(), ConfigError);
  c.ordering = "random";
  EXPECT_EQ(c.causal_ordering(), c.causal_ordering());
  EXPECT_EQ(c.causal_ordering().size(), 4u);
}

TEST(CustomGraph, FileLoadingAndCycleRejection) {
  const auto dir = scratch("graph");
  {
    std::ofstream(dir / "ok.txt") << "3\n0 1\n1 2\n";
    std::ofstream(dir / "cyclic.txt") << "3\n0 1\n1 2\n2 0\n";
  }
  RunConfig c;
  c.preset = "custom";
  c.graph_file = (dir / "ok.txt").string();
  EXPECT_EQ(c.dag().edge_count(), 2u);
  c.graph_file = (dir / "cyclic.txt").string();
  EXPECT_THROW(c.dag(), ConfigError);
  c.graph_file = (dir / "missing.txt").string();
  EXPECT_THROW(c.dag(), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const std::string out = " --out " + (dir / "run").string();
  EXPECT_EQ(run_cli("--no-such-flag"), 2);
  EXPECT_EQ(run_cli("simulate --preset nope" + out), 2);
  EXPECT_EQ(run_cli("simulate --lr -1" + out), 2);
  EXPECT_EQ(run_cli("verify --domains 13" + out), 0);
  EXPECT_EQ(run_cli("simulate --domains 3 --samples 20 --seed 1" + out), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "dataset.csv"));
  std::filesystem::remove_all(dir);
}
