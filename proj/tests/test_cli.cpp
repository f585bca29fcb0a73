#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "commands.hpp"

using namespace alphagen;
namespace fs = std::filesystem;
using cli::json;

namespace {

const char* kPlanted = "Div(Mean($close,10),$close)";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("alphagen_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json synth_config(const fs::path& out, double noise = 0.72) {
  return {{"seed", 4},
          {"out", out.string()},
          {"capacity", 4},
          {"data",
           {{"synth",
             {{"seed", 4},
              {"stocks", 16},
              {"days", 160},
              {"noise_sigma", noise},
              {"planted", {{{"expr", kPlanted}, {"weight", 1.0}}}}}}}},
          {"split_days", {{"train", 100}, {"valid", 20}, {"test", 40}}},
          {"ppo", {{"max_env_steps", 600}, {"rollout_episodes_per_update", 8}}},
          {"backtest", {{"k", 6}, {"n", 2}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_pool(const fs::path& path, const std::vector<std::pair<std::string, double>>& alphas) {
  json j = {{"version", 1}, {"capacity", 10}, {"objective", 0.0}, {"alphas", json::array()}};
  for (const auto& [e, w] : alphas) j["alphas"].push_back({{"expr", e}, {"weight", w}, {"train_ic", 0.0}});
  std::ofstream(path) << j.dump();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Config, FlagsOverrideConfigOverrideDefaults) {
  json doc = {{"seed", 3}, {"backtest", {{"k", 20}}}};
  cli::Overrides ov;
  ov.seed = 8;
  ov.n = 3;
  const auto cfg = cli::parse_config(doc, ".", ov);
  EXPECT_EQ(cfg.seed, 8u);
  EXPECT_EQ(cfg.ppo.seed, 8u);
  EXPECT_EQ(cfg.backtest.k, 20u);
  EXPECT_EQ(cfg.backtest.n, 3u);
  EXPECT_EQ(cfg.capacity, 10u);
  EXPECT_EQ(cfg.document["seed"], 8);
}

TEST(Config, BacktestDefaultsAreFiftyAndFive) {
  const auto cfg = cli::parse_config(json::object(), ".");
  EXPECT_EQ(cfg.backtest.k, 50u);
  EXPECT_EQ(cfg.backtest.n, 5u);
}

TEST(Config, UnorderedDateSplitsRejected) {
  json doc = {{"splits", {{"train", {"2020-01-01", "2020-06-30"}},
                          {"valid", {"2020-03-01", "2020-07-30"}},
                          {"test", {"2020-08-01", "2020-12-31"}}}}};
  EXPECT_THROW(cli::parse_config(doc, "."), DataError);
}

TEST(Synth, DeterministicManifestInCanonicalForm) {
  const auto dir = fresh_dir("synth");
  const auto cfg = cli::parse_config(synth_config(dir / "a"), ".");
  cli::cmd_synth(cfg);
  const auto cfg2 = cli::parse_config(synth_config(dir / "b"), ".");
  cli::cmd_synth(cfg2);
  for (const char* f : {"panel.csv", "target.csv", "manifest.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const json m = json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m["planted"][0]["expr"], to_infix_string(parse_infix(kPlanted)));
  EXPECT_TRUE(fs::exists(dir / "a" / "config.json"));
  EXPECT_FALSE(fs::exists(dir / "a" / ".staging"));
}

TEST(Synth, InvalidPlantedExpressionNamesIt) {
  const auto dir = fresh_dir("synth_bad");
  json doc = synth_config(dir / "out");
  doc["data"]["synth"]["planted"][0]["expr"] = "Mean($close)";
  const auto cfg = cli::parse_config(doc, ".");
  try {
    cli::cmd_synth(cfg);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("Mean($close)"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "out" / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "out" / ".staging"));
}

TEST(Mine, SmallRunWritesArtifactsAndResumes) {
  const auto dir = fresh_dir("mine");
  auto cfg = cli::parse_config(synth_config(dir / "out"), ".");
  cli::cmd_mine(cfg);
  for (const char* f : {"pool.json", "agent.json", "vocabulary.json", "train_log.jsonl", "episodes.jsonl", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const std::size_t logged = count_lines(dir / "out" / "train_log.jsonl");
  const auto agent = load_agent_checkpoint(read_json_file((dir / "out" / "agent.json").string()));
  const std::size_t steps = agent.env_steps();
  EXPECT_GE(steps, 600u);

  cli::Overrides ov;
  ov.max_env_steps = 1200;
  cli::cmd_mine(cli::parse_config(synth_config(dir / "out"), ".", ov), true);
  EXPECT_GT(count_lines(dir / "out" / "train_log.jsonl"), logged);
  std::ifstream log(dir / "out" / "train_log.jsonl");
  std::size_t prev = 0;
  for (std::string line; std::getline(log, line);) {
    const auto s = json::parse(line)["env_steps"].get<std::size_t>();
    EXPECT_GT(s, prev);
    prev = s;
  }
  EXPECT_GE(prev, 1200u);
}

TEST(Mine, SeedChangesTheRun) {
  const auto dir = fresh_dir("mine_seed");
  json a = synth_config(dir / "a"), b = synth_config(dir / "b");
  b["seed"] = 5;
  cli::cmd_mine(cli::parse_config(a, "."));
  cli::cmd_mine(cli::parse_config(b, "."));
  EXPECT_NE(slurp(dir / "a" / "episodes.jsonl"), slurp(dir / "b" / "episodes.jsonl"));
}

TEST(Eval, PlantedAlphaWithoutNoiseHasUnitIc) {
  const auto dir = fresh_dir("eval");
  const auto cfg = cli::parse_config(synth_config(dir / "out", 0.0), ".");
  write_pool(dir / "pool.json", {{kPlanted, 1.0}});
  const auto r = cli::cmd_eval(cfg, (dir / "pool.json").string(), "test");
  EXPECT_NEAR(r.ic, 1.0, 1e-9);
  EXPECT_LE(std::abs(r.rank_ic), 1.0);
  const json j = json::parse(slurp(dir / "out" / "eval_test.json"));
  EXPECT_NEAR(j["IC"].get<double>(), 1.0, 1e-9);
  EXPECT_TRUE(j.contains("RankIC"));
}

TEST(Eval, EmptyPoolIsError) {
  const auto dir = fresh_dir("eval_empty");
  const auto cfg = cli::parse_config(synth_config(dir / "out"), ".");
  write_pool(dir / "pool.json", {});
  EXPECT_THROW(cli::cmd_eval(cfg, (dir / "pool.json").string(), "test"), EmptyPoolError);
  EXPECT_FALSE(fs::exists(dir / "out" / "eval_test.json"));
}

TEST(Eval, UnevaluableAlphaIsListed) {
  const auto dir = fresh_dir("eval_bad");
  const auto cfg = cli::parse_config(synth_config(dir / "out"), ".");
  write_pool(dir / "pool.json", {{kPlanted, 1.0}, {"Log(Sub($close,$close))", 0.5}});
  try {
    cli::cmd_eval(cfg, (dir / "pool.json").string(), "test");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Log(Sub($close,$close))"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).find(to_infix_string(parse_infix(kPlanted))), std::string::npos);
  }
}

TEST(Backtest, CsvHasOneRowPerTestDay) {
  const auto dir = fresh_dir("backtest");
  const auto cfg = cli::parse_config(synth_config(dir / "out"), ".");
  write_pool(dir / "pool.json", {{kPlanted, 1.0}});
  cli::cmd_backtest(cfg, (dir / "pool.json").string(), "test");
  EXPECT_EQ(count_lines(dir / "out" / "backtest_test.csv"), 1u + 40u);
  const json j = json::parse(slurp(dir / "out" / "backtest_test.json"));
  EXPECT_EQ(j["k"], 6);
  EXPECT_EQ(j["n"], 2);
}

TEST(Backtest, ConstantPricesKeepInitialWorth) {
  const auto dir = fresh_dir("backtest_flat");
  {
    std::ofstream csv(dir / "flat.csv");
    csv << "date,symbol,open,close,high,low,volume,vwap\n";
    for (int d = 0; d < 90; ++d) {
      char date[16];
      std::snprintf(date, sizeof date, "2021-%02d-%02d", 1 + d / 28, 1 + d % 28);
      for (int s = 0; s < 8; ++s) {
        csv << date << ",S" << s << ",10,10,10,10," << 1000 + 37 * ((d * 7 + s * 3) % 11) << ",10\n";
      }
    }
  }
  json doc = {{"data", {{"csv", "flat.csv"}}},
              {"horizon", 5},
              {"out", (dir / "out").string()},
              {"split_days", {{"train", 50}, {"valid", 10}, {"test", 30}}},
              {"backtest", {{"k", 4}, {"n", 2}}}};
  const auto cfg = cli::parse_config(doc, dir);
  write_pool(dir / "pool.json", {{"Div(Mean($volume,5),$volume)", 1.0}});
  cli::cmd_backtest(cfg, (dir / "pool.json").string(), "test");
  const json j = json::parse(slurp(dir / "out" / "backtest_test.json"));
  EXPECT_EQ(j["final_worth"].get<double>(), 1.0);
  const json copied = json::parse(slurp(dir / "out" / "config.json"));
  EXPECT_TRUE(fs::path(copied["data"]["csv"].get<std::string>()).is_absolute());
}

TEST(Report, WritesCurvesAfterMining) {
  const auto dir = fresh_dir("report");
  const auto cfg = cli::parse_config(synth_config(dir / "out"), ".");
  EXPECT_THROW(cli::cmd_report(cfg), DataError);
  cli::cmd_mine(cfg);
  cli::cmd_report(cfg);
  EXPECT_EQ(count_lines(dir / "out" / "objective_curve.csv"), 1u + count_lines(dir / "out" / "train_log.jsonl"));
  const json pool = json::parse(slurp(dir / "out" / "pool.json"));
  EXPECT_EQ(count_lines(dir / "out" / "alphas.csv"), 1u + pool["alphas"].size());
  EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
}
