#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace alphagen;

int main(int argc, char** argv) {
  cli::init_logging();
  CLI::App app{"Formulaic alpha mining with a reinforcement-learned generator and a linear alpha pool"};
  app.require_subcommand(1);

  std::string config_path;
  cli::Overrides ov;
  std::optional<std::string> pool_path;
  std::string split = "test";
  bool resume = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", ov.seed, "Master seed (overrides config)");
    sub->add_option("--out", ov.out, "Output directory (overrides config)");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic panel with planted alphas");
  common(synth);

  auto* mine = app.add_subcommand("mine", "Train the generator and grow the alpha pool");
  common(mine);
  mine->add_option("--max-env-steps", ov.max_env_steps, "Environment step budget");
  mine->add_flag("--resume", resume, "Continue from agent.json and pool.json in the output directory");

  auto* eval = app.add_subcommand("eval", "IC and RankIC of the combined pool on a split");
  common(eval);
  eval->add_option("--pool", pool_path, "Pool checkpoint (default <out>/pool.json)");
  eval->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));

  auto* backtest = app.add_subcommand("backtest", "Top-k/drop-n simulation of the combined pool");
  common(backtest);
  backtest->add_option("--pool", pool_path, "Pool checkpoint (default <out>/pool.json)");
  backtest->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  backtest->add_option("--k", ov.k, "Holdings");
  backtest->add_option("--n", ov.n, "Maximum replacements per day");
  backtest->add_option("--cost-bps", ov.cost_bps, "Proportional cost per trade in basis points");

  auto* report = app.add_subcommand("report", "Summarise a mining run");
  common(report);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = cli::load_config(config_path, ov);
    if (synth->parsed()) cli::cmd_synth(cfg);
    if (mine->parsed()) cli::cmd_mine(cfg, resume);
    if (eval->parsed()) cli::cmd_eval(cfg, pool_path, split);
    if (backtest->parsed()) cli::cmd_backtest(cfg, pool_path, split);
    if (report->parsed()) cli::cmd_report(cfg);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
