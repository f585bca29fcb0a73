#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "alphagen/io.hpp"
#include "alphagen/synth.hpp"

using namespace alphagen;

namespace {

struct Mined {
  PanelData panel = synth_generate(5, 12, 150, {{parse_infix("Div(Mean($close,10),$close)"), 1.0}}, 0.5);
  DayRange train{0, 99};
  AlphaPool pool{panel.target.slice(train), 4, {}, 2};

  Mined() {
    for (const char* text : {"Div(Mean($close,10),$close)", "Div(Mean($volume,20),$volume)", "Sub($high,$low)",
                             "Std($close,10)", "Delta($open,10)"}) {
      const Expression e = parse_infix(text);
      pool.add_alpha(e, evaluate(e, panel, train).values.slice(train));
    }
  }
};

PpoAgent small_agent(std::size_t actions, std::size_t steps) {
  NetConfig net = default_net_config(actions);
  net.hidden = 12;
  net.embed_dim = 6;
  net.head_hidden = 8;
  PpoConfig cfg;
  cfg.seed = 9;
  cfg.max_env_steps = steps;
  cfg.rollout_episodes_per_update = 6;
  return PpoAgent(net, cfg);
}

}  // namespace

TEST(PoolCheckpoint, RoundTripPreservesWeightsAndObjective) {
  Mined m;
  ASSERT_EQ(m.pool.size(), 4u);
  const json j = json::parse(pool_to_json(m.pool).dump());
  const auto snap = pool_snapshot_from_json(j);
  EXPECT_EQ(snap.capacity, 4u);
  AlphaPool restored = restore_pool(snap, m.panel, m.train);
  ASSERT_EQ(restored.size(), m.pool.size());
  for (std::size_t i = 0; i < restored.size(); ++i) {
    EXPECT_EQ(to_infix_string(restored.members()[i].expr), to_infix_string(m.pool.members()[i].expr));
    EXPECT_EQ(restored.weights()[i], m.pool.weights()[i]);
  }
  EXPECT_NEAR(restored.objective(), m.pool.objective(), 1e-12);
  EXPECT_NEAR(j["objective"].get<double>(), m.pool.objective(), 1e-15);
}

TEST(PoolCheckpoint, RejectsMalformedExpression) {
  json j = {{"capacity", 2}, {"alphas", {{{"expr", "Add($close"}, {"weight", 1.0}}}}};
  EXPECT_THROW(pool_snapshot_from_json(j), ParseError);
}

TEST(AgentCheckpoint, RoundTripIsExactAndResumesIdentically) {
  auto run_env = [](PpoAgent& agent) {
    Mined m;
    AlphaPool pool(m.panel.target.slice(m.train), 3, {}, 1);
    AlphaEnv env(m.panel, m.train, pool);
    std::vector<std::string> exprs;
    agent.train(env, {}, [&](const EpisodeLogEntry& e) { exprs.push_back(e.expression); });
    return exprs;
  };
  const std::size_t actions = Grammar{}.vocabulary().size();
  PpoAgent agent = small_agent(actions, 150);
  run_env(agent);
  const json saved = json::parse(agent_checkpoint(agent).dump());
  PpoAgent loaded = load_agent_checkpoint(saved);
  EXPECT_EQ(agent_checkpoint(loaded).dump(), saved.dump());
  EXPECT_EQ(loaded.env_steps(), agent.env_steps());

  agent.mutable_config().max_env_steps = 300;
  loaded.mutable_config().max_env_steps = 300;
  EXPECT_EQ(run_env(agent), run_env(loaded));
  EXPECT_EQ(agent.network().parameters(), loaded.network().parameters());
  EXPECT_GE(loaded.env_steps(), 300u);
}

TEST(AgentCheckpoint, RejectsWrongVersion) {
  PpoAgent agent = small_agent(Grammar{}.vocabulary().size(), 0);
  json j = agent_checkpoint(agent);
  j["version"] = 99;
  EXPECT_THROW(load_agent_checkpoint(j), DataError);
}

TEST(Vocabulary, ExportListsEveryActionAfterBegin) {
  const Grammar g;
  const json v = vocabulary_json(g);
  const auto& tokens = v["tokens"];
  ASSERT_EQ(tokens.size(), g.vocabulary().size() + 1);
  EXPECT_EQ(tokens[0]["kind"], "begin");
  std::size_t ops = 0, features = 0, constants = 0, deltas = 0, seps = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    EXPECT_EQ(tokens[i]["id"].get<std::size_t>(), i);
    const std::string kind = tokens[i]["kind"];
    ops += kind == "operator";
    features += kind == "feature";
    constants += kind == "constant";
    deltas += kind == "time_delta";
    seps += kind == "sep";
  }
  EXPECT_EQ(ops, 22u);
  EXPECT_EQ(features, 6u);
  EXPECT_EQ(constants, 14u);
  EXPECT_EQ(deltas, 5u);
  EXPECT_EQ(seps, 1u);
  EXPECT_EQ(v["max_tokens"].get<std::size_t>(), g.max_tokens());
}

TEST(JsonFile, MalformedFileIsParseError) {
  const auto path = std::filesystem::temp_directory_path() / "alphagen_bad.json";
  std::ofstream(path) << "{\"a\": ";
  EXPECT_THROW(read_json_file(path.string()), ParseError);
  EXPECT_THROW(read_json_file((path.string() + ".missing")), DataError);
  std::filesystem::remove(path);
}
