#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphagen/backtest.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/evaluator.hpp"
#include "alphagen/pool.hpp"
#include "alphagen/ppo.hpp"

namespace alphagen {

using nlohmann::json;

inline std::string_view token_kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::Operator: return "operator";
    case TokenKind::Feature: return "feature";
    case TokenKind::Constant: return "constant";
    case TokenKind::TimeDelta: return "time_delta";
    case TokenKind::Begin: return "begin";
    case TokenKind::Sep: return "sep";
  }
  return "unknown";
}

/// Vocabulary export: {"max_tokens", "tokens": [{id, kind, label, payload}]}.
/// Id 0 is reserved for BEG; action i has id i + 1.
inline json vocabulary_json(const Grammar& grammar) {
  json tokens = json::array();
  tokens.push_back({{"id", 0}, {"kind", "begin"}, {"label", "BEG"}, {"payload", nullptr}});
  const auto& vocab = grammar.vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const Token& t = vocab[i];
    json payload;
    switch (t.kind) {
      case TokenKind::Operator: {
        const auto& s = spec_of(t.op);
        payload = {{"name", s.name},
                   {"category", s.time_series() ? "time-series" : "cross-section"},
                   {"arity", s.arity}};
        break;
      }
      case TokenKind::Feature: payload = feature_name(t.feature); break;
      case TokenKind::Constant: payload = t.constant; break;
      case TokenKind::TimeDelta: payload = t.delta; break;
      default: payload = nullptr;
    }
    tokens.push_back({{"id", i + 1}, {"kind", token_kind_name(t.kind)}, {"label", token_label(t)}, {"payload", payload}});
  }
  return {{"max_tokens", grammar.max_tokens()}, {"tokens", tokens}};
}

// ---- pool checkpoint ------------------------------------------------------

inline json pool_to_json(const AlphaPool& pool) {
  json alphas = json::array();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    alphas.push_back({{"expr", to_infix_string(pool.members()[i].expr)},
                      {"weight", pool.weights()[i]},
                      {"train_ic", pool.single_ic(i)}});
  }
  return {{"version", 1}, {"capacity", pool.capacity()}, {"objective", pool.objective()}, {"alphas", alphas}};
}

struct PoolSnapshot {
  std::size_t capacity = 0;
  double objective = 0.0;
  std::vector<Expression> exprs;
  std::vector<double> weights;
};

inline PoolSnapshot pool_snapshot_from_json(const json& j, const Grammar& grammar = Grammar::lenient()) {
  PoolSnapshot snap;
  snap.capacity = j.at("capacity").get<std::size_t>();
  snap.objective = j.value("objective", 0.0);
  for (const auto& a : j.at("alphas")) {
    snap.exprs.push_back(parse_infix(a.at("expr").get<std::string>(), grammar));
    snap.weights.push_back(a.at("weight").get<double>());
  }
  return snap;
}

/// Rebuilds a pool from a checkpoint on the same panel/training range; the
/// stored weights are used as-is.
inline AlphaPool restore_pool(const PoolSnapshot& snap, const PanelData& panel, DayRange train, GdConfig gd = {},
                              std::uint64_t seed = 0) {
  AlphaPool pool(panel.target.slice(train), snap.capacity, gd, seed);
  std::vector<std::pair<Expression, Grid>> alphas;
  for (const auto& e : snap.exprs) alphas.emplace_back(e, evaluate(e, panel, train).values.slice(train));
  pool.restore(alphas, snap.weights);
  return pool;
}

// ---- logs -----------------------------------------------------------------

inline json to_json(const TrainLogEntry& e) {
  return {{"update", e.update},          {"env_steps", e.env_steps}, {"pool_objective", e.pool_objective},
          {"pool_size", e.pool_size},    {"mean_reward", e.mean_reward}, {"entropy", e.entropy},
          {"clip_fraction", e.clip_fraction}};
}

inline json to_json(const EpisodeLogEntry& e) {
  return {{"episode", e.episode},
          {"expression", e.expression.empty() ? json(nullptr) : json(e.expression)},
          {"reward", e.reward},
          {"pool_objective", e.pool_objective},
          {"pool_size", e.pool_size},
          {"termination", termination_name(e.termination)}};
}

inline json to_json(const BacktestSummary& s) {
  return {{"total_return", s.total_return},
          {"annualized_return", s.annualized_return},
          {"max_drawdown", s.max_drawdown},
          {"mean_turnover", s.mean_turnover}};
}

// ---- agent checkpoint -----------------------------------------------------

inline constexpr int kAgentCheckpointVersion = 1;

inline json net_config_json(const NetConfig& c) {
  return {{"input_tokens", c.input_tokens}, {"actions", c.actions},         {"embed_dim", c.embed_dim},
          {"hidden", c.hidden},             {"layers", c.layers},           {"head_hidden", c.head_hidden},
          {"dropout", c.dropout}};
}

inline NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  c.input_tokens = j.at("input_tokens");
  c.actions = j.at("actions");
  c.embed_dim = j.at("embed_dim");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.head_hidden = j.at("head_hidden");
  c.dropout = j.at("dropout");
  return c;
}

inline json ppo_config_json(const PpoConfig& c) {
  return {{"clip_epsilon", c.clip_epsilon},
          {"discount", c.discount},
          {"gae_lambda", c.gae_lambda},
          {"epochs_per_update", c.epochs_per_update},
          {"minibatch_size", c.minibatch_size},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"learning_rate", c.learning_rate},
          {"max_grad_norm", c.max_grad_norm},
          {"rollout_episodes_per_update", c.rollout_episodes_per_update},
          {"max_env_steps", c.max_env_steps},
          {"seed", c.seed}};
}

/// Fields missing from `j` keep the values already in `c`.
inline void update_ppo_config(PpoConfig& c, const json& j) {
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.discount = j.value("discount", c.discount);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.epochs_per_update = j.value("epochs_per_update", c.epochs_per_update);
  c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.rollout_episodes_per_update = j.value("rollout_episodes_per_update", c.rollout_episodes_per_update);
  c.max_env_steps = j.value("max_env_steps", c.max_env_steps);
  c.seed = j.value("seed", c.seed);
}

template <typename Engine>
std::string engine_state(const Engine& e) {
  std::ostringstream out;
  out << e;
  return out.str();
}

template <typename Engine>
void set_engine_state(Engine& e, const std::string& s) {
  std::istringstream in(s);
  in >> e;
}

/// Parameters, optimiser moments, RNG streams and counters.
inline json agent_checkpoint(PpoAgent& agent) {
  const auto& adam = agent.optimizer();
  return {{"version", kAgentCheckpointVersion},
          {"net", net_config_json(agent.network().config())},
          {"ppo", ppo_config_json(agent.config())},
          {"parameters", agent.network().parameters()},
          {"adam", {{"m", adam.m}, {"v", adam.v}, {"steps", adam.steps}}},
          {"rng", {{"sample", engine_state(agent.sample_rng())}, {"dropout", engine_state(agent.dropout_rng())}}},
          {"counters", {{"env_steps", agent.env_steps()}, {"updates", agent.updates()}, {"episodes", agent.episodes()}}}};
}

inline PpoAgent load_agent_checkpoint(const json& j) {
  if (j.at("version").get<int>() != kAgentCheckpointVersion) throw DataError("unsupported agent checkpoint version");
  PpoConfig cfg;
  update_ppo_config(cfg, j.at("ppo"));
  PpoAgent agent(net_config_from_json(j.at("net")), cfg);
  auto params = j.at("parameters").get<std::vector<float>>();
  if (params.size() != agent.network().parameter_count()) throw DataError("checkpoint parameter count mismatch");
  agent.network().parameters() = std::move(params);
  auto& adam = agent.optimizer();
  adam.m = j.at("adam").at("m").get<std::vector<double>>();
  adam.v = j.at("adam").at("v").get<std::vector<double>>();
  adam.steps = j.at("adam").at("steps").get<std::uint64_t>();
  set_engine_state(agent.sample_rng(), j.at("rng").at("sample").get<std::string>());
  set_engine_state(agent.dropout_rng(), j.at("rng").at("dropout").get<std::string>());
  const auto& c = j.at("counters");
  agent.set_counters(c.at("env_steps"), c.at("updates"), c.at("episodes"));
  return agent;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

}  // namespace alphagen
