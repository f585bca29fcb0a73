#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/evaluator.hpp"
#include "alphagen/panel.hpp"
#include "alphagen/pool.hpp"

namespace alphagen {

/// Partial token sequence; always starts with BEG.
struct MdpState {
  std::vector<Token> tokens{Token::begin()};
  std::size_t step_count = 0;
  BuilderStack stack;
};

enum class Termination { None, ValidAlpha, Duplicate, InvalidAlpha, LengthCap };

struct StepOutcome {
  MdpState next_state;
  double reward = 0.0;
  bool terminal = false;
  Termination termination = Termination::None;
  std::optional<std::string> expression;  // infix text of the finished formula
};

inline constexpr double kInvalidReward = -1.0;

/// Episodic formula-generation environment. Rewards are zero until the
/// episode ends; a finished formula is folded into the shared pool and the
/// reward is the pool's combined training IC. The pool persists across
/// episodes, so the reward process is non-stationary.
class AlphaEnv {
 public:
  AlphaEnv(const PanelData& panel, DayRange train, AlphaPool& pool, Grammar grammar = {},
           double min_valid_fraction = kDefaultMinValidFraction, std::size_t cache_capacity = 256)
      : panel_(panel),
        train_(train),
        pool_(pool),
        grammar_(std::move(grammar)),
        min_valid_fraction_(min_valid_fraction),
        cache_(cache_capacity) {
    if (train_.last >= panel_.days()) throw ContractError("training range outside panel");
    if (pool_.target().days() != train_.size()) throw ContractError("pool target does not cover the training range");
  }

  const Grammar& grammar() const { return grammar_; }
  std::size_t action_count() const { return grammar_.vocabulary().size(); }
  AlphaPool& pool() { return pool_; }
  const AlphaPool& pool() const { return pool_; }
  DayRange train_range() const { return train_; }
  const PanelData& panel() const { return panel_; }

  MdpState reset() const { return MdpState{}; }

  std::vector<bool> action_mask(const MdpState& state) const {
    auto mask = grammar_.valid_mask(state.stack, state.tokens.size());
    if (std::find(mask.begin(), mask.end(), true) == mask.end()) {
      throw ContractError("no valid action from the current state");
    }
    return mask;
  }

  StepOutcome step(const MdpState& state, std::size_t action) {
    const auto& vocab = grammar_.vocabulary();
    if (action >= vocab.size()) throw ContractError("action index out of range");
    const Token& token = vocab[action];
    if (!grammar_.token_allowed(state.stack, state.tokens.size(), token)) {
      throw ContractError("masked action '" + token_label(token) + "' taken");
    }
    StepOutcome out;
    out.next_state = state;
    out.next_state.tokens.push_back(token);
    out.next_state.step_count += 1;
    if (token.kind != TokenKind::Sep) {
      out.next_state.stack.push(token);
      if (out.next_state.tokens.size() >= grammar_.max_tokens()) {
        out.terminal = true;
        out.reward = kInvalidReward;
        out.termination = Termination::LengthCap;
      }
      return out;
    }
    out.terminal = true;
    const Expression expr = grammar_.parse_rpn(out.next_state.tokens);
    out.expression = to_infix_string(expr);
    if (pool_.contains(expr)) {
      out.reward = pool_.objective();
      out.termination = Termination::Duplicate;
      return out;
    }
    const auto matrix = cache_.get_or_evaluate(expr, panel_);
    if (!semantic_validity(*matrix, train_, min_valid_fraction_)) {
      out.reward = kInvalidReward;
      out.termination = Termination::InvalidAlpha;
      return out;
    }
    pool_.add_alpha(expr, matrix->values.slice(train_));
    out.reward = pool_.objective();
    out.termination = Termination::ValidAlpha;
    return out;
  }

 private:
  const PanelData& panel_;
  DayRange train_;
  AlphaPool& pool_;
  Grammar grammar_;
  double min_valid_fraction_;
  EvaluationCache cache_;
};

/// One finished episode as seen by the learner.
struct Trajectory {
  std::vector<Token> tokens;                 // BEG plus every action token
  std::vector<std::size_t> actions;
  std::vector<std::vector<bool>> masks;
  std::vector<double> rewards;
  Termination termination = Termination::None;
  std::optional<std::string> expression;

  double terminal_reward() const { return rewards.empty() ? 0.0 : rewards.back(); }
  double total_return() const {
    double r = 0.0;
    for (double x : rewards) r += x;
    return r;
  }
};

/// Plays one episode with `choose(state, mask) -> action index`.
template <typename Chooser>
Trajectory episode_rollout(AlphaEnv& env, Chooser&& choose) {
  Trajectory traj;
  MdpState state = env.reset();
  while (true) {
    auto mask = env.action_mask(state);
    const std::size_t action = choose(state, mask);
    StepOutcome outcome = env.step(state, action);
    traj.actions.push_back(action);
    traj.masks.push_back(std::move(mask));
    traj.rewards.push_back(outcome.reward);
    state = std::move(outcome.next_state);
    if (outcome.terminal) {
      traj.termination = outcome.termination;
      traj.expression = outcome.expression;
      break;
    }
  }
  traj.tokens = state.tokens;
  return traj;
}

/// Samples uniformly among unmasked actions.
template <typename Rng>
std::size_t uniform_masked_choice(const std::vector<bool>& mask, Rng& rng) {
  std::size_t count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("empty action mask");
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && pick-- == 0) return i;
  }
  return mask.size();
}

inline std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::ValidAlpha: return "valid";
    case Termination::Duplicate: return "duplicate";
    case Termination::InvalidAlpha: return "invalid";
    case Termination::LengthCap: return "length_cap";
  }
  return "none";
}

}  // namespace alphagen
