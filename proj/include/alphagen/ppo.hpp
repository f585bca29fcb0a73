#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/env.hpp"
#include "alphagen/nn.hpp"

namespace alphagen {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double discount = 1.0;
  double gae_lambda = 0.95;
  std::size_t epochs_per_update = 4;
  std::size_t minibatch_size = 64;  // transitions; whole episodes are grouped up to this size
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 3e-4;
  double max_grad_norm = 0.5;
  std::size_t rollout_episodes_per_update = 64;
  std::size_t max_env_steps = 100000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ContractError("clip_epsilon must lie in (0, 1)");
    if (discount != 1.0) throw ContractError("discount is fixed at 1");
    if (epochs_per_update < 1 || minibatch_size < 1 || rollout_episodes_per_update < 1) {
      throw ContractError("epochs, minibatch size and rollout size must be positive");
    }
  }
};

/// Softmax restricted to unmasked entries; masked entries get exactly 0.
template <typename T>
std::vector<double> policy_distribution(std::span<const T> logits, const std::vector<bool>& mask) {
  if (logits.size() != mask.size()) throw ContractError("mask and logits differ in length");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) top = std::max(top, static_cast<double>(logits[i]));
  }
  if (!std::isfinite(top)) throw ContractError("all actions masked");
  std::vector<double> p(mask.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    p[i] = std::exp(static_cast<double>(logits[i]) - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// min(r A, clip(r, 1-eps, 1+eps) A)
inline double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

/// One finished episode plus learner bookkeeping.
struct EpisodeRecord {
  std::vector<std::size_t> inputs;  // token ids fed before each decision: BEG=0, action a -> a+1
  std::vector<std::size_t> actions;
  std::vector<std::vector<bool>> masks;
  std::vector<double> log_probs;  // at collection
  std::vector<double> values;     // at collection
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
  bool complete = false;

  std::size_t length() const { return actions.size(); }
};

struct RolloutBuffer {
  std::vector<EpisodeRecord> episodes;

  std::size_t transitions() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.length();
    return n;
  }
  void clear() { episodes.clear(); }
};

/// GAE with discount 1. Fills returns (advantage + value) and advantages,
/// then standardises advantages over the whole buffer when `normalize`.
inline void compute_advantages(RolloutBuffer& buffer, const PpoConfig& cfg, bool normalize = true) {
  std::vector<double> all;
  for (auto& ep : buffer.episodes) {
    if (!ep.complete) throw ContractError("advantages requested for an incomplete episode");
    const std::size_t n = ep.length();
    ep.advantages.assign(n, 0.0);
    ep.returns.assign(n, 0.0);
    double next_adv = 0.0;
    for (std::size_t t = n; t-- > 0;) {
      const double next_value = t + 1 < n ? ep.values[t + 1] : 0.0;
      const double delta = ep.rewards[t] + cfg.discount * next_value - ep.values[t];
      next_adv = delta + cfg.discount * cfg.gae_lambda * next_adv;
      ep.advantages[t] = next_adv;
      ep.returns[t] = next_adv + ep.values[t];
    }
    all.insert(all.end(), ep.advantages.begin(), ep.advantages.end());
  }
  if (!normalize || all.empty()) return;
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  double var = 0.0;
  for (double a : all) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(all.size()));
  for (auto& ep : buffer.episodes) {
    for (double& a : ep.advantages) a = (a - mean) / (sd + 1e-8);
  }
}

struct LossParts {
  double total = 0.0;
  double policy = 0.0;  // negative mean clipped surrogate
  double value = 0.0;   // mean squared error
  double entropy = 0.0; // mean masked entropy
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::size_t transitions = 0;
};

/// Full PPO loss over a set of episodes: -surrogate + c_v * MSE - c_e * entropy,
/// averaged over transitions. Accumulates the parameter gradient into `grad`
/// when non-null. Dropout is active iff `dropout_rng` is non-null.
template <typename Scalar>
LossParts ppo_loss(const ActorCritic<Scalar>& net, std::span<const EpisodeRecord* const> episodes,
                   const PpoConfig& cfg, std::vector<Scalar>* grad, std::mt19937_64* dropout_rng = nullptr) {
  using Mat = typename ActorCritic<Scalar>::Mat;
  typename ActorCritic<Scalar>::Batch batch;
  batch.batch = episodes.size();
  for (const auto* ep : episodes) batch.steps = std::max(batch.steps, ep->length());
  batch.tokens.assign(batch.steps * batch.batch, 0);
  std::size_t count = 0;
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    for (std::size_t t = 0; t < episodes[b]->length(); ++t) batch.tokens[t * batch.batch + b] = episodes[b]->inputs[t];
    count += episodes[b]->length();
  }
  LossParts parts;
  parts.transitions = count;
  if (count == 0) return parts;
  const auto fwd = net.forward(batch, dropout_rng);
  const auto A = fwd.logits.rows();
  Mat dlogits = Mat::Zero(A, fwd.logits.cols());
  Mat dvalues = Mat::Zero(1, fwd.values.cols());
  const double inv = 1.0 / static_cast<double>(count);
  std::size_t clipped = 0;
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    const EpisodeRecord& ep = *episodes[b];
    for (std::size_t t = 0; t < ep.length(); ++t) {
      const auto col = static_cast<Eigen::Index>(t * batch.batch + b);
      const Scalar* logit_ptr = fwd.logits.col(col).data();
      const auto probs = policy_distribution(std::span<const Scalar>(logit_ptr, static_cast<std::size_t>(A)), ep.masks[t]);
      const std::size_t a = ep.actions[t];
      const double logp = std::log(probs[a]);
      const double ratio = std::exp(logp - ep.log_probs[t]);
      const double adv = ep.advantages[t];
      const double unclipped = ratio * adv;
      const double surrogate = clipped_surrogate(ratio, adv, cfg.clip_epsilon);
      if (std::abs(ratio - 1.0) > cfg.clip_epsilon) ++clipped;
      double entropy = 0.0;
      for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] > 0.0) entropy -= probs[k] * std::log(probs[k]);
      }
      const double value = static_cast<double>(fwd.values(0, col));
      const double err = value - ep.returns[t];
      parts.policy -= surrogate * inv;
      parts.value += err * err * inv;
      parts.entropy += entropy * inv;
      parts.mean_ratio += ratio * inv;
      if (grad == nullptr) continue;
      // d(-surrogate)/dlogp is -ratio*A when the unclipped branch is active.
      const double dlogp = unclipped <= surrogate ? -unclipped * inv : 0.0;
      for (std::size_t k = 0; k < probs.size(); ++k) {
        if (!ep.masks[t][k]) continue;
        double d = dlogp * ((k == a ? 1.0 : 0.0) - probs[k]);
        if (probs[k] > 0.0) d += cfg.entropy_coef * inv * probs[k] * (std::log(probs[k]) + entropy);
        dlogits(static_cast<Eigen::Index>(k), col) = static_cast<Scalar>(d);
      }
      dvalues(0, col) = static_cast<Scalar>(cfg.value_coef * 2.0 * err * inv);
    }
  }
  parts.clip_fraction = static_cast<double>(clipped) * inv;
  parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
  if (grad != nullptr) net.backward(fwd, dlogits, dvalues, *grad);
  return parts;
}

/// Adam with global-norm gradient clipping.
template <typename Scalar>
struct Adam {
  double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-5, max_grad_norm = 0.5;
  std::vector<double> m, v;
  std::uint64_t steps = 0;

  void step(std::vector<Scalar>& params, std::vector<Scalar>& grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    double norm = 0.0;
    for (Scalar g : grad) norm += static_cast<double>(g) * static_cast<double>(g);
    norm = std::sqrt(norm);
    const double scale = (max_grad_norm > 0.0 && norm > max_grad_norm) ? max_grad_norm / norm : 1.0;
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * scale;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      params[i] -= static_cast<Scalar>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
};

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::size_t minibatches = 0;
};

struct TrainLogEntry {
  std::size_t update = 0;
  std::size_t env_steps = 0;
  double pool_objective = 0.0;
  std::size_t pool_size = 0;
  double mean_reward = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

struct EpisodeLogEntry {
  std::size_t episode = 0;
  std::string expression;  // empty when the episode produced no formula
  double reward = 0.0;
  double pool_objective = 0.0;
  std::size_t pool_size = 0;
  Termination termination = Termination::None;
};

inline NetConfig default_net_config(std::size_t actions) {
  NetConfig cfg;
  cfg.actions = actions;
  cfg.input_tokens = actions + 1;
  return cfg;
}

/// Masked actor-critic PPO learner driving an AlphaEnv.
class PpoAgent {
 public:
  using Net = ActorCritic<float>;

  PpoAgent(NetConfig net_cfg, PpoConfig cfg)
      : cfg_(cfg), net_(net_cfg, cfg.seed), sample_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL),
        dropout_rng_(cfg.seed + 17) {
    cfg_.validate();
    adam_.lr = cfg_.learning_rate;
    adam_.max_grad_norm = cfg_.max_grad_norm;
  }

  const PpoConfig& config() const { return cfg_; }
  PpoConfig& mutable_config() { return cfg_; }
  Net& network() { return net_; }
  const Net& network() const { return net_; }
  Adam<float>& optimizer() { return adam_; }
  std::mt19937_64& sample_rng() { return sample_rng_; }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  std::size_t env_steps() const { return env_steps_; }
  std::size_t updates() const { return updates_; }
  std::size_t episodes() const { return episodes_; }
  void set_counters(std::size_t env_steps, std::size_t updates, std::size_t episodes) {
    env_steps_ = env_steps;
    updates_ = updates;
    episodes_ = episodes;
  }

  /// Plays one episode, sampling from the masked policy.
  EpisodeRecord collect_episode(AlphaEnv& env, EpisodeLogEntry* log = nullptr) {
    EpisodeRecord rec;
    auto state = net_.initial_state();
    Net::Vec logits;
    float value = 0.0f;
    MdpState s = env.reset();
    std::size_t input = 0;
    while (true) {
      net_.step(input, state, logits, value);
      auto mask = env.action_mask(s);
      const auto probs = policy_distribution(std::span<const float>(logits.data(), static_cast<std::size_t>(logits.size())), mask);
      std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
      const std::size_t action = pick(sample_rng_);
      StepOutcome out = env.step(s, action);
      ++env_steps_;
      rec.inputs.push_back(input);
      rec.actions.push_back(action);
      rec.masks.push_back(std::move(mask));
      rec.log_probs.push_back(std::log(probs[action]));
      rec.values.push_back(static_cast<double>(value));
      rec.rewards.push_back(out.reward);
      input = action + 1;
      s = std::move(out.next_state);
      if (out.terminal) {
        rec.complete = true;
        if (log != nullptr) {
          log->episode = episodes_;
          log->expression = out.expression.value_or("");
          log->reward = out.reward;
          log->pool_objective = env.pool().objective();
          log->pool_size = env.pool().size();
          log->termination = out.termination;
        }
        ++episodes_;
        return rec;
      }
    }
  }

  UpdateDiagnostics update(RolloutBuffer& buffer) {
    compute_advantages(buffer, cfg_);
    UpdateDiagnostics diag;
    std::vector<std::size_t> order(buffer.episodes.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> grad;
    for (std::size_t epoch = 0; epoch < cfg_.epochs_per_update; ++epoch) {
      std::shuffle(order.begin(), order.end(), sample_rng_);
      std::size_t pos = 0;
      while (pos < order.size()) {
        std::vector<const EpisodeRecord*> mb;
        std::size_t transitions = 0;
        while (pos < order.size() && transitions < cfg_.minibatch_size) {
          mb.push_back(&buffer.episodes[order[pos++]]);
          transitions += mb.back()->length();
        }
        grad.assign(net_.parameter_count(), 0.0f);
        const auto parts = ppo_loss<float>(net_, mb, cfg_, &grad, net_.config().dropout > 0.0 ? &dropout_rng_ : nullptr);
        if (!std::isfinite(parts.total)) throw OptimizationError("non-finite PPO loss; update aborted");
        adam_.step(net_.parameters(), grad);
        diag.policy_loss += parts.policy;
        diag.value_loss += parts.value;
        diag.entropy += parts.entropy;
        diag.mean_ratio += parts.mean_ratio;
        diag.clip_fraction += parts.clip_fraction;
        ++diag.minibatches;
      }
    }
    if (diag.minibatches > 0) {
      const double k = static_cast<double>(diag.minibatches);
      diag.policy_loss /= k;
      diag.value_loss /= k;
      diag.entropy /= k;
      diag.mean_ratio /= k;
      diag.clip_fraction /= k;
    }
    ++updates_;
    buffer.clear();
    return diag;
  }

  /// Alternates rollout collection and updates until max_env_steps. The
  /// callbacks receive every finished episode and every update.
  void train(AlphaEnv& env, const std::function<void(const TrainLogEntry&)>& on_update = {},
             const std::function<void(const EpisodeLogEntry&)>& on_episode = {}) {
    RolloutBuffer buffer;
    while (env_steps_ < cfg_.max_env_steps) {
      double reward_sum = 0.0;
      for (std::size_t e = 0; e < cfg_.rollout_episodes_per_update && env_steps_ < cfg_.max_env_steps; ++e) {
        EpisodeLogEntry entry;
        buffer.episodes.push_back(collect_episode(env, &entry));
        reward_sum += buffer.episodes.back().rewards.back();
        if (on_episode) on_episode(entry);
      }
      const std::size_t collected = buffer.episodes.size();
      const auto diag = update(buffer);
      if (on_update) {
        TrainLogEntry log;
        log.update = updates_;
        log.env_steps = env_steps_;
        log.pool_objective = env.pool().objective();
        log.pool_size = env.pool().size();
        log.mean_reward = reward_sum / static_cast<double>(collected);
        log.entropy = diag.entropy;
        log.clip_fraction = diag.clip_fraction;
        on_update(log);
      }
    }
  }

 private:
  PpoConfig cfg_;
  Net net_;
  Adam<float> adam_;
  std::mt19937_64 sample_rng_;
  std::mt19937_64 dropout_rng_;
  std::size_t env_steps_ = 0;
  std::size_t updates_ = 0;
  std::size_t episodes_ = 0;
};

/// Random episodes for a network config: valid masks and actions over a
/// vocabulary of size `actions`, advantages/returns/old log-probs filled.
inline std::vector<EpisodeRecord> synthetic_episodes(std::size_t count, std::size_t actions, std::size_t max_len,
                                                     std::mt19937_64& rng) {
  std::vector<EpisodeRecord> out(count);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& ep : out) {
    const std::size_t n = len(rng);
    std::size_t input = 0;
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<bool> mask(actions, false);
      for (std::size_t k = 0; k < actions; ++k) mask[k] = std::bernoulli_distribution(0.6)(rng);
      std::size_t a = std::uniform_int_distribution<std::size_t>(0, actions - 1)(rng);
      mask[a] = true;
      ep.inputs.push_back(input);
      ep.actions.push_back(a);
      ep.masks.push_back(std::move(mask));
      ep.rewards.push_back(t + 1 == n ? gauss(rng) : 0.0);
      ep.advantages.push_back(gauss(rng));
      ep.returns.push_back(gauss(rng));
      ep.values.push_back(0.0);
      ep.log_probs.push_back(0.0);
      input = a + 1;
    }
    ep.complete = true;
  }
  return out;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

/// Analytic gradient of the full PPO loss vs central finite differences on a
/// tiny double-precision network with dropout off. Old log-probabilities are
/// set so ratios spread across both clipped and unclipped regions while
/// staying away from the clip kinks.
inline GradientCheckResult gradient_check(NetConfig net_cfg, PpoConfig cfg, std::uint64_t seed,
                                          std::vector<EpisodeRecord>* episodes_out = nullptr) {
  net_cfg.dropout = 0.0;
  ActorCritic<double> net(net_cfg, seed);
  std::mt19937_64 rng(seed + 1);
  for (double& p : net.parameters()) p += std::normal_distribution<double>(0.0, 0.3)(rng);
  auto episodes = episodes_out != nullptr && !episodes_out->empty()
                      ? *episodes_out
                      : synthetic_episodes(4, net_cfg.actions, 5, rng);
  std::vector<const EpisodeRecord*> ptrs;
  for (auto& ep : episodes) ptrs.push_back(&ep);
  {
    typename ActorCritic<double>::Batch batch;
    batch.batch = episodes.size();
    for (auto& ep : episodes) batch.steps = std::max(batch.steps, ep.length());
    batch.tokens.assign(batch.steps * batch.batch, 0);
    for (std::size_t b = 0; b < episodes.size(); ++b) {
      for (std::size_t t = 0; t < episodes[b].length(); ++t) batch.tokens[t * batch.batch + b] = episodes[b].inputs[t];
    }
    const auto fwd = net.forward(batch);
    std::uniform_real_distribution<double> shift(-0.5, 0.5);
    for (std::size_t b = 0; b < episodes.size(); ++b) {
      auto& ep = episodes[b];
      for (std::size_t t = 0; t < ep.length(); ++t) {
        const auto col = static_cast<Eigen::Index>(t * batch.batch + b);
        const auto probs = policy_distribution(
            std::span<const double>(fwd.logits.col(col).data(), static_cast<std::size_t>(fwd.logits.rows())), ep.masks[t]);
        const double logp = std::log(probs[ep.actions[t]]);
        double s = 0.0;
        do {
          s = shift(rng);
        } while (std::abs(std::abs(1.0 - std::exp(-s)) - cfg.clip_epsilon) < 0.02);
        ep.log_probs[t] = logp + s;
      }
    }
  }
  std::vector<double> grad(net.parameter_count(), 0.0);
  ppo_loss<double>(net, ptrs, cfg, &grad);
  GradientCheckResult result;
  result.parameters = grad.size();
  // Five-point central stencil: O(h^4) truncation keeps roundoff small.
  const double h = 1e-3;
  auto& params = net.parameters();
  auto loss_at = [&](std::size_t i, double x) {
    params[i] = x;
    return ppo_loss<double>(net, ptrs, cfg, nullptr).total;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    const double numeric = (8.0 * (loss_at(i, saved + h) - loss_at(i, saved - h)) -
                            (loss_at(i, saved + 2 * h) - loss_at(i, saved - 2 * h))) /
                           (12.0 * h);
    params[i] = saved;
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - grad[i]) / denom);
  }
  if (episodes_out != nullptr) *episodes_out = episodes;
  return result;
}

}  // namespace alphagen
