#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/evaluator.hpp"
#include "alphagen/metrics.hpp"

namespace alphagen {

namespace detail {

// (1/T) sum_t <a_t, b_t> with missing cells counted as zero.
inline double mean_day_product(const Grid& a, const Grid& b) {
  double total = 0.0;
  const auto& x = a.raw();
  const auto& y = b.raw();
  for (std::size_t c = 0; c < x.size(); ++c) {
    if (!is_missing(x[c]) && !is_missing(y[c])) total += x[c] * y[c];
  }
  return a.days() == 0 ? 0.0 : total / static_cast<double>(a.days());
}

inline void weighted_row(const std::vector<const Grid*>& grids, const std::vector<double>& w, std::size_t day,
                         std::span<double> out) {
  std::fill(out.begin(), out.end(), kMissing);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    auto row = grids[i]->row(day);
    for (std::size_t s = 0; s < out.size(); ++s) {
      if (is_missing(row[s])) continue;
      out[s] = (is_missing(out[s]) ? 0.0 : out[s]) + w[i] * row[s];
    }
  }
  for (double& v : out) {
    if (!std::isfinite(v)) v = kMissing;
  }
}

}  // namespace detail

struct GdConfig {
  std::size_t steps = 1000;
  double learning_rate = 5e-2;
  double stop_tolerance = 1e-6;
  double ridge = 1e-6;  // optimisation only, never part of the reported loss
};

enum class AddStatus { Added, Duplicate };

struct AddOutcome {
  AddStatus status = AddStatus::Added;
  std::optional<std::string> evicted;  // infix of the removed member, if any
};

/// Linear combination of normalised alphas with weights fitted to the target
/// by minimising the cached-IC form of the MSE loss.
///
/// All grids held here cover the training days only. Member values and the
/// target are normalised per day on insertion. The caches are day-averaged
/// inner products of normalised cross-sections with missing cells counted as
/// zero; on complete data they are the mean daily ICs, and in general they
/// form a Gram matrix, so the loss stays convex.
class AlphaPool {
 public:
  struct Member {
    Expression expr;
    Grid values;  // normalised per day
    double single_ic = 0.0;
  };

  AlphaPool(const Grid& target, std::size_t capacity, GdConfig gd = {}, std::uint64_t seed = 0)
      : target_(normalize_days(target)),
        target_norm_(detail::mean_day_product(target_, target_)),
        capacity_(capacity),
        gd_(gd),
        rng_(seed) {
    if (capacity_ < 1) throw ContractError("pool capacity must be >= 1");
    if (gd_.steps < 1 || !(gd_.learning_rate > 0.0)) throw ContractError("invalid gradient-descent config");
  }

  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t stocks() const { return target_.stocks(); }
  const GdConfig& gd_config() const { return gd_; }
  const std::vector<Member>& members() const { return members_; }
  const std::vector<double>& weights() const { return weights_; }
  const Grid& target() const { return target_; }
  double objective() const { return objective_; }
  double single_ic(std::size_t i) const { return members_.at(i).single_ic; }
  double mutual_ic(std::size_t i, std::size_t j) const { return mutual_.at(i).at(j); }

  bool contains(const Expression& expr) const {
    return std::any_of(members_.begin(), members_.end(), [&](const Member& m) { return m.expr == expr; });
  }

  /// (1/n)(1 - 2 sum w_i ic_i + sum_ij w_i w_j mic_ij) from the caches only.
  /// The leading 1 is the share of training days with a usable target.
  double loss(const std::vector<double>& w) const {
    check_weights(w);
    double linear = 0.0, quadratic = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      linear += w[i] * members_[i].single_ic;
      for (std::size_t j = 0; j < w.size(); ++j) quadratic += w[i] * w[j] * mutual_[i][j];
    }
    return (target_norm_ - 2.0 * linear + quadratic) / static_cast<double>(stocks());
  }

  std::vector<double> loss_gradient(const std::vector<double>& w) const {
    check_weights(w);
    std::vector<double> g(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      double mw = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) mw += mutual_[i][j] * w[j];
      g[i] = 2.0 * (mw - members_[i].single_ic) / static_cast<double>(stocks());
    }
    return g;
  }

  /// Gradient descent from the current weights. Descent runs on n * loss plus
  /// the ridge term, which has the same minimiser as the loss; the step is
  /// capped by a Gershgorin bound on the curvature so it cannot diverge.
  std::vector<double> optimize_weights() const {
    const std::size_t k = members_.size();
    std::vector<double> w = weights_;
    if (k == 0) return w;
    double bound = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < k; ++j) row += std::abs(mutual_[i][j]);
      bound = std::max(bound, row);
    }
    const double step = std::min(gd_.learning_rate, 0.5 / (bound + gd_.ridge));
    std::vector<double> g(k);
    for (std::size_t it = 0; it < gd_.steps; ++it) {
      double gmax = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        double mw = 0.0;
        for (std::size_t j = 0; j < k; ++j) mw += mutual_[i][j] * w[j];
        g[i] = 2.0 * (mw - members_[i].single_ic) + 2.0 * gd_.ridge * w[i];
        gmax = std::max(gmax, std::abs(g[i]));
      }
      if (!(gmax < std::numeric_limits<double>::infinity())) throw OptimizationError("weight optimisation diverged");
      if (gmax < gd_.stop_tolerance) break;
      for (std::size_t i = 0; i < k; ++i) w[i] -= step * g[i];
    }
    const double final_loss = loss(w);
    if (!std::isfinite(final_loss)) throw OptimizationError("weight optimisation produced a non-finite loss");
    if (final_loss > loss(weights_)) return weights_;
    return w;
  }

  /// Adds a candidate alpha (raw training-day values), refits the weights and
  /// evicts the smallest-|w| member when over capacity. A refit that would
  /// lower the combined IC is discarded in favour of the previous weights
  /// with the newcomer at zero.
  AddOutcome add_alpha(const Expression& expr, const Grid& train_values) {
    if (contains(expr)) return {AddStatus::Duplicate, std::nullopt};
    std::vector<double> previous = weights_;
    const double previous_objective = objective_;
    append(expr, train_values, std::uniform_real_distribution<double>(-0.01, 0.01)(rng_));
    weights_ = optimize_weights();
    if (!previous.empty() && evaluate_objective(weights_) < previous_objective) {
      previous.push_back(0.0);
      weights_ = std::move(previous);
    }
    AddOutcome outcome;
    if (members_.size() > capacity_) {
      std::size_t worst = 0;
      for (std::size_t i = 1; i < weights_.size(); ++i) {
        if (std::abs(weights_[i]) < std::abs(weights_[worst])) worst = i;
      }
      outcome.evicted = to_infix_string(members_[worst].expr);
      remove(worst);
    }
    refresh_objective();
    return outcome;
  }

  /// Inserts members with fixed weights and no refit (checkpoint restore).
  void restore(const std::vector<std::pair<Expression, Grid>>& alphas, const std::vector<double>& weights) {
    if (alphas.size() != weights.size()) throw ContractError("restore: weight count mismatch");
    if (alphas.size() > capacity_) throw ContractError("restore: more alphas than capacity");
    members_.clear();
    mutual_.clear();
    weights_.clear();
    for (std::size_t i = 0; i < alphas.size(); ++i) append(alphas[i].first, alphas[i].second, weights[i]);
    refresh_objective();
  }

  void set_weights(std::vector<double> w) {
    check_weights(w);
    weights_ = std::move(w);
    refresh_objective();
  }

  /// Weighted sum of member values on one training day. A missing member
  /// value contributes nothing; a cell is missing only when every member is.
  std::vector<double> combined_values(std::size_t day) const {
    if (empty()) throw EmptyPoolError();
    std::vector<const Grid*> grids;
    for (const auto& m : members_) grids.push_back(&m.values);
    std::vector<double> z(stocks());
    detail::weighted_row(grids, weights_, day, z);
    return z;
  }

  Grid combined_grid() const {
    if (empty()) throw EmptyPoolError();
    Grid out(target_.days(), target_.stocks());
    for (std::size_t d = 0; d < out.days(); ++d) {
      const auto z = combined_values(d);
      std::copy(z.begin(), z.end(), out.row(d).begin());
    }
    return out;
  }

  /// Mean IC of the current combination against the target.
  double evaluate_objective(const std::vector<double>& w) const {
    if (empty()) return 0.0;
    check_weights(w);
    std::vector<const Grid*> grids;
    for (const auto& m : members_) grids.push_back(&m.values);
    Grid out(target_.days(), target_.stocks());
    for (std::size_t d = 0; d < out.days(); ++d) detail::weighted_row(grids, w, d, out.row(d));
    return mean_ic(out, target_).value_or(0.0);
  }

 private:
  void check_weights(const std::vector<double>& w) const {
    if (w.size() != members_.size()) throw ContractError("weight vector length differs from pool size");
  }

  void append(const Expression& expr, const Grid& train_values, double weight) {
    if (train_values.days() != target_.days() || train_values.stocks() != target_.stocks()) {
      throw ContractError("alpha values do not match the pool's training grid");
    }
    Member m{expr, normalize_days(train_values), 0.0};
    const double self = detail::mean_day_product(m.values, m.values);
    if (!(self > 0.0)) throw ContractError("alpha has no usable training day: " + to_infix_string(expr));
    m.single_ic = detail::mean_day_product(m.values, target_);
    std::vector<double> row(members_.size() + 1, 0.0);
    for (std::size_t i = 0; i < members_.size(); ++i) {
      row[i] = detail::mean_day_product(members_[i].values, m.values);
      mutual_[i].push_back(row[i]);
    }
    row.back() = self;
    mutual_.push_back(std::move(row));
    members_.push_back(std::move(m));
    weights_.push_back(weight);
  }

  void remove(std::size_t index) {
    const auto at = static_cast<std::ptrdiff_t>(index);
    members_.erase(members_.begin() + at);
    weights_.erase(weights_.begin() + at);
    mutual_.erase(mutual_.begin() + at);
    for (auto& row : mutual_) row.erase(row.begin() + at);
  }

  void refresh_objective() { objective_ = evaluate_objective(weights_); }

  Grid target_;
  double target_norm_;
  std::size_t capacity_;
  GdConfig gd_;
  std::mt19937_64 rng_;
  std::vector<Member> members_;
  std::vector<double> weights_;
  std::vector<std::vector<double>> mutual_;
  double objective_ = 0.0;
};

/// Combined signal of (expression, weight) pairs evaluated on a panel:
/// per-day normalised member values weighted and summed. Days outside
/// `range` are missing.
inline Grid combined_signal(const std::vector<Expression>& exprs, const std::vector<double>& weights,
                            const PanelData& panel, DayRange range) {
  if (exprs.empty()) throw EmptyPoolError();
  if (exprs.size() != weights.size()) throw ContractError("combined_signal: weight count mismatch");
  std::vector<Grid> values;
  for (const auto& e : exprs) values.push_back(normalize_days(evaluate(e, panel, range).values));
  std::vector<const Grid*> grids;
  for (const auto& v : values) grids.push_back(&v);
  Grid out(panel.days(), panel.stocks());
  for (std::size_t d = 0; d < out.days(); ++d) detail::weighted_row(grids, weights, d, out.row(d));
  return out;
}

}  // namespace alphagen
