#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "alphagen/core.hpp"

namespace alphagen {

namespace detail {

// A cross-section is degenerate when its spread is zero up to rounding
// relative to its magnitude.
inline bool degenerate_spread(double centered_ss, double raw_ss) {
  return !(centered_ss > 1e-20 * raw_ss) || centered_ss <= 0.0;
}

}  // namespace detail

/// Centres a cross-section to mean 0 and scales it to unit Euclidean length.
/// Missing entries stay missing and are ignored for the statistics. Returns
/// nullopt for a degenerate vector (fewer than two present values, or all
/// present values equal).
inline std::optional<std::vector<double>> normalize_cross_section(std::span<const double> values) {
  double sum = 0.0, raw_ss = 0.0;
  std::size_t count = 0;
  for (double v : values) {
    if (is_missing(v)) continue;
    sum += v;
    raw_ss += v * v;
    ++count;
  }
  if (count < 2) return std::nullopt;
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (double v : values) {
    if (!is_missing(v)) ss += (v - mean) * (v - mean);
  }
  if (detail::degenerate_spread(ss, raw_ss)) return std::nullopt;
  const double norm = std::sqrt(ss);
  std::vector<double> out(values.size(), kMissing);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!is_missing(values[i])) out[i] = (values[i] - mean) / norm;
  }
  return out;
}

/// Pearson correlation over pairwise-complete entries. nullopt when fewer
/// than two complete pairs remain or either side is constant on them.
inline std::optional<double> daily_ic(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ContractError("daily_ic: length mismatch");
  double su = 0.0, sv = 0.0, ru = 0.0, rv = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (is_missing(u[i]) || is_missing(v[i])) continue;
    su += u[i];
    sv += v[i];
    ru += u[i] * u[i];
    rv += v[i] * v[i];
    ++count;
  }
  if (count < 2) return std::nullopt;
  const double mu = su / static_cast<double>(count);
  const double mv = sv / static_cast<double>(count);
  double cov = 0.0, vu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (is_missing(u[i]) || is_missing(v[i])) continue;
    const double du = u[i] - mu, dv = v[i] - mv;
    cov += du * dv;
    vu += du * du;
    vv += dv * dv;
  }
  if (detail::degenerate_spread(vu, ru) || detail::degenerate_spread(vv, rv)) return std::nullopt;
  return std::clamp(cov / std::sqrt(vu * vv), -1.0, 1.0);
}

/// 1-based ranks; ties share the mean of the ranks they span. Missing
/// entries stay missing and are not ranked.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order;
  order.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!is_missing(values[i])) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size(), kMissing);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t q = i; q <= j; ++q) ranks[order[q]] = shared;
    i = j + 1;
  }
  return ranks;
}

/// Spearman-style IC: Pearson on average ranks of the pairwise-complete entries.
inline std::optional<double> rank_ic(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ContractError("rank_ic: length mismatch");
  std::vector<double> cu, cv;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (is_missing(u[i]) || is_missing(v[i])) continue;
    cu.push_back(u[i]);
    cv.push_back(v[i]);
  }
  const auto ru = average_ranks(cu);
  const auto rv = average_ranks(cv);
  return daily_ic(ru, rv);
}

namespace detail {

template <typename DailyMetric>
std::optional<double> mean_over_days(const Grid& values, const Grid& target, DailyMetric metric) {
  if (values.days() != target.days() || values.stocks() != target.stocks()) {
    throw ContractError("mean IC: grid shapes differ");
  }
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t d = 0; d < values.days(); ++d) {
    if (auto ic = metric(values.row(d), target.row(d))) {
      sum += *ic;
      ++valid;
    }
  }
  if (valid == 0) return std::nullopt;
  return sum / static_cast<double>(valid);
}

}  // namespace detail

/// Mean of the daily IC over days where both cross-sections are usable.
inline std::optional<double> mean_ic(const Grid& values, const Grid& target) {
  return detail::mean_over_days(values, target, [](auto a, auto b) { return daily_ic(a, b); });
}

inline std::optional<double> mean_rank_ic(const Grid& values, const Grid& target) {
  return detail::mean_over_days(values, target, [](auto a, auto b) { return rank_ic(a, b); });
}

/// Applies normalize_cross_section to every day; degenerate days become
/// fully missing.
inline Grid normalize_days(const Grid& values) {
  Grid out(values.days(), values.stocks());
  for (std::size_t d = 0; d < values.days(); ++d) {
    if (auto n = normalize_cross_section(values.row(d))) {
      std::copy(n->begin(), n->end(), out.row(d).begin());
    }
  }
  return out;
}

}  // namespace alphagen
