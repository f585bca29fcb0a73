#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/evaluator.hpp"
#include "alphagen/metrics.hpp"
#include "alphagen/panel.hpp"

namespace alphagen {

struct PlantedAlpha {
  Expression expr;
  double weight = 1.0;
};

/// `count` consecutive weekdays starting at `first` (ISO-8601).
inline std::vector<std::string> weekday_calendar(std::size_t count, int year = 2015, unsigned month = 1,
                                                 unsigned day = 5) {
  using namespace std::chrono;
  std::vector<std::string> out;
  out.reserve(count);
  sys_days cursor{std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day}};
  while (out.size() < count) {
    const weekday wd{cursor};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{cursor};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                    static_cast<unsigned>(ymd.day()));
      out.emplace_back(buf);
    }
    cursor += days{1};
  }
  return out;
}

/// Deterministic synthetic panel. Prices follow per-stock geometric random
/// walks driven by a common market shock; volumes follow a log-AR(1) around
/// a per-stock level. The target on each day is
///   N( sum_j weight_j * N(f_j(X_t)) + noise_sigma * N(eps_t) ),  eps_t ~ iid Gaussian,
/// and is missing on days where any planted alpha is missing or degenerate.
inline PanelData synth_generate(std::uint64_t seed, std::size_t stocks, std::size_t days,
                                const std::vector<PlantedAlpha>& planted, double noise_sigma) {
  if (stocks < 2 || days < 2) throw ContractError("synthetic panel needs at least 2 stocks and 2 days");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  PanelData panel;
  panel.dates = weekday_calendar(days);
  for (std::size_t s = 0; s < stocks; ++s) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "S%04zu", s);
    panel.symbols.emplace_back(buf);
  }
  for (auto& g : panel.features) g = Grid(days, stocks);

  std::vector<double> beta(stocks), vol(stocks), price(stocks), log_level(stocks), ar(stocks, 0.0);
  for (std::size_t s = 0; s < stocks; ++s) {
    beta[s] = uniform(0.5, 1.5);
    vol[s] = uniform(0.01, 0.03);
    price[s] = uniform(10.0, 100.0);
    log_level[s] = uniform(12.0, 16.0);
  }
  auto& open = panel.feature(Feature::Open);
  auto& close = panel.feature(Feature::Close);
  auto& high = panel.feature(Feature::High);
  auto& low = panel.feature(Feature::Low);
  auto& volume = panel.feature(Feature::Volume);
  auto& vwap = panel.feature(Feature::Vwap);
  for (std::size_t d = 0; d < days; ++d) {
    const double market = 0.01 * gauss(rng);
    for (std::size_t s = 0; s < stocks; ++s) {
      const double prev = price[s];
      const double o = prev * std::exp(0.005 * gauss(rng));
      const double c = prev * std::exp(beta[s] * market + vol[s] * gauss(rng));
      const double h = std::max(o, c) * std::exp(std::abs(0.01 * gauss(rng)));
      const double l = std::min(o, c) * std::exp(-std::abs(0.01 * gauss(rng)));
      ar[s] = 0.7 * ar[s] + 0.3 * gauss(rng);
      open(d, s) = o;
      close(d, s) = c;
      high(d, s) = h;
      low(d, s) = l;
      vwap(d, s) = l + uniform(0.2, 0.8) * (h - l);
      volume(d, s) = std::exp(log_level[s] + ar[s]);
      price[s] = c;
    }
  }

  Grid signal(days, stocks, 0.0);
  for (const auto& p : planted) {
    const AlphaMatrix m = evaluate(p.expr, panel);
    if (m.valid_day_count == 0 || !semantic_validity(m, panel.all_days(), 0.5)) {
      throw DataError("planted alpha is not evaluable on the generated panel: " + to_infix_string(p.expr));
    }
    const Grid norm = normalize_days(m.values);
    for (std::size_t c = 0; c < signal.raw().size(); ++c) signal.raw()[c] += p.weight * norm.raw()[c];
  }
  Grid target(days, stocks);
  std::vector<double> eps(stocks), mixed(stocks);
  for (std::size_t d = 0; d < days; ++d) {
    for (double& e : eps) e = gauss(rng);
    const auto noise = normalize_cross_section(eps);
    auto row = signal.row(d);
    for (std::size_t s = 0; s < stocks; ++s) mixed[s] = row[s] + (noise ? noise_sigma * (*noise)[s] : 0.0);
    if (auto t = normalize_cross_section(mixed)) {
      bool complete = true;
      for (double v : row) complete = complete && !is_missing(v);
      if (complete) std::copy(t->begin(), t->end(), target.row(d).begin());
    }
  }
  panel.target = std::move(target);
  return panel;
}

}  // namespace alphagen
