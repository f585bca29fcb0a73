#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/panel.hpp"

namespace alphagen {

struct BacktestConfig {
  std::size_t k = 50;
  std::size_t n = 5;
  double cost_bps = 0.0;  // per side, on traded notional
  double initial_worth = 1.0;
};

struct DayTrades {
  std::vector<std::size_t> buys;
  std::vector<std::size_t> sells;
};

struct BacktestReport {
  std::vector<double> net_worth_series;  // valued at each close before that day's trades
  std::vector<double> daily_turnover;    // traded notional / pre-trade worth
  std::vector<double> costs;
  std::vector<double> post_trade_worth;  // cash + holdings at close after trading
  std::vector<std::size_t> holdings_count;
  std::vector<bool> signal_missing;      // day skipped: no usable signal
  std::vector<DayTrades> trade_log;
  double final_worth = 0.0;
};

/// Daily top-k / drop-n simulation over `range`. Each day the stocks are
/// ranked by signal (descending, ties by symbol order); up to n held names
/// that left the top k are sold (worst first) and up to n unheld top-k names
/// are bought (best first), each buy sized at worth/k or the cash left.
/// Trades fill at the close; the last day is only marked to market.
inline BacktestReport run_topk_dropn(const PanelData& panel, const Grid& signal, DayRange range,
                                     const BacktestConfig& cfg) {
  const std::size_t stocks = panel.stocks();
  if (cfg.n < 1 || cfg.n > cfg.k || cfg.k > stocks) throw ContractError("backtest needs 1 <= n <= k <= stocks");
  if (signal.days() != panel.days() || signal.stocks() != stocks) throw ContractError("signal shape differs from panel");
  if (range.last >= panel.days() || range.first > range.last) throw ContractError("backtest range outside panel");
  const Grid& close = panel.feature(Feature::Close);
  const double fee = cfg.cost_bps * 1e-4;

  std::vector<double> shares(stocks, 0.0);
  double cash = cfg.initial_worth;
  BacktestReport report;

  for (std::size_t d = range.first; d <= range.last; ++d) {
    double worth = cash;
    for (std::size_t s = 0; s < stocks; ++s) {
      if (shares[s] == 0.0) continue;
      if (is_missing(close(d, s)) || close(d, s) <= 0.0) throw DataError("missing or non-positive close for a held stock");
      worth += shares[s] * close(d, s);
    }
    report.net_worth_series.push_back(worth);

    DayTrades trades;
    double traded = 0.0, cost = 0.0;
    std::vector<std::size_t> ranked;
    for (std::size_t s = 0; s < stocks; ++s) {
      if (!is_missing(signal(d, s)) && !is_missing(close(d, s)) && close(d, s) > 0.0) ranked.push_back(s);
    }
    const bool skip = ranked.empty() || d == range.last;
    report.signal_missing.push_back(ranked.empty());
    if (!skip) {
      std::stable_sort(ranked.begin(), ranked.end(),
                       [&](std::size_t a, std::size_t b) { return signal(d, a) > signal(d, b); });
      std::vector<std::size_t> rank_of(stocks, stocks);  // unranked sort last
      for (std::size_t r = 0; r < ranked.size(); ++r) rank_of[ranked[r]] = r;
      const std::size_t top = std::min(cfg.k, ranked.size());

      std::vector<std::size_t> leaving;
      for (std::size_t s = 0; s < stocks; ++s) {
        if (shares[s] > 0.0 && rank_of[s] >= top) leaving.push_back(s);
      }
      std::sort(leaving.begin(), leaving.end(), [&](std::size_t a, std::size_t b) {
        return rank_of[a] != rank_of[b] ? rank_of[a] > rank_of[b] : a > b;
      });
      for (std::size_t q = 0; q < leaving.size() && trades.sells.size() < cfg.n; ++q) {
        const std::size_t s = leaving[q];
        if (is_missing(close(d, s))) continue;
        const double notional = shares[s] * close(d, s);
        cash += notional * (1.0 - fee);
        traded += notional;
        cost += notional * fee;
        shares[s] = 0.0;
        trades.sells.push_back(s);
      }
      std::size_t held = 0;
      for (double sh : shares) held += sh > 0.0 ? 1 : 0;
      const double slot = (worth - cost) / static_cast<double>(cfg.k);
      for (std::size_t r = 0; r < top && trades.buys.size() < cfg.n && held < cfg.k; ++r) {
        const std::size_t s = ranked[r];
        if (shares[s] > 0.0) continue;
        const double notional = std::min(slot, cash / (1.0 + fee));
        if (notional <= 0.0) break;
        shares[s] = notional / close(d, s);
        cash -= notional * (1.0 + fee);
        traded += notional;
        cost += notional * fee;
        trades.buys.push_back(s);
        ++held;
      }
    }
    double after = cash;
    std::size_t count = 0;
    for (std::size_t s = 0; s < stocks; ++s) {
      if (shares[s] == 0.0) continue;
      after += shares[s] * close(d, s);
      ++count;
    }
    report.post_trade_worth.push_back(after);
    report.costs.push_back(cost);
    report.daily_turnover.push_back(worth > 0.0 ? traded / worth : 0.0);
    report.holdings_count.push_back(count);
    report.trade_log.push_back(std::move(trades));
  }
  report.final_worth = report.net_worth_series.back();
  return report;
}

struct BacktestSummary {
  double total_return = 0.0;
  double annualized_return = 0.0;
  double max_drawdown = 0.0;
  double mean_turnover = 0.0;
};

inline BacktestSummary summarize(const BacktestReport& report) {
  const auto& w = report.net_worth_series;
  if (w.empty()) throw ContractError("summarize: empty report");
  BacktestSummary s;
  s.total_return = w.back() / w.front() - 1.0;
  const double periods = static_cast<double>(w.size() - 1);
  s.annualized_return = periods > 0 ? std::pow(w.back() / w.front(), 252.0 / periods) - 1.0 : 0.0;
  double peak = w.front();
  for (double v : w) {
    peak = std::max(peak, v);
    s.max_drawdown = std::max(s.max_drawdown, (peak - v) / peak);
  }
  if (!report.daily_turnover.empty()) {
    s.mean_turnover = std::accumulate(report.daily_turnover.begin(), report.daily_turnover.end(), 0.0) /
                      static_cast<double>(report.daily_turnover.size());
  }
  return s;
}

}  // namespace alphagen
