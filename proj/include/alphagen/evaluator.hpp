#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/metrics.hpp"
#include "alphagen/panel.hpp"

namespace alphagen {

/// Evaluated alpha values aligned with the source panel. Cells outside the
/// evaluated range, in warm-up, or non-finite are missing.
struct AlphaMatrix {
  Grid values;
  std::size_t valid_day_count = 0;  // days with at least one present cell
};

namespace detail {

inline double finite_or_missing(double v) { return std::isfinite(v) ? v : kMissing; }

template <typename F>
Grid map_cells(const Grid& a, F f) {
  Grid out(a.days(), a.stocks());
  auto& o = out.raw();
  const auto& x = a.raw();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = is_missing(x[i]) ? kMissing : finite_or_missing(f(x[i]));
  return out;
}

template <typename F>
Grid zip_cells(const Grid& a, const Grid& b, F f) {
  Grid out(a.days(), a.stocks());
  auto& o = out.raw();
  const auto& x = a.raw();
  const auto& y = b.raw();
  for (std::size_t i = 0; i < x.size(); ++i) {
    o[i] = (is_missing(x[i]) || is_missing(y[i])) ? kMissing : finite_or_missing(f(x[i], y[i]));
  }
  return out;
}

// Applies `f(window)` over trailing windows of exactly `t` days per stock.
// Any missing value inside the window yields a missing result.
template <typename F>
Grid rolling(const Grid& a, int t, F f) {
  const std::size_t w = static_cast<std::size_t>(t);
  Grid out(a.days(), a.stocks());
  std::vector<double> window(w);
  for (std::size_t s = 0; s < a.stocks(); ++s) {
    std::size_t run = 0;  // consecutive present values ending at d
    for (std::size_t d = 0; d < a.days(); ++d) {
      run = is_missing(a(d, s)) ? 0 : run + 1;
      if (run < w) continue;
      for (std::size_t k = 0; k < w; ++k) window[k] = a(d + 1 - w + k, s);
      out(d, s) = finite_or_missing(f(std::span<double>(window)));
    }
  }
  return out;
}

template <typename F>
Grid rolling_pair(const Grid& a, const Grid& b, int t, F f) {
  const std::size_t w = static_cast<std::size_t>(t);
  Grid out(a.days(), a.stocks());
  std::vector<double> wa(w), wb(w);
  for (std::size_t s = 0; s < a.stocks(); ++s) {
    std::size_t run = 0;
    for (std::size_t d = 0; d < a.days(); ++d) {
      run = (is_missing(a(d, s)) || is_missing(b(d, s))) ? 0 : run + 1;
      if (run < w) continue;
      for (std::size_t k = 0; k < w; ++k) {
        wa[k] = a(d + 1 - w + k, s);
        wb[k] = b(d + 1 - w + k, s);
      }
      out(d, s) = finite_or_missing(f(std::span<const double>(wa), std::span<const double>(wb)));
    }
  }
  return out;
}

inline double window_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Population moments (divide by window length).
inline double window_var(std::span<const double> x) {
  const double m = window_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

inline double window_cov(std::span<const double> x, std::span<const double> y) {
  const double mx = window_mean(x), my = window_mean(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size());
}

inline double window_corr(std::span<const double> x, std::span<const double> y) {
  const double mx = window_mean(x), my = window_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, rx = 0.0, ry = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    rx += x[i] * x[i];
    ry += y[i] * y[i];
  }
  if (degenerate_spread(sxx, rx) || degenerate_spread(syy, ry)) return kMissing;
  return sxy / std::sqrt(sxx * syy);
}

inline Grid shifted(const Grid& a, int t) {
  const std::size_t lag = static_cast<std::size_t>(t);
  Grid out(a.days(), a.stocks());
  for (std::size_t d = lag; d < a.days(); ++d) {
    auto src = a.row(d - lag);
    std::copy(src.begin(), src.end(), out.row(d).begin());
  }
  return out;
}

inline Grid evaluate_node(const Node& node, const PanelData& panel, std::size_t days) {
  const std::size_t n = panel.stocks();
  switch (node.kind) {
    case TokenKind::Feature: return panel.feature(node.feature).slice({0, days - 1});
    case TokenKind::Constant: return Grid(days, n, node.constant);
    case TokenKind::Operator: break;
    default: throw ContractError("evaluate: malformed expression tree");
  }
  const auto& spec = spec_of(node.op);
  const Grid x = evaluate_node(*node.children[0], panel, days);
  if (!spec.time_series() && spec.arity == 1) {
    if (node.op == Op::Abs) return map_cells(x, [](double v) { return std::abs(v); });
    return map_cells(x, [](double v) { return v > 0.0 ? std::log(v) : kMissing; });
  }
  if (!spec.time_series()) {
    const Grid y = evaluate_node(*node.children[1], panel, days);
    switch (node.op) {
      case Op::Add: return zip_cells(x, y, [](double a, double b) { return a + b; });
      case Op::Sub: return zip_cells(x, y, [](double a, double b) { return a - b; });
      case Op::Mul: return zip_cells(x, y, [](double a, double b) { return a * b; });
      case Op::Div: return zip_cells(x, y, [](double a, double b) { return b != 0.0 ? a / b : kMissing; });
      case Op::Greater: return zip_cells(x, y, [](double a, double b) { return std::max(a, b); });
      case Op::Less: return zip_cells(x, y, [](double a, double b) { return std::min(a, b); });
      default: break;
    }
    throw ContractError("evaluate: unknown cross-section operator");
  }
  const int t = node.window;
  switch (node.op) {
    case Op::Ref: return shifted(x, t);
    case Op::Delta: return zip_cells(x, shifted(x, t), [](double a, double b) { return a - b; });
    case Op::Mean: return rolling(x, t, [](std::span<double> w) { return window_mean(w); });
    case Op::Sum:
      return rolling(x, t, [](std::span<double> w) {
        double s = 0.0;
        for (double v : w) s += v;
        return s;
      });
    case Op::Var: return rolling(x, t, [](std::span<double> w) { return window_var(w); });
    case Op::Std: return rolling(x, t, [](std::span<double> w) { return std::sqrt(window_var(w)); });
    case Op::Max: return rolling(x, t, [](std::span<double> w) { return *std::max_element(w.begin(), w.end()); });
    case Op::Min: return rolling(x, t, [](std::span<double> w) { return *std::min_element(w.begin(), w.end()); });
    case Op::Med:
      return rolling(x, t, [](std::span<double> w) {
        const std::size_t mid = w.size() / 2;
        std::nth_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(mid), w.end());
        const double upper = w[mid];
        if (w.size() % 2 == 1) return upper;
        const double lower = *std::max_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(mid));
        return (lower + upper) / 2.0;
      });
    case Op::Mad:
      return rolling(x, t, [](std::span<double> w) {
        const double m = window_mean(w);
        double s = 0.0;
        for (double v : w) s += std::abs(v - m);
        return s / static_cast<double>(w.size());
      });
    case Op::WMA:
      return rolling(x, t, [](std::span<double> w) {
        // weights 1..t, newest heaviest
        double s = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) s += static_cast<double>(k + 1) * w[k];
        const double total = static_cast<double>(w.size()) * static_cast<double>(w.size() + 1) / 2.0;
        return s / total;
      });
    case Op::EMA:
      return rolling(x, t, [](std::span<double> w) {
        const double alpha = 2.0 / (static_cast<double>(w.size()) + 1.0);
        double ema = w[0];
        for (std::size_t k = 1; k < w.size(); ++k) ema = alpha * w[k] + (1.0 - alpha) * ema;
        return ema;
      });
    case Op::Cov:
    case Op::Corr: {
      const Grid y = evaluate_node(*node.children[1], panel, days);
      if (node.op == Op::Cov) return rolling_pair(x, y, t, window_cov);
      return rolling_pair(x, y, t, window_corr);
    }
    default: break;
  }
  throw ContractError("evaluate: unknown time-series operator");
}

inline std::size_t count_valid_days(const Grid& g) {
  std::size_t count = 0;
  for (std::size_t d = 0; d < g.days(); ++d) {
    auto row = g.row(d);
    if (std::any_of(row.begin(), row.end(), [](double v) { return !is_missing(v); })) ++count;
  }
  return count;
}

}  // namespace detail

/// Evaluates over days [0, range.last] so time-series operators see history,
/// then blanks every day outside the range. The result spans all panel days.
inline AlphaMatrix evaluate(const Expression& expr, const PanelData& panel, DayRange range) {
  if (range.last >= panel.days() || range.first > range.last) throw ContractError("evaluate: day range outside panel");
  Grid head = detail::evaluate_node(expr.root(), panel, range.last + 1);
  Grid full(panel.days(), panel.stocks());
  for (std::size_t d = range.first; d <= range.last; ++d) {
    auto src = head.row(d);
    std::copy(src.begin(), src.end(), full.row(d).begin());
  }
  AlphaMatrix out{std::move(full), 0};
  out.valid_day_count = detail::count_valid_days(out.values);
  return out;
}

inline AlphaMatrix evaluate(const Expression& expr, const PanelData& panel) {
  return evaluate(expr, panel, panel.all_days());
}

inline constexpr double kDefaultMinValidFraction = 0.8;

/// An evaluated alpha is usable when enough cells in the range are present
/// and no day in the range with present cells is cross-sectionally constant.
inline bool semantic_validity(const AlphaMatrix& matrix, DayRange range,
                              double min_valid_fraction = kDefaultMinValidFraction) {
  const Grid& g = matrix.values;
  std::size_t present = 0;
  for (std::size_t d = range.first; d <= range.last; ++d) {
    auto row = g.row(d);
    const auto count = static_cast<std::size_t>(
        std::count_if(row.begin(), row.end(), [](double v) { return !is_missing(v); }));
    if (count == 0) continue;
    if (!normalize_cross_section(row)) return false;
    present += count;
  }
  const double cells = static_cast<double>(range.size() * g.stocks());
  return cells > 0 && static_cast<double>(present) >= min_valid_fraction * cells;
}

/// Bounded LRU cache of evaluated alphas keyed by RPN. Thread-safe.
class EvaluationCache {
 public:
  explicit EvaluationCache(std::size_t capacity = 256) : capacity_(capacity) {}

  std::shared_ptr<const AlphaMatrix> get_or_evaluate(const Expression& expr, const PanelData& panel) {
    const std::string key = expr.key();
    {
      std::lock_guard lock(mutex_);
      if (auto it = index_.find(key); it != index_.end()) {
        order_.splice(order_.begin(), order_, it->second);
        ++hits_;
        return it->second->second;
      }
    }
    auto value = std::make_shared<const AlphaMatrix>(evaluate(expr, panel));
    std::lock_guard lock(mutex_);
    if (capacity_ == 0) return value;
    if (auto it = index_.find(key); it != index_.end()) return it->second->second;
    order_.emplace_front(key, value);
    index_[key] = order_.begin();
    if (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
    return value;
  }

  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }

 private:
  using Entry = std::pair<std::string, std::shared_ptr<const AlphaMatrix>>;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> order_;
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
  std::size_t hits_ = 0;
};

}  // namespace alphagen
