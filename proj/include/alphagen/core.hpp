#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace alphagen {

/// Missing cells are stored as quiet NaN throughout the library.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return !std::isfinite(v); }

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV rows, token sequences, infix strings).
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t position)
      : Error(what), position(position) {}
  std::size_t position;
};

/// Well-formed input that violates a data invariant.
struct DataError : Error {
  using Error::Error;
};

/// A caller broke an operation's precondition.
struct ContractError : Error {
  using Error::Error;
};

struct OptimizationError : Error {
  using Error::Error;
};

struct EmptyPoolError : Error {
  EmptyPoolError() : Error("alpha pool is empty") {}
};

/// Inclusive day-index interval.
struct DayRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t size() const { return last - first + 1; }
  bool contains(std::size_t day) const { return day >= first && day <= last; }
  friend bool operator==(const DayRange&, const DayRange&) = default;
};

/// Dense (day, stock) matrix, row-major by day.
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t days, std::size_t stocks, double fill = kMissing)
      : days_(days), stocks_(stocks), data_(days * stocks, fill) {}

  std::size_t days() const { return days_; }
  std::size_t stocks() const { return stocks_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t day, std::size_t stock) { return data_[day * stocks_ + stock]; }
  double operator()(std::size_t day, std::size_t stock) const { return data_[day * stocks_ + stock]; }

  std::span<double> row(std::size_t day) { return {data_.data() + day * stocks_, stocks_}; }
  std::span<const double> row(std::size_t day) const { return {data_.data() + day * stocks_, stocks_}; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  /// Copy of days [range.first, range.last] as a standalone grid.
  Grid slice(DayRange range) const {
    Grid out(range.size(), stocks_);
    for (std::size_t d = 0; d < range.size(); ++d) {
      auto src = row(range.first + d);
      std::copy(src.begin(), src.end(), out.row(d).begin());
    }
    return out;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    if (a.days_ != b.days_ || a.stocks_ != b.stocks_) return false;
    for (std::size_t i = 0; i < a.data_.size(); ++i) {
      const double x = a.data_[i], y = b.data_[i];
      if (is_missing(x) != is_missing(y)) return false;
      if (!is_missing(x) && x != y) return false;
    }
    return true;
  }

 private:
  std::size_t days_ = 0;
  std::size_t stocks_ = 0;
  std::vector<double> data_;
};

}  // namespace alphagen
