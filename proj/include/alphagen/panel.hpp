#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alphagen/core.hpp"

namespace alphagen {

enum class Feature { Open, Close, High, Low, Volume, Vwap };

inline constexpr std::size_t kFeatureCount = 6;
inline constexpr std::array<Feature, kFeatureCount> kAllFeatures = {
    Feature::Open, Feature::Close, Feature::High, Feature::Low, Feature::Volume, Feature::Vwap};

inline std::string_view feature_name(Feature f) {
  constexpr std::array<std::string_view, kFeatureCount> names = {"open", "close", "high",
                                                                 "low",  "volume", "vwap"};
  return names[static_cast<std::size_t>(f)];
}

inline std::optional<Feature> feature_from_name(std::string_view name) {
  for (Feature f : kAllFeatures) {
    if (feature_name(f) == name) return f;
  }
  return std::nullopt;
}

struct TargetSpec {
  std::size_t horizon = 20;
};

/// Stock panel: per-feature (day, stock) grids plus the prediction target.
/// Immutable once built.
struct PanelData {
  std::vector<std::string> dates;    // ascending ISO-8601
  std::vector<std::string> symbols;  // lexicographic
  std::array<Grid, kFeatureCount> features;
  Grid target;

  std::size_t days() const { return dates.size(); }
  std::size_t stocks() const { return symbols.size(); }
  const Grid& feature(Feature f) const { return features[static_cast<std::size_t>(f)]; }
  Grid& feature(Feature f) { return features[static_cast<std::size_t>(f)]; }

  DayRange all_days() const { return {0, days() - 1}; }

  /// Inclusive index range of dates within [from, to]; throws when empty.
  DayRange date_range(std::string_view from, std::string_view to) const {
    auto lo = std::lower_bound(dates.begin(), dates.end(), from);
    auto hi = std::upper_bound(dates.begin(), dates.end(), to);
    if (lo >= hi) throw DataError("no trading days between " + std::string(from) + " and " + std::string(to));
    return {static_cast<std::size_t>(lo - dates.begin()), static_cast<std::size_t>(hi - dates.begin()) - 1};
  }

  /// Copy restricted to days [0, last].
  PanelData truncated(std::size_t last) const {
    PanelData out;
    out.dates.assign(dates.begin(), dates.begin() + static_cast<std::ptrdiff_t>(last + 1));
    out.symbols = symbols;
    for (std::size_t f = 0; f < kFeatureCount; ++f) out.features[f] = features[f].slice({0, last});
    out.target = target.slice({0, last});
    return out;
  }
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

inline double parse_real(std::string_view field, std::size_t line_no) {
  field = trim(field);
  if (field.empty()) return kMissing;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'", line_no);
  }
  return value;
}

inline std::string format_real(double v) {
  if (is_missing(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads `date,symbol,open,close,high,low,volume,vwap` rows (any order) into a
/// dense panel. Absent rows and empty fields become missing cells. The target
/// is computed from close with the given horizon.
inline PanelData load_csv(std::istream& in, const TargetSpec& spec);

inline PanelData compute_target(PanelData panel, const TargetSpec& spec) {
  if (spec.horizon < 1) throw ContractError("target horizon must be >= 1");
  const Grid& close = panel.feature(Feature::Close);
  Grid target(panel.days(), panel.stocks());
  for (std::size_t d = 0; d < panel.days(); ++d) {
    for (std::size_t s = 0; s < panel.stocks(); ++s) {
      const double now = close(d, s);
      if (!is_missing(now) && now <= 0.0) {
        throw DataError("non-positive close for " + panel.symbols[s] + " on " + panel.dates[d]);
      }
      if (d + spec.horizon >= panel.days()) continue;
      const double later = close(d + spec.horizon, s);
      if (is_missing(now) || is_missing(later)) continue;
      target(d, s) = later / now - 1.0;
    }
  }
  panel.target = std::move(target);
  return panel;
}

inline PanelData load_csv(std::istream& in, const TargetSpec& spec) {
  static constexpr std::string_view kHeader = "date,symbol,open,close,high,low,volume,vwap";
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || detail::trim(line) != kHeader) {
    throw ParseError("line 1: expected header '" + std::string(kHeader) + "'", 1);
  }
  struct Row {
    std::string date, symbol;
    std::array<double, kFeatureCount> values;
  };
  std::vector<Row> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 8) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 8 fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Row row;
    row.date = std::string(detail::trim(fields[0]));
    row.symbol = std::string(detail::trim(fields[1]));
    if (!detail::is_iso_date(row.date)) {
      throw ParseError("line " + std::to_string(line_no) + ": bad date '" + row.date + "'", line_no);
    }
    if (row.symbol.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty symbol", line_no);
    for (std::size_t f = 0; f < kFeatureCount; ++f) row.values[f] = detail::parse_real(fields[2 + f], line_no);
    auto [it, inserted] = seen.emplace(std::make_pair(row.date, row.symbol), line_no);
    if (!inserted) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate (" + row.date + ", " + row.symbol +
                      ") first seen on line " + std::to_string(it->second));
    }
    rows.push_back(std::move(row));
  }

  PanelData panel;
  for (const auto& r : rows) {
    panel.dates.push_back(r.date);
    panel.symbols.push_back(r.symbol);
  }
  for (auto* v : {&panel.dates, &panel.symbols}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  if (panel.dates.empty()) throw DataError("panel has no rows");
  for (auto& g : panel.features) g = Grid(panel.days(), panel.stocks());
  for (const auto& r : rows) {
    const auto d = static_cast<std::size_t>(std::lower_bound(panel.dates.begin(), panel.dates.end(), r.date) -
                                            panel.dates.begin());
    const auto s = static_cast<std::size_t>(
        std::lower_bound(panel.symbols.begin(), panel.symbols.end(), r.symbol) - panel.symbols.begin());
    for (std::size_t f = 0; f < kFeatureCount; ++f) panel.features[f](d, s) = r.values[f];
  }
  return compute_target(std::move(panel), spec);
}

inline PanelData load_csv(const std::string& path, const TargetSpec& spec) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return load_csv(in, spec);
}

/// Overrides the panel target from `date,symbol,target` rows. Cells not
/// listed become missing.
inline void load_target_csv(std::istream& in, PanelData& panel) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || detail::trim(line) != "date,symbol,target") {
    throw ParseError("line 1: expected header 'date,symbol,target'", 1);
  }
  Grid target(panel.days(), panel.stocks());
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 3) throw ParseError("line " + std::to_string(line_no) + ": expected 3 fields", line_no);
    const auto date = detail::trim(fields[0]);
    const auto symbol = detail::trim(fields[1]);
    auto di = std::lower_bound(panel.dates.begin(), panel.dates.end(), date);
    auto si = std::lower_bound(panel.symbols.begin(), panel.symbols.end(), symbol);
    if (di == panel.dates.end() || *di != date || si == panel.symbols.end() || *si != symbol) {
      throw DataError("line " + std::to_string(line_no) + ": unknown (date, symbol)");
    }
    target(static_cast<std::size_t>(di - panel.dates.begin()), static_cast<std::size_t>(si - panel.symbols.begin())) =
        detail::parse_real(fields[2], line_no);
  }
  panel.target = std::move(target);
}

inline void write_csv(std::ostream& out, const PanelData& panel) {
  out << "date,symbol,open,close,high,low,volume,vwap\n";
  for (std::size_t d = 0; d < panel.days(); ++d) {
    for (std::size_t s = 0; s < panel.stocks(); ++s) {
      out << panel.dates[d] << ',' << panel.symbols[s];
      for (std::size_t f = 0; f < kFeatureCount; ++f) out << ',' << detail::format_real(panel.features[f](d, s));
      out << '\n';
    }
  }
}

/// `date,symbol,value` dump of any (day, stock) grid aligned with the panel.
inline void write_grid_csv(std::ostream& out, const PanelData& panel, const Grid& grid,
                           std::string_view column = "value") {
  out << "date,symbol," << column << '\n';
  for (std::size_t d = 0; d < grid.days(); ++d) {
    for (std::size_t s = 0; s < grid.stocks(); ++s) {
      out << panel.dates[d] << ',' << panel.symbols[s] << ',' << detail::format_real(grid(d, s)) << '\n';
    }
  }
}

}  // namespace alphagen
