#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "alphagen/alphagen.hpp"

namespace alphagen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline void init_logging() {
  const char* level = std::getenv("ALPHAGEN_LOG_LEVEL");
  spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");
}

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t stocks = 50;
  std::size_t days = 750;
  double noise_sigma = 1.0;
  std::vector<std::pair<std::string, double>> planted;
};

struct SplitSpec {
  // Either date bounds or consecutive day counts from the first panel day.
  std::optional<std::array<std::pair<std::string, std::string>, 3>> dates;
  std::optional<std::array<std::size_t, 3>> days;
};

struct RunConfig {
  json document;  // effective config, flags applied
  fs::path base_dir;
  std::optional<fs::path> csv;
  std::optional<fs::path> target_csv;
  std::optional<SynthSpec> synth;
  SplitSpec splits;
  std::size_t capacity = 10;
  std::size_t horizon = 20;
  PpoConfig ppo;
  BacktestConfig backtest;
  fs::path out = "out";
  std::uint64_t seed = 0;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> max_env_steps;
  std::optional<std::size_t> k;
  std::optional<std::size_t> n;
  std::optional<double> cost_bps;
};

/// Precedence: command-line flags, then config fields, then defaults.
inline RunConfig parse_config(json doc, const fs::path& base_dir, const Overrides& ov = {}) {
  if (ov.seed) doc["seed"] = *ov.seed;
  if (ov.out) doc["out"] = *ov.out;
  if (ov.max_env_steps) doc["ppo"]["max_env_steps"] = *ov.max_env_steps;
  if (ov.k) doc["backtest"]["k"] = *ov.k;
  if (ov.n) doc["backtest"]["n"] = *ov.n;
  if (ov.cost_bps) doc["backtest"]["cost_bps"] = *ov.cost_bps;

  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.seed = doc.value("seed", std::uint64_t{0});
  cfg.out = doc.value("out", std::string("out"));
  cfg.capacity = doc.value("capacity", cfg.capacity);
  cfg.horizon = doc.value("horizon", cfg.horizon);

  const json data = doc.value("data", json::object());
  if (data.contains("csv")) cfg.csv = data["csv"].get<std::string>();
  if (data.contains("target_csv")) cfg.target_csv = data["target_csv"].get<std::string>();
  if (data.contains("synth")) {
    const json& s = data["synth"];
    SynthSpec spec;
    spec.seed = s.value("seed", cfg.seed);
    spec.stocks = s.value("stocks", spec.stocks);
    spec.days = s.value("days", spec.days);
    spec.noise_sigma = s.value("noise_sigma", spec.noise_sigma);
    for (const auto& p : s.value("planted", json::array())) {
      spec.planted.emplace_back(p.at("expr").get<std::string>(), p.value("weight", 1.0));
    }
    cfg.synth = spec;
  }
  if (cfg.csv && cfg.synth) throw DataError("config: data.csv and data.synth are mutually exclusive");
  // The copy stored with the outputs must stay runnable from any directory.
  if (cfg.csv) doc["data"]["csv"] = fs::absolute(cfg.resolve(*cfg.csv)).lexically_normal().string();
  if (cfg.target_csv) doc["data"]["target_csv"] = fs::absolute(cfg.resolve(*cfg.target_csv)).lexically_normal().string();

  if (doc.contains("splits")) {
    const json& s = doc["splits"];
    std::array<std::pair<std::string, std::string>, 3> d;
    const char* names[] = {"train", "valid", "test"};
    for (int i = 0; i < 3; ++i) d[i] = {s.at(names[i]).at(0).get<std::string>(), s.at(names[i]).at(1).get<std::string>()};
    if (!(d[0].second < d[1].first && d[1].second < d[2].first)) {
      throw DataError("config: splits must be disjoint and ordered train < valid < test");
    }
    cfg.splits.dates = d;
  } else if (doc.contains("split_days")) {
    const json& s = doc["split_days"];
    cfg.splits.days = std::array<std::size_t, 3>{s.at("train").get<std::size_t>(), s.at("valid").get<std::size_t>(),
                                                 s.at("test").get<std::size_t>()};
  }

  cfg.ppo.seed = cfg.seed;
  update_ppo_config(cfg.ppo, doc.value("ppo", json::object()));
  cfg.ppo.validate();
  const json bt = doc.value("backtest", json::object());
  cfg.backtest.k = bt.value("k", cfg.backtest.k);
  cfg.backtest.n = bt.value("n", cfg.backtest.n);
  cfg.backtest.cost_bps = bt.value("cost_bps", cfg.backtest.cost_bps);
  cfg.backtest.initial_worth = bt.value("initial_worth", cfg.backtest.initial_worth);
  cfg.document = std::move(doc);
  return cfg;
}

inline RunConfig load_config(const fs::path& path, const Overrides& ov = {}) {
  return parse_config(read_json_file(path.string()), path.parent_path(), ov);
}

inline std::vector<PlantedAlpha> planted_alphas(const SynthSpec& spec) {
  std::vector<PlantedAlpha> out;
  for (const auto& [text, weight] : spec.planted) {
    try {
      out.push_back({parse_infix(text), weight});
    } catch (const ParseError& e) {
      throw ParseError("planted alpha '" + text + "': " + e.what(), e.position);
    }
  }
  return out;
}

inline PanelData load_panel(const RunConfig& cfg) {
  if (cfg.synth) {
    const auto& s = *cfg.synth;
    return synth_generate(s.seed, s.stocks, s.days, planted_alphas(s), s.noise_sigma);
  }
  if (!cfg.csv) throw DataError("config: no data source (data.csv or data.synth)");
  PanelData panel = load_csv(cfg.resolve(*cfg.csv).string(), TargetSpec{cfg.horizon});
  if (cfg.target_csv) {
    std::ifstream in(cfg.resolve(*cfg.target_csv));
    if (!in) throw DataError("cannot open " + cfg.resolve(*cfg.target_csv).string());
    load_target_csv(in, panel);
  }
  return panel;
}

struct Splits {
  DayRange train, valid, test;

  DayRange get(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw ContractError("unknown split '" + name + "' (expected train, valid or test)");
  }
};

inline Splits resolve_splits(const PanelData& panel, const RunConfig& cfg) {
  Splits s;
  if (cfg.splits.dates) {
    const auto& d = *cfg.splits.dates;
    s.train = panel.date_range(d[0].first, d[0].second);
    s.valid = panel.date_range(d[1].first, d[1].second);
    s.test = panel.date_range(d[2].first, d[2].second);
  } else {
    // Default: 2/3 train, 1/6 valid, 1/6 test.
    const std::size_t T = panel.days();
    std::array<std::size_t, 3> n = cfg.splits.days.value_or(std::array<std::size_t, 3>{T * 2 / 3, T / 6, 0});
    if (!cfg.splits.days) n[2] = T - n[0] - n[1];
    if (n[0] == 0 || n[1] == 0 || n[2] == 0 || n[0] + n[1] + n[2] > T) {
      throw DataError("config: split_days must be positive and fit within " + std::to_string(T) + " days");
    }
    s.train = {0, n[0] - 1};
    s.valid = {n[0], n[0] + n[1] - 1};
    s.test = {n[0] + n[1], n[0] + n[1] + n[2] - 1};
  }
  if (!(s.train.last < s.valid.first && s.valid.last < s.test.first)) {
    throw DataError("splits must be disjoint and ordered train < valid < test");
  }
  return s;
}

/// Files are written into a hidden staging directory and moved into the
/// output directory only on commit; an uncommitted stage is deleted.
class Stage {
 public:
  explicit Stage(fs::path out) : out_(std::move(out)), dir_(out_ / ".staging") {
    fs::create_directories(out_);
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  Stage(const Stage&) = delete;
  Stage& operator=(const Stage&) = delete;
  ~Stage() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  const fs::path& out() const { return out_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream f(path(name), std::ios::binary);
    f << content;
    if (!f) throw DataError("cannot write " + path(name).string());
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  /// Copies an existing output file into the stage (resume).
  void carry(const std::string& name) {
    if (fs::exists(out_ / name)) fs::copy_file(out_ / name, path(name), fs::copy_options::overwrite_existing);
  }

  void commit() {
    for (const auto& entry : fs::directory_iterator(dir_)) {
      fs::rename(entry.path(), out_ / entry.path().filename());
    }
  }

 private:
  fs::path out_;
  fs::path dir_;
};

inline std::string panel_csv(const PanelData& panel) {
  std::ostringstream out;
  write_csv(out, panel);
  return out.str();
}

inline std::string target_csv(const PanelData& panel) {
  std::ostringstream out;
  write_grid_csv(out, panel, panel.target, "target");
  return out.str();
}

// ---- synth ----------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg) {
  if (!cfg.synth) throw DataError("synth: config has no data.synth section");
  const auto& s = *cfg.synth;
  const auto planted = planted_alphas(s);
  const PanelData panel = synth_generate(s.seed, s.stocks, s.days, planted, s.noise_sigma);
  Stage stage(cfg.out);
  stage.write("panel.csv", panel_csv(panel));
  stage.write("target.csv", target_csv(panel));
  json manifest = {{"seed", s.seed}, {"stocks", s.stocks}, {"days", s.days}, {"noise_sigma", s.noise_sigma}};
  manifest["planted"] = json::array();
  for (const auto& p : planted) manifest["planted"].push_back({{"expr", to_infix_string(p.expr)}, {"weight", p.weight}});
  stage.write_json("manifest.json", manifest);
  stage.write_json("config.json", cfg.document);
  stage.commit();
  spdlog::info("synth: wrote {} days x {} stocks to {}", panel.days(), panel.stocks(), cfg.out.string());
}

// ---- mine -----------------------------------------------------------------

inline void cmd_mine(const RunConfig& cfg, bool resume = false) {
  const PanelData panel = load_panel(cfg);
  const Splits splits = resolve_splits(panel, cfg);
  const Grammar grammar;
  Stage stage(cfg.out);

  AlphaPool pool(panel.target.slice(splits.train), cfg.capacity, {}, cfg.seed);
  std::optional<PpoAgent> agent;
  if (resume && fs::exists(cfg.out / "agent.json") && fs::exists(cfg.out / "pool.json")) {
    agent.emplace(load_agent_checkpoint(read_json_file((cfg.out / "agent.json").string())));
    agent->mutable_config().max_env_steps = cfg.ppo.max_env_steps;
    const auto snap = pool_snapshot_from_json(read_json_file((cfg.out / "pool.json").string()));
    if (snap.capacity != cfg.capacity) throw DataError("resume: pool capacity differs from config");
    pool = restore_pool(snap, panel, splits.train, {}, cfg.seed + agent->updates());
    stage.carry("train_log.jsonl");
    stage.carry("episodes.jsonl");
    spdlog::info("mine: resuming at env step {} with {} alphas", agent->env_steps(), pool.size());
  } else {
    agent.emplace(default_net_config(grammar.vocabulary().size()), cfg.ppo);
  }

  AlphaEnv env(panel, splits.train, pool, grammar);
  {
    std::ofstream train_log(stage.path("train_log.jsonl"), std::ios::app);
    std::ofstream episodes(stage.path("episodes.jsonl"), std::ios::app);
    agent->train(
        env,
        [&](const TrainLogEntry& e) {
          train_log << to_json(e).dump() << '\n';
          spdlog::info("update {} steps {} objective {:.4f} pool {} reward {:.4f} entropy {:.3f}", e.update,
                       e.env_steps, e.pool_objective, e.pool_size, e.mean_reward, e.entropy);
        },
        [&](const EpisodeLogEntry& e) {
          episodes << to_json(e).dump() << '\n';
          spdlog::debug("episode {} {} reward {:.4f}", e.episode, e.expression, e.reward);
        });
    if (!train_log || !episodes) throw DataError("failed writing training logs");
  }
  stage.write_json("pool.json", pool_to_json(pool));
  stage.write("agent.json", agent_checkpoint(*agent).dump() + "\n");
  stage.write_json("vocabulary.json", vocabulary_json(grammar));
  stage.write_json("config.json", cfg.document);
  stage.commit();
  spdlog::info("mine: {} alphas, train objective {:.4f}", pool.size(), pool.objective());
}

// ---- eval / backtest ------------------------------------------------------

struct LoadedPool {
  std::vector<Expression> exprs;
  std::vector<double> weights;
};

inline LoadedPool load_pool_for(const fs::path& path, const PanelData& panel, DayRange range) {
  const auto snap = pool_snapshot_from_json(read_json_file(path.string()));
  if (snap.exprs.empty()) throw EmptyPoolError();
  std::vector<std::string> bad;
  for (const auto& e : snap.exprs) {
    if (evaluate(e, panel, range).valid_day_count == 0) bad.push_back(to_infix_string(e));
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : ", ") + b;
    throw DataError("alphas not evaluable on the requested split: " + list);
  }
  return {snap.exprs, snap.weights};
}

struct EvalResult {
  double ic = 0.0;
  double rank_ic = 0.0;
};

inline EvalResult evaluate_pool(const LoadedPool& pool, const PanelData& panel, DayRange range) {
  const Grid signal = combined_signal(pool.exprs, pool.weights, panel, range).slice(range);
  const Grid target = panel.target.slice(range);
  const auto ic = mean_ic(signal, target);
  const auto ric = mean_rank_ic(signal, target);
  if (!ic || !ric) throw DataError("no day in the split has both a usable signal and target");
  return {*ic, *ric};
}

inline fs::path default_pool_path(const RunConfig& cfg, const std::optional<std::string>& pool) {
  return pool ? fs::path(*pool) : cfg.out / "pool.json";
}

inline EvalResult cmd_eval(const RunConfig& cfg, const std::optional<std::string>& pool_path,
                           const std::string& split) {
  const PanelData panel = load_panel(cfg);
  const DayRange range = resolve_splits(panel, cfg).get(split);
  const auto pool = load_pool_for(default_pool_path(cfg, pool_path), panel, range);
  const auto r = evaluate_pool(pool, panel, range);
  Stage stage(cfg.out);
  stage.write_json("eval_" + split + ".json", {{"split", split},
                                               {"from", panel.dates[range.first]},
                                               {"to", panel.dates[range.last]},
                                               {"alphas", pool.exprs.size()},
                                               {"IC", r.ic},
                                               {"RankIC", r.rank_ic}});
  stage.write_json("config.json", cfg.document);
  stage.commit();
  std::printf("split %s  IC %.6f  RankIC %.6f\n", split.c_str(), r.ic, r.rank_ic);
  return r;
}

inline BacktestSummary cmd_backtest(const RunConfig& cfg, const std::optional<std::string>& pool_path,
                                    const std::string& split) {
  const PanelData panel = load_panel(cfg);
  const DayRange range = resolve_splits(panel, cfg).get(split);
  const auto pool = load_pool_for(default_pool_path(cfg, pool_path), panel, range);
  const Grid signal = combined_signal(pool.exprs, pool.weights, panel, range);
  const auto report = run_topk_dropn(panel, signal, range, cfg.backtest);
  const auto summary = summarize(report);
  std::ostringstream csv;
  csv << "date,net_worth,turnover\n";
  for (std::size_t i = 0; i < report.net_worth_series.size(); ++i) {
    csv << panel.dates[range.first + i] << ',' << detail::format_real(report.net_worth_series[i]) << ','
        << detail::format_real(report.daily_turnover[i]) << '\n';
  }
  json j = to_json(summary);
  j["split"] = split;
  j["k"] = cfg.backtest.k;
  j["n"] = cfg.backtest.n;
  j["cost_bps"] = cfg.backtest.cost_bps;
  j["initial_worth"] = cfg.backtest.initial_worth;
  j["final_worth"] = report.final_worth;
  Stage stage(cfg.out);
  stage.write("backtest_" + split + ".csv", csv.str());
  stage.write_json("backtest_" + split + ".json", j);
  stage.write_json("config.json", cfg.document);
  stage.commit();
  std::printf("split %s  final worth %.6f  total return %.4f  max drawdown %.4f\n", split.c_str(),
              report.final_worth, summary.total_return, summary.max_drawdown);
  return summary;
}

// ---- report ---------------------------------------------------------------

inline void cmd_report(const RunConfig& cfg) {
  const fs::path log_path = cfg.out / "train_log.jsonl";
  const fs::path pool_path = cfg.out / "pool.json";
  if (!fs::exists(log_path) || !fs::exists(pool_path)) throw DataError("report: run 'mine' into " + cfg.out.string() + " first");
  std::ostringstream curve;
  curve << "update,env_steps,pool_objective,pool_size,mean_reward,entropy,clip_fraction\n";
  std::ifstream log(log_path);
  std::string line;
  json last;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    last = json::parse(line);
    curve << last["update"] << ',' << last["env_steps"] << ',' << detail::format_real(last["pool_objective"]) << ','
          << last["pool_size"] << ',' << detail::format_real(last["mean_reward"]) << ','
          << detail::format_real(last["entropy"]) << ',' << detail::format_real(last["clip_fraction"]) << '\n';
  }
  const json pool = read_json_file(pool_path.string());
  std::ostringstream alphas;
  alphas << "rank,weight,train_ic,expression\n";
  std::vector<json> members(pool["alphas"].begin(), pool["alphas"].end());
  std::stable_sort(members.begin(), members.end(), [](const json& a, const json& b) {
    return std::abs(a["weight"].get<double>()) > std::abs(b["weight"].get<double>());
  });
  for (std::size_t i = 0; i < members.size(); ++i) {
    alphas << i + 1 << ',' << detail::format_real(members[i]["weight"]) << ','
           << detail::format_real(members[i]["train_ic"]) << ",\"" << members[i]["expr"].get<std::string>() << "\"\n";
  }
  json summary = {{"train_objective", pool["objective"]}, {"pool_size", members.size()}};
  if (!last.is_null()) summary["env_steps"] = last["env_steps"];
  for (const char* split : {"train", "valid", "test"}) {
    const fs::path e = cfg.out / ("eval_" + std::string(split) + ".json");
    if (fs::exists(e)) summary["eval"][split] = read_json_file(e.string());
    const fs::path b = cfg.out / ("backtest_" + std::string(split) + ".json");
    if (fs::exists(b)) summary["backtest"][split] = read_json_file(b.string());
  }
  Stage stage(cfg.out);
  stage.write("objective_curve.csv", curve.str());
  stage.write("alphas.csv", alphas.str());
  stage.write_json("report.json", summary);
  stage.write_json("config.json", cfg.document);
  stage.commit();
  std::printf("%s\n", summary.dump(2).c_str());
}

}  // namespace alphagen::cli
