#pragma once

// Experiment pipeline: build PSR models from maze files, train source
// Q-functions and a target baseline, run transfer trials, sweep GA settings.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "psrx/adl.hpp"
#include "psrx/cmac.hpp"
#include "psrx/ga.hpp"
#include "psrx/pocman.hpp"
#include "psrx/psr.hpp"
#include "psrx/transfer.hpp"

namespace psrx {

namespace fs = std::filesystem;

struct TaskEntry {
  std::string id;
  fs::path maze;
};

struct ExperimentConfig {
  std::vector<TaskEntry> sources;
  TaskEntry target;
  AdlConfig adl;
  QLearnConfig qlearn;
  int eval_episodes = 100;
  TransferConfig transfer;
  /// Algorithms run by `transfer`; empty means both.
  std::vector<TransferAlgorithm> algorithms;
  int trials = 10;
  int episode_cap = 100;
  std::uint64_t seed = 1;
  fs::path output_dir = "out";
  std::map<std::string, std::vector<int>> sweep{{"generations", {1, 5, 10, 20, 30, 50}},
                                                {"population", {10, 20, 30, 50, 100}}};
  /// Worker threads for independent trials; 0 picks the hardware count.
  int threads = 0;

  void validate() const {
    if (sources.empty())
      throw ConfigError("at least one source task is required");
    for (const auto &t : sources)
      if (!fs::exists(t.maze))
        throw ConfigError(fmt::format("maze file '{}' not found", t.maze.string()));
    if (!fs::exists(target.maze))
      throw ConfigError(fmt::format("maze file '{}' not found", target.maze.string()));
    std::vector<std::string> ids;
    for (const auto &t : sources)
      ids.push_back(t.id);
    ids.push_back(target.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ConfigError("task ids must be unique");
    adl.validate();
    qlearn.validate();
    transfer.ga.validate();
    if (trials < 1 || episode_cap < 1 || eval_episodes < 1)
      throw ConfigError("trials, episode_cap and eval_episodes must be positive");
  }

  std::vector<TransferAlgorithm> algorithm_list() const {
    if (!algorithms.empty())
      return algorithms;
    return {TransferAlgorithm::CoreTest, TransferAlgorithm::ValidatingTest};
  }
};

namespace detail {

template <class T>
void read_if(const nlohmann::json &j, const char *key, T &out) {
  if (j.contains(key))
    out = j.at(key).get<T>();
}

inline GaConfig ga_from_json(const nlohmann::json &j) {
  GaConfig g;
  read_if(j, "population", g.population);
  read_if(j, "generations", g.generations);
  read_if(j, "crossover_select_prob", g.crossover_select_prob);
  read_if(j, "mutation_prob", g.mutation_prob);
  read_if(j, "insert_delete_split", g.insert_delete_split);
  read_if(j, "rejection_prob", g.rejection_prob);
  read_if(j, "diversity_refresh", g.diversity_refresh);
  read_if(j, "max_len", g.max_len);
  read_if(j, "length_cap_by_rank", g.length_cap_by_rank);
  read_if(j, "short_cut_weight", g.short_cut_weight);
  return g;
}

inline TaskEntry task_from_json(const nlohmann::json &j, const fs::path &base) {
  TaskEntry t;
  t.id = j.at("id").get<std::string>();
  t.maze = base / j.at("maze").get<std::string>();
  return t;
}

} // namespace detail

/// Parses a config; relative paths resolve against `base` (the config's folder).
inline ExperimentConfig config_from_json(const nlohmann::json &j, const fs::path &base) {
  ExperimentConfig c;
  try {
    for (const auto &s : j.at("sources"))
      c.sources.push_back(detail::task_from_json(s, base));
    c.target = detail::task_from_json(j.at("target"), base);
    if (j.contains("adl")) {
      detail::read_if(j["adl"], "rank_tolerance", c.adl.rank_tolerance);
      detail::read_if(j["adl"], "max_iterations", c.adl.max_iterations);
    }
    if (j.contains("qlearn")) {
      const auto &q = j["qlearn"];
      detail::read_if(q, "alpha", c.qlearn.alpha);
      detail::read_if(q, "gamma", c.qlearn.gamma);
      detail::read_if(q, "num_trajectories", c.qlearn.num_trajectories);
      detail::read_if(q, "trajectory_length", c.qlearn.trajectory_length);
    }
    detail::read_if(j, "eval_episodes", c.eval_episodes);
    if (j.contains("transfer")) {
      const auto &t = j["transfer"];
      if (t.contains("validating_tests"))
        for (const auto &vt : t["validating_tests"])
          c.transfer.validating_tests.push_back(labeled_test_from_json(vt));
      if (t.contains("ga"))
        c.transfer.ga = detail::ga_from_json(t["ga"]);
      if (t.contains("similarity_mode"))
        c.transfer.similarity_mode = parse_similarity_mode(t["similarity_mode"].get<std::string>());
      if (t.contains("algorithm"))
        c.algorithms = {parse_algorithm(t["algorithm"].get<std::string>())};
      detail::read_if(t, "offset_reuse", c.transfer.offset_reuse);
    }
    detail::read_if(j, "trials", c.trials);
    detail::read_if(j, "episode_cap", c.episode_cap);
    detail::read_if(j, "seed", c.seed);
    if (j.contains("output_dir"))
      c.output_dir = base / j["output_dir"].get<std::string>();
    if (j.contains("sweep"))
      for (const auto &[axis, values] : j["sweep"].items())
        c.sweep[axis] = values.get<std::vector<int>>();
    detail::read_if(j, "threads", c.threads);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Seeds

enum class Phase : std::uint64_t {
  SourceTrain = 1,
  TargetTrain = 2,
  CoderInit = 3,
  Environment = 4,
  Search = 5,
  Similarity = 6,
};

/// Independent stream seed for (master seed, index, phase).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Phase phase) {
  using detail::splitmix64;
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ static_cast<std::uint64_t>(phase));
}

// ---------------------------------------------------------------------------
// Statistics

struct Summary {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline Summary summarize(const std::vector<double> &v) {
  Summary s;
  if (v.empty())
    return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v)
      ss += (x - s.mean) * (x - s.mean);
    s.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

/// Average ranks (1-based), ties share their mean rank.
inline std::vector<double> average_ranks(const std::vector<double> &v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
      ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; 0 when either side is constant.
inline double spearman(const std::vector<double> &x, const std::vector<double> &y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman needs two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Runs fn(i) for i in [0, n) on a small pool; results must go to slot i.
inline void parallel_for(int n, int threads, const std::function<void(int)> &fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < n; i = next++)
          fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto &t : pool)
    t.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Tasks

struct Task {
  std::string id;
  MazeSpec maze;
  PomdpModel pomdp;
  PsrModel psr;
  std::vector<int> rank_trajectory;
  int core_histories = 0;
};

inline MazeSpec read_maze(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError(fmt::format("cannot read maze '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_maze(ss.str());
}

inline Task build_task(const TaskEntry &entry, const AdlConfig &adl) {
  Task t;
  t.id = entry.id;
  t.maze = read_maze(entry.maze);
  t.pomdp = compile_pomdp(t.maze);
  auto learned = learn_psr(t.pomdp, adl);
  t.psr = std::move(learned.psr);
  t.rank_trajectory = learned.discovery.rank_trajectory;
  t.core_histories = static_cast<int>(learned.discovery.core_histories.size());
  return t;
}

struct Lab {
  ExperimentConfig cfg;
  std::vector<Task> sources;
  Task target;
};

inline Lab build_lab(const ExperimentConfig &cfg) {
  cfg.validate();
  Lab lab{cfg, {}, {}};
  for (const auto &s : cfg.sources)
    lab.sources.push_back(build_task(s, cfg.adl));
  lab.target = build_task(cfg.target, cfg.adl);
  return lab;
}

/// Coder for source i (i == sources.size() means the target baseline).
inline TileCoder train_coder(const Lab &lab, std::size_t i) {
  const bool is_target = i == lab.sources.size();
  const Task &task = is_target ? lab.target : lab.sources[i];
  std::mt19937_64 rng(derive_seed(lab.cfg.seed, i, is_target ? Phase::TargetTrain : Phase::SourceTrain));
  return train(task.psr, task.pomdp, lab.cfg.qlearn, rng, derive_seed(lab.cfg.seed, i, Phase::CoderInit));
}

/// Greedy returns over `episodes` episodes; episode k uses environment stream k.
inline std::vector<double> greedy_returns(const TileCoder &coder, const Task &task,
                                          const ExperimentConfig &cfg, int episodes) {
  std::vector<double> out(static_cast<std::size_t>(episodes));
  for (int k = 0; k < episodes; ++k) {
    std::mt19937_64 env_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k), Phase::Environment));
    out[static_cast<std::size_t>(k)] = greedy_episode(coder, task.psr, task.pomdp, cfg.episode_cap, env_rng);
  }
  return out;
}

inline std::vector<SourceTask> make_sources(const Lab &lab, const std::vector<TileCoder> &coders) {
  std::vector<SourceTask> out;
  for (std::size_t i = 0; i < lab.sources.size(); ++i)
    out.push_back({lab.sources[i].id, lab.sources[i].psr, coders.at(i)});
  return out;
}

/// Transfer trials; trial k shares its environment stream with greedy episode k.
inline std::vector<EpisodeResult> transfer_trials(const TransferEngine &engine, const Task &target,
                                                  const ExperimentConfig &cfg) {
  std::vector<EpisodeResult> out(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.threads, [&](int k) {
    std::mt19937_64 env_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k), Phase::Environment));
    std::mt19937_64 search_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k), Phase::Search));
    out[static_cast<std::size_t>(k)] =
        run_transfer_episode(engine, target.pomdp, cfg.episode_cap, env_rng, search_rng);
  });
  return out;
}

/// Target prediction vector when the hidden state is known: P(Q | state).
inline PredictionVector state_prediction(const Task &target, int state) {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(target.pomdp.num_states);
  delta[state] = 1.0;
  PredictionVector b(target.psr.dim());
  for (int j = 0; j < target.psr.dim(); ++j)
    b[j] = test_probability(target.pomdp, delta, target.psr.core_tests[static_cast<std::size_t>(j)]);
  return b;
}

struct StateSimilarity {
  int state = 0;
  Cell cell;
  std::vector<double> upsilon;
  std::vector<SimilarityStats> similarity;
  std::vector<double> fitness;
  std::vector<std::string> offsets;
};

/// Similarity of every source to the target at each free target cell.
inline std::vector<StateSimilarity> similarity_by_state(const TransferEngine &engine,
                                                        const Task &target,
                                                        const ExperimentConfig &cfg) {
  const auto cells = target.maze.free_cells();
  std::vector<StateSimilarity> rows(cells.size());
  parallel_for(static_cast<int>(cells.size()), cfg.threads, [&](int s) {
    auto &row = rows[static_cast<std::size_t>(s)];
    row.state = s;
    row.cell = cells[static_cast<std::size_t>(s)];
    const auto b = state_prediction(target, s);
    row.upsilon = engine.core_test_action(b).upsilon;
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s), Phase::Similarity));
    const auto d = engine.search_offsets(b, rng);
    row.similarity = d.similarity;
    row.fitness = d.scores;
    for (std::size_t i = 0; i < d.offsets.size(); ++i)
      row.offsets.push_back(engine.sources()[i].psr.format(d.offsets[i].history));
  });
  return rows;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string num(double v) {
  if (v == 0.0)
    return "0";
  return fmt::format("{:.10g}", v);
}

inline void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

inline std::string trace_csv(const EpisodeResult &r, const std::vector<SourceTask> &sources,
                             const PsrModel &target) {
  std::string out = "step,source_id";
  for (const auto &s : sources)
    out += ",similarity_" + s.id;
  for (const auto &s : sources)
    out += ",offset_" + s.id;
  out += ",action,reward,return_to_go\n";
  double to_go = r.total_return;
  for (const auto &row : r.trace) {
    out += fmt::format("{},{}", row.step, sources[static_cast<std::size_t>(row.source)].id);
    for (double v : row.similarity)
      out += "," + num(v);
    for (std::size_t i = 0; i < sources.size(); ++i)
      out += "," + (i < row.offsets.size() ? row.offsets[i] : std::string());
    out += fmt::format(",{},{},{}\n", target.actions[static_cast<std::size_t>(row.action)],
                       num(row.reward), num(to_go));
    to_go -= row.reward;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline fs::path models_dir(const ExperimentConfig &cfg) { return cfg.output_dir / "models"; }
inline fs::path coders_dir(const ExperimentConfig &cfg) { return cfg.output_dir / "coders"; }

struct ModelReport {
  std::string csv;
  Lab lab;
};

inline ModelReport cmd_model(const ExperimentConfig &cfg, std::ostream &log = std::cout) {
  ModelReport rep{"", build_lab(cfg)};
  rep.csv = "task,role,states,free_cells,core_tests,core_histories,rank_trajectory\n";
  const auto emit = [&](const Task &t, const char *role) {
    fs::create_directories(models_dir(cfg));
    save_psr(t.psr, (models_dir(cfg) / (t.id + ".json")).string());
    std::string traj;
    for (std::size_t k = 0; k < t.rank_trajectory.size(); ++k)
      traj += (k ? " " : "") + std::to_string(t.rank_trajectory[k]);
    rep.csv += fmt::format("{},{},{},{},{},{},{}\n", t.id, role, t.pomdp.num_states,
                           t.maze.free_cells().size(), t.psr.dim(), t.core_histories, traj);
    log << fmt::format("{:<12} {:<6} |Q|={} |H|={} ranks: {}\n", t.id, role, t.psr.dim(),
                       t.core_histories, traj);
  };
  for (const auto &s : rep.lab.sources)
    emit(s, "source");
  emit(rep.lab.target, "target");
  write_text(cfg.output_dir / "model_report.csv", rep.csv);
  return rep;
}

struct TrainReport {
  Lab lab;
  std::vector<TileCoder> source_coders;
  TileCoder target_coder;
  std::vector<double> baseline_returns;
};

inline TrainReport cmd_train(const ExperimentConfig &cfg, std::ostream &log = std::cout) {
  TrainReport rep{build_lab(cfg), {}, {}, {}};
  const auto n = rep.lab.sources.size();
  std::vector<TileCoder> coders(n + 1);
  parallel_for(static_cast<int>(n + 1), cfg.threads,
               [&](int i) { coders[static_cast<std::size_t>(i)] = train_coder(rep.lab, static_cast<std::size_t>(i)); });
  fs::create_directories(coders_dir(cfg));
  std::string csv = "task,role,episodes,mean_return,stderr,max_return\n";
  for (std::size_t i = 0; i <= n; ++i) {
    const bool is_target = i == n;
    const Task &task = is_target ? rep.lab.target : rep.lab.sources[i];
    coders[i].save((coders_dir(cfg) / (task.id + ".bin")).string());
    const auto returns = greedy_returns(coders[i], task, cfg, cfg.eval_episodes);
    const auto s = summarize(returns);
    csv += fmt::format("{},{},{},{},{},{}\n", task.id, is_target ? "baseline" : "source",
                       cfg.eval_episodes, num(s.mean), num(s.stderr_), num(max_return(task.maze)));
    log << fmt::format("{:<12} greedy return {:.3f} +- {:.3f} (max {})\n", task.id, s.mean,
                       s.stderr_, max_return(task.maze));
    if (is_target)
      rep.baseline_returns = returns;
  }
  write_text(cfg.output_dir / "baseline.csv", csv);
  rep.target_coder = std::move(coders[n]);
  coders.pop_back();
  rep.source_coders = std::move(coders);
  return rep;
}

/// Loads coders written by `train`, or trains them when missing.
inline TrainReport load_or_train(const ExperimentConfig &cfg, std::ostream &log) {
  bool present = fs::exists(coders_dir(cfg) / (cfg.target.id + ".bin"));
  for (const auto &s : cfg.sources)
    present = present && fs::exists(coders_dir(cfg) / (s.id + ".bin"));
  if (!present)
    return cmd_train(cfg, log);
  TrainReport rep{build_lab(cfg), {}, {}, {}};
  for (const auto &s : rep.lab.sources)
    rep.source_coders.push_back(TileCoder::load((coders_dir(cfg) / (s.id + ".bin")).string()));
  rep.target_coder = TileCoder::load((coders_dir(cfg) / (rep.lab.target.id + ".bin")).string());
  for (std::size_t i = 0; i < rep.lab.sources.size(); ++i)
    if (rep.source_coders[i].dims() != rep.lab.sources[i].psr.dim())
      throw DimensionMismatch(fmt::format("stored coder for '{}' does not match its model", rep.lab.sources[i].id));
  if (rep.target_coder.dims() != rep.lab.target.psr.dim())
    throw DimensionMismatch("stored baseline coder does not match the target model");
  rep.baseline_returns = greedy_returns(rep.target_coder, rep.lab.target, cfg, cfg.eval_episodes);
  return rep;
}

struct AlgorithmResult {
  TransferAlgorithm algorithm;
  std::vector<EpisodeResult> episodes;
  Summary summary;
};

struct TransferReport {
  std::vector<AlgorithmResult> results;
  Summary baseline;
  std::vector<StateSimilarity> similarity;
};

inline TransferReport cmd_transfer(const ExperimentConfig &cfg, std::ostream &log = std::cout) {
  const auto trained = load_or_train(cfg, log);
  const auto &lab = trained.lab;
  const auto sources = make_sources(lab, trained.source_coders);
  TransferReport rep;
  rep.baseline = summarize(trained.baseline_returns);

  std::string results = "algorithm,trial,return,steps,reached_goal\n";
  std::string summary = "algorithm,trials,mean_return,stderr,baseline_mean,baseline_stderr\n";
  for (auto algo : cfg.algorithm_list()) {
    auto tcfg = cfg.transfer;
    tcfg.algorithm = algo;
    const TransferEngine engine(sources, lab.target.psr, tcfg);
    AlgorithmResult ar{algo, transfer_trials(engine, lab.target, cfg), {}};
    std::vector<double> returns;
    for (std::size_t k = 0; k < ar.episodes.size(); ++k) {
      const auto &e = ar.episodes[k];
      returns.push_back(e.total_return);
      results += fmt::format("{},{},{},{},{}\n", to_string(algo), k, num(e.total_return), e.steps,
                             e.reached_goal ? 1 : 0);
      write_text(cfg.output_dir / "traces" / fmt::format("{}_trial{}.csv", to_string(algo), k),
                 trace_csv(e, sources, lab.target.psr));
    }
    ar.summary = summarize(returns);
    summary += fmt::format("{},{},{},{},{},{}\n", to_string(algo), cfg.trials, num(ar.summary.mean),
                           num(ar.summary.stderr_), num(rep.baseline.mean), num(rep.baseline.stderr_));
    log << fmt::format("{:<16} mean return {:.3f} +- {:.3f} (baseline {:.3f})\n", to_string(algo),
                       ar.summary.mean, ar.summary.stderr_, rep.baseline.mean);
    rep.results.push_back(std::move(ar));
  }
  write_text(cfg.output_dir / "results.csv", results);
  write_text(cfg.output_dir / "results_summary.csv", summary);

  if (!cfg.transfer.validating_tests.empty()) {
    auto tcfg = cfg.transfer;
    tcfg.algorithm = TransferAlgorithm::ValidatingTest;
    const TransferEngine engine(sources, lab.target.psr, tcfg);
    rep.similarity = similarity_by_state(engine, lab.target, cfg);
    std::string csv = "state,row,col,kind";
    for (const auto &s : sources)
      csv += fmt::format(",upsilon_{0},cosine_{0},dot_{0},pearson_{0},fitness_{0},offset_{0}", s.id);
    csv += "\n";
    for (const auto &row : rep.similarity) {
      const auto kind = lab.target.maze.at(row.cell);
      csv += fmt::format("{},{},{},{}", row.state, row.cell.row, row.cell.col,
                         kind == CellKind::Start ? "start" : kind == CellKind::Pellet ? "pellet" : "free");
      for (std::size_t i = 0; i < sources.size(); ++i)
        csv += fmt::format(",{},{},{},{},{},{}", num(row.upsilon[i]), num(row.similarity[i].cosine),
                           num(row.similarity[i].dot), num(row.similarity[i].pearson),
                           num(row.fitness[i]), row.offsets[i]);
      csv += "\n";
    }
    write_text(cfg.output_dir / "similarity_by_state.csv", csv);
  }
  return rep;
}

struct SweepPoint {
  int value = 0;
  Summary summary;
};

struct SweepReport {
  std::string axis;
  std::vector<SweepPoint> points;
  double spearman_rho = 0.0;
};

/// Validating-test transfer over one GA axis, the other held at its config value.
inline SweepReport cmd_sweep(const ExperimentConfig &cfg, const std::string &axis,
                             std::vector<int> values = {}, std::ostream &log = std::cout) {
  if (axis != "generations" && axis != "population")
    throw ConfigError(fmt::format("unknown sweep axis '{}'", axis));
  if (values.empty()) {
    const auto it = cfg.sweep.find(axis);
    if (it == cfg.sweep.end() || it->second.empty())
      throw ConfigError(fmt::format("no sweep values for '{}'", axis));
    values = it->second;
  }
  const auto trained = load_or_train(cfg, log);
  const auto sources = make_sources(trained.lab, trained.source_coders);
  SweepReport rep{axis, {}, 0.0};
  std::string csv = "value,trials,mean_return,stderr\n";
  std::vector<double> xs, ys;
  for (int v : values) {
    auto tcfg = cfg.transfer;
    tcfg.algorithm = TransferAlgorithm::ValidatingTest;
    (axis == "generations" ? tcfg.ga.generations : tcfg.ga.population) = v;
    const TransferEngine engine(sources, trained.lab.target.psr, tcfg);
    std::vector<double> returns;
    for (const auto &e : transfer_trials(engine, trained.lab.target, cfg))
      returns.push_back(e.total_return);
    const auto s = summarize(returns);
    rep.points.push_back({v, s});
    csv += fmt::format("{},{},{},{}\n", v, cfg.trials, num(s.mean), num(s.stderr_));
    log << fmt::format("{}={:<4} mean return {:.3f} +- {:.3f}\n", axis, v, s.mean, s.stderr_);
    xs.push_back(v);
    ys.push_back(s.mean);
  }
  if (xs.size() >= 2)
    rep.spearman_rho = spearman(xs, ys);
  log << fmt::format("spearman({}, mean return) = {:.3f}\n", axis, rep.spearman_rho);
  write_text(cfg.output_dir / fmt::format("sweep_{}.csv", axis), csv);
  return rep;
}

} // namespace psrx
