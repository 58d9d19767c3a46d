#pragma once

// Policy transfer from source PSR tasks to a target PSR task, by projecting
// the target onto the sources' core tests or by matching projections onto a
// shared set of validating tests after a searched history offset.

#include <algorithm>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "psrx/cmac.hpp"
#include "psrx/ga.hpp"
#include "psrx/psr.hpp"

namespace psrx {

enum class TransferAlgorithm { CoreTest, ValidatingTest };

inline TransferAlgorithm parse_algorithm(const std::string &s) {
  if (s == "core-test")
    return TransferAlgorithm::CoreTest;
  if (s == "validating-test")
    return TransferAlgorithm::ValidatingTest;
  throw ConfigError(fmt::format("unknown transfer algorithm '{}'", s));
}

inline std::string to_string(TransferAlgorithm a) {
  return a == TransferAlgorithm::CoreTest ? "core-test" : "validating-test";
}

struct SourceTask {
  std::string id;
  PsrModel psr;
  TileCoder q_function;
  std::shared_ptr<ProjectionCache> projection_cache = std::make_shared<ProjectionCache>();

  void validate() const {
    if (q_function.dims() != psr.dim())
      throw DimensionMismatch(fmt::format("source '{}': coder has {} dims, PSR has {}", id,
                                          q_function.dims(), psr.dim()));
  }
};

struct TransferConfig {
  std::vector<LabeledTest> validating_tests;
  GaConfig ga;
  TransferAlgorithm algorithm = TransferAlgorithm::ValidatingTest;
  SimilarityMode similarity_mode = SimilarityMode::CosineProduct;
  /// Seed each search with the previous step's offset and a mutated copy.
  bool offset_reuse = false;

  void validate() const {
    ga.validate();
    if (algorithm == TransferAlgorithm::ValidatingTest && validating_tests.empty())
      throw ConfigError("validating-test transfer needs at least one validating test");
  }
};

/// Index of the largest score; the lowest index wins ties.
inline int select_source(const std::vector<double> &scores) {
  if (scores.empty())
    throw std::invalid_argument("no sources to select from");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

struct CoreTestDecision {
  int action = 0;
  int source = 0;
  /// Sum of projected source core-test probabilities per source.
  std::vector<double> upsilon;
  std::vector<PredictionVector> projections;
};

struct ValidatingDecision {
  int action = 0;
  int source = 0;
  std::vector<HistoryOffset> offsets;
  std::vector<PredictionVector> beliefs;
  std::vector<SimilarityStats> similarity;
  /// Selection score per source: the offset's fitness.
  std::vector<double> scores;
};

/// Holds the per-source projection matrices, computed once up front.
class TransferEngine {
public:
  TransferEngine(const std::vector<SourceTask> &sources, const PsrModel &target,
                 TransferConfig cfg)
      : sources_(&sources), target_(&target), cfg_(std::move(cfg)) {
    if (sources.empty())
      throw ConfigError("transfer needs at least one source");
    cfg_.validate();
    for (const auto &s : sources) {
      s.validate();
      std::vector<LabeledTest> core;
      for (const auto &q : s.psr.core_tests)
        core.push_back(label_test(s.psr, q));
      core_in_target_.push_back(target_cache_.get(target, core));
      std::vector<int> map;
      for (const auto &name : s.psr.actions) {
        const auto a = target.action_index(name);
        if (!a)
          throw UnknownAction(fmt::format("source action '{}' missing in target", name));
        map.push_back(*a);
      }
      action_map_.push_back(std::move(map));
      if (!cfg_.validating_tests.empty())
        validating_in_source_.push_back(s.projection_cache->get(s.psr, cfg_.validating_tests));
    }
    if (!cfg_.validating_tests.empty())
      validating_in_target_ = target_cache_.get(target, cfg_.validating_tests);
  }

  const TransferConfig &config() const { return cfg_; }
  const std::vector<SourceTask> &sources() const { return *sources_; }
  const PsrModel &target() const { return *target_; }

  /// M^T_{Q^S}: rows are the source's core tests expressed in the target.
  const Eigen::MatrixXd &core_projection_matrix(std::size_t source) const {
    return core_in_target_.at(source);
  }

  Eigen::VectorXd target_validating_projection(const PredictionVector &b_target) const {
    return validating_in_target_ * b_target;
  }

  int to_target_action(std::size_t source, int source_action) const {
    return action_map_.at(source).at(static_cast<std::size_t>(source_action));
  }

  CoreTestDecision core_test_action(const PredictionVector &b_target) const {
    if (b_target.size() != target_->dim())
      throw DimensionMismatch("target prediction vector has the wrong length");
    CoreTestDecision d;
    for (const auto &m : core_in_target_) {
      PredictionVector bp = (m * b_target).cwiseMax(0.0).cwiseMin(1.0);
      d.upsilon.push_back(bp.sum());
      d.projections.push_back(std::move(bp));
    }
    d.source = select_source(d.upsilon);
    const auto s = static_cast<std::size_t>(d.source);
    d.action = to_target_action(s, (*sources_)[s].q_function.greedy_action(d.projections[s]));
    return d;
  }

  /// Runs the history-offset search in every source against the target's
  /// current validating projection, without choosing a source.
  template <class Rng>
  ValidatingDecision search_offsets(const PredictionVector &b_target, Rng &rng,
                                    const std::vector<History> *previous = nullptr) const {
    if (b_target.size() != target_->dim())
      throw DimensionMismatch("target prediction vector has the wrong length");
    if (cfg_.validating_tests.empty())
      throw ConfigError("no validating tests configured");
    const Eigen::VectorXd chi_t = target_validating_projection(b_target);
    ValidatingDecision d;
    for (std::size_t i = 0; i < sources_->size(); ++i) {
      const auto &src = (*sources_)[i];
      FitnessFunction fit(src.psr, validating_in_source_[i], chi_t, cfg_.similarity_mode);
      std::vector<History> seeds;
      if (cfg_.offset_reuse && previous && i < previous->size() && !(*previous)[i].empty()) {
        seeds.push_back((*previous)[i]);
        GaConfig always = cfg_.ga;
        always.mutation_prob = 1.0;
        seeds.push_back(mutate((*previous)[i], {src.psr.num_actions(), src.psr.num_symbols()},
                               always, rng));
      }
      auto offset = evolve(fit, cfg_.ga, rng, src.id, seeds);
      const auto detail = fit.evaluate(offset.history);
      d.similarity.push_back(similarity_stats(detail.projection, chi_t));
      d.scores.push_back(offset.fitness);
      d.beliefs.push_back(detail.belief);
      d.offsets.push_back(std::move(offset));
    }
    return d;
  }

  template <class Rng>
  ValidatingDecision validating_action(const PredictionVector &b_target, Rng &rng,
                                       const std::vector<History> *previous = nullptr) const {
    auto d = search_offsets(b_target, rng, previous);
    if (std::all_of(d.scores.begin(), d.scores.end(), [](double s) { return s <= 0.0; }))
      throw AllSourcesDegenerate("no source has a history offset with positive fitness");
    d.source = select_source(d.scores);
    const auto s = static_cast<std::size_t>(d.source);
    d.action = to_target_action(s, (*sources_)[s].q_function.greedy_action(d.beliefs[s]));
    return d;
  }

private:
  const std::vector<SourceTask> *sources_;
  const PsrModel *target_;
  TransferConfig cfg_;
  ProjectionCache target_cache_;
  std::vector<Eigen::MatrixXd> core_in_target_;
  std::vector<Eigen::MatrixXd> validating_in_source_;
  Eigen::MatrixXd validating_in_target_;
  std::vector<std::vector<int>> action_map_;
};

inline CoreTestDecision core_test_projection_action(const TransferEngine &engine,
                                                    const PredictionVector &b_target) {
  return engine.core_test_action(b_target);
}

template <class Rng>
ValidatingDecision validating_projection_action(const TransferEngine &engine,
                                                const PredictionVector &b_target, Rng &rng) {
  return engine.validating_action(b_target, rng);
}

struct TraceRow {
  int step = 0;
  int source = 0;
  /// Upsilon (core-test) or cosine similarity (validating-test) per source.
  std::vector<double> similarity;
  std::vector<std::string> offsets;
  int action = 0;
  double reward = 0.0;
};

struct EpisodeResult {
  double total_return = 0.0;
  int steps = 0;
  bool reached_goal = false;
  std::vector<TraceRow> trace;
};

/// Runs one target episode, choosing every action by transfer. The simulator
/// draws only from env_rng; the genetic search only from search_rng.
template <class Rng>
EpisodeResult run_transfer_episode(const TransferEngine &engine, const PomdpModel &env,
                                   int episode_cap, Rng &env_rng, Rng &search_rng) {
  const auto &target = engine.target();
  EpisodeResult r;
  int s = sample_initial_state(env, env_rng);
  PredictionVector b = target.b0;
  std::vector<History> previous;
  for (int t = 0; t < episode_cap; ++t) {
    TraceRow row;
    row.step = t;
    if (engine.config().algorithm == TransferAlgorithm::CoreTest) {
      const auto d = engine.core_test_action(b);
      row.source = d.source;
      row.similarity = d.upsilon;
      row.action = d.action;
    } else {
      const auto d = engine.validating_action(b, search_rng, &previous);
      row.source = d.source;
      for (const auto &sim : d.similarity)
        row.similarity.push_back(sim.cosine);
      previous.clear();
      for (std::size_t i = 0; i < d.offsets.size(); ++i) {
        previous.push_back(d.offsets[i].history);
        row.offsets.push_back(engine.sources()[i].psr.format(d.offsets[i].history));
      }
      row.action = d.action;
    }
    const auto out = step(env, s, row.action, env_rng);
    row.reward = env.symbols[static_cast<std::size_t>(out.symbol)].reward;
    r.total_return += row.reward;
    r.steps = t + 1;
    r.trace.push_back(std::move(row));
    if (out.done) {
      r.reached_goal = true;
      break;
    }
    b = psr_update(target, b, {r.trace.back().action, out.symbol}).belief;
    s = out.next_state;
  }
  return r;
}

} // namespace psrx
