#pragma once

// Genetic search over source-task histories for the history offset: the
// history that, applied to the source's initial prediction vector, brings the
// source's projection onto the validating tests closest to the target's while
// remaining probable.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "psrx/psr.hpp"

namespace psrx {

enum class SimilarityMode {
  /// P(h|0) * cosine(chi_S, chi_T); bounded in [0, 1].
  CosineProduct,
  /// P(h|0) / (chi_S . chi_T), the ratio form.
  Literal,
};

inline SimilarityMode parse_similarity_mode(const std::string &s) {
  if (s == "cosine-product")
    return SimilarityMode::CosineProduct;
  if (s == "literal")
    return SimilarityMode::Literal;
  throw ConfigError(fmt::format("unknown similarity mode '{}'", s));
}

inline std::string to_string(SimilarityMode m) {
  return m == SimilarityMode::CosineProduct ? "cosine-product" : "literal";
}

struct GaConfig {
  int population = 50;
  int generations = 30;
  /// Chance that a parent is drawn rank-weighted rather than uniformly.
  double crossover_select_prob = 0.8;
  double mutation_prob = 0.15;
  /// Chance a mutation is a point tweak rather than an end insert/delete.
  double insert_delete_split = 0.5;
  double rejection_prob = 0.9;
  double diversity_refresh = 0.05;
  int max_len = 10;
  /// Cap initial lengths at the source's dynamics-matrix rank.
  bool length_cap_by_rank = true;
  /// Cut-point weight for positions up to the shorter parent's length.
  double short_cut_weight = 4.0;

  void validate() const {
    for (double p : {crossover_select_prob, mutation_prob, insert_delete_split, rejection_prob,
                     diversity_refresh})
      if (!(p >= 0.0 && p <= 1.0))
        throw ConfigError(fmt::format("GA probability {} outside [0,1]", p));
    if (population < 2 || population % 2 != 0)
      throw ConfigError("GA population must be even and at least 2");
    if (generations < 0 || max_len < 1 || short_cut_weight <= 0.0)
      throw ConfigError("bad GA generations, max_len or cut weight");
  }
};

struct Individual {
  History history;
  double fitness = 0.0;
};

struct HistoryOffset {
  History history;
  double fitness = 0.0;
  std::string source_id;
  /// Best fitness seen after initialization and after each generation.
  std::vector<double> best_trace;
};

struct Alphabet {
  int actions = 0;
  int symbols = 0;
};

struct SimilarityStats {
  double dot = 0.0;
  double cosine = 0.0;
  double pearson = 0.0;
};

inline SimilarityStats similarity_stats(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  SimilarityStats s;
  s.dot = a.dot(b);
  const double na = a.norm(), nb = b.norm();
  s.cosine = na > 0.0 && nb > 0.0 ? s.dot / (na * nb) : 0.0;
  if (a.size() > 1) {
    const Eigen::VectorXd ca = a.array() - a.mean();
    const Eigen::VectorXd cb = b.array() - b.mean();
    const double d = ca.norm() * cb.norm();
    s.pearson = d > 0.0 ? ca.dot(cb) / d : 0.0;
  }
  return s;
}

struct FitnessDetail {
  double probability = 0.0;
  PredictionVector belief;
  Eigen::VectorXd projection;
  double fitness = 0.0;
};

/// Scores candidate histories in one source against a fixed target projection.
class FitnessFunction {
public:
  FitnessFunction(const PsrModel &source, Eigen::MatrixXd source_projection,
                  Eigen::VectorXd target_projection, SimilarityMode mode)
      : source_(&source), proj_(std::move(source_projection)),
        target_(std::move(target_projection)), mode_(mode) {
    if (proj_.cols() != source.dim() || proj_.rows() != target_.size())
      throw DimensionMismatch("validating projection shapes disagree");
  }

  const PsrModel &source() const { return *source_; }
  const Eigen::VectorXd &target_projection() const { return target_; }

  FitnessDetail evaluate(const History &h) const {
    FitnessDetail d;
    d.belief = source_->b0;
    d.probability = 1.0;
    for (const auto &s : h) {
      if (s.action < 0 || s.action >= source_->num_actions() || s.symbol < 0 ||
          s.symbol >= source_->num_symbols())
        return zero(d);
      const auto a = static_cast<std::size_t>(s.action);
      const auto z = static_cast<std::size_t>(s.symbol);
      const double p = source_->m[a][z].dot(d.belief);
      if (!(p >= kPsrZeroProbability))
        return zero(d);
      d.probability *= p;
      d.belief = (source_->M[a][z] * d.belief / p).cwiseMax(0.0).cwiseMin(1.0);
    }
    if (!(d.probability >= kPsrZeroProbability))
      return zero(d);
    d.projection = proj_ * d.belief;
    if (mode_ == SimilarityMode::CosineProduct) {
      d.fitness = d.probability * std::max(0.0, similarity_stats(d.projection, target_).cosine);
    } else {
      const double dot = d.projection.dot(target_);
      d.fitness = dot > kPsrZeroProbability ? d.probability / dot : 0.0;
    }
    return d;
  }

  double operator()(const History &h) const { return evaluate(h).fitness; }

private:
  FitnessDetail zero(FitnessDetail d) const {
    d.probability = 0.0;
    d.fitness = 0.0;
    d.projection = Eigen::VectorXd::Zero(proj_.rows());
    return d;
  }

  const PsrModel *source_;
  Eigen::MatrixXd proj_;
  Eigen::VectorXd target_;
  SimilarityMode mode_;
};

/// Fitness of one candidate given the validating tests and a target projection.
inline double fitness(const PsrModel &source, const Eigen::VectorXd &target_projection,
                      const History &candidate, const std::vector<LabeledTest> &validating,
                      SimilarityMode mode = SimilarityMode::CosineProduct) {
  return FitnessFunction(source, projection_matrix(source, validating), target_projection, mode)(
      candidate);
}

/// Rank weights 1..n, best fitness gets n; ties keep index order.
inline std::vector<double> rank_weights(const std::vector<double> &fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
  std::vector<double> w(fitness.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    w[order[r]] = static_cast<double>(r + 1);
  return w;
}

/// Cut point in 1..max(len_a, len_b), weighted towards 1..min(len_a, len_b).
template <class Rng>
std::size_t sample_cut(std::size_t len_a, std::size_t len_b, const GaConfig &cfg, Rng &rng) {
  const auto hi = std::max(len_a, len_b);
  const auto lo = std::min(len_a, len_b);
  std::vector<double> w(hi);
  for (std::size_t c = 1; c <= hi; ++c)
    w[c - 1] = c <= lo ? cfg.short_cut_weight : 1.0;
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  return pick(rng) + 1;
}

/// Keeps the first `cut` steps of each parent and swaps the remainders.
inline std::pair<History, History> crossover_at(const History &a, const History &b,
                                                std::size_t cut, int max_len) {
  const auto split = [&](const History &h) {
    const auto c = std::min(cut, h.size());
    return std::pair{History(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(c)),
                     History(h.begin() + static_cast<std::ptrdiff_t>(c), h.end())};
  };
  auto [ha, ta] = split(a);
  auto [hb, tb] = split(b);
  auto ca = concat(ha, tb);
  auto cb = concat(hb, ta);
  if (ca.size() > static_cast<std::size_t>(max_len))
    ca.resize(static_cast<std::size_t>(max_len));
  if (cb.size() > static_cast<std::size_t>(max_len))
    cb.resize(static_cast<std::size_t>(max_len));
  return {std::move(ca), std::move(cb)};
}

template <class Rng>
std::pair<History, History> crossover(const History &a, const History &b, const GaConfig &cfg,
                                      Rng &rng) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("crossover needs non-empty parents");
  return crossover_at(a, b, sample_cut(a.size(), b.size(), cfg, rng), cfg.max_len);
}

/// With probability mutation_prob: either tweak one step's action or symbol to
/// a different value, or insert/delete one step at the end. Appended steps are
/// random or a copy of the last step. Length stays within [1, max_len].
template <class Rng>
History mutate(History h, const Alphabet &alpha, const GaConfig &cfg, Rng &rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (h.empty() || unif(rng) >= cfg.mutation_prob)
    return h;
  const auto other = [&](int current, int n) {
    if (n <= 1)
      return current;
    std::uniform_int_distribution<int> pick(0, n - 2);
    const int v = pick(rng);
    return v >= current ? v + 1 : v;
  };
  if (unif(rng) < cfg.insert_delete_split) {
    std::uniform_int_distribution<std::size_t> pos(0, h.size() - 1);
    auto &s = h[pos(rng)];
    if (unif(rng) < 0.5)
      s.action = other(s.action, alpha.actions);
    else
      s.symbol = other(s.symbol, alpha.symbols);
  } else if (unif(rng) < 0.5) {
    if (h.size() < static_cast<std::size_t>(cfg.max_len)) {
      if (unif(rng) < 0.5) {
        h.push_back(h.back());
      } else {
        std::uniform_int_distribution<int> pa(0, alpha.actions - 1), pz(0, alpha.symbols - 1);
        const int a = pa(rng);
        h.push_back({a, pz(rng)});
      }
    }
  } else if (h.size() > 1) {
    h.pop_back();
  }
  return h;
}

/// Random trajectory in the source: uniform actions, symbols drawn from the
/// source's own one-step predictions, length uniform in 1..cap.
template <class Rng>
History random_history(const PsrModel &source, int cap, Rng &rng) {
  std::uniform_int_distribution<int> len_dist(1, std::max(1, cap));
  std::uniform_int_distribution<int> act(0, source.num_actions() - 1);
  const int len = len_dist(rng);
  History h;
  PredictionVector b = source.b0;
  Eigen::VectorXd w(source.num_symbols());
  for (int k = 0; k < len; ++k) {
    const int a = act(rng);
    for (int z = 0; z < source.num_symbols(); ++z)
      w[z] = std::max(0.0, source.m[static_cast<std::size_t>(a)][static_cast<std::size_t>(z)].dot(b));
    if (!(w.sum() > kPsrZeroProbability))
      break;
    const int z = sample_index(w, rng);
    h.push_back({a, z});
    b = psr_update(source, b, {a, z}).belief;
  }
  if (h.empty()) {
    std::uniform_int_distribution<int> sym(0, source.num_symbols() - 1);
    const int a = act(rng);
    h.push_back({a, sym(rng)});
  }
  return h;
}

/// Rejects exactly `count` of `pool`, lowest fitness first: each candidate in
/// ascending order is rejected with probability rejection_prob, cycling until
/// enough are gone.
template <class Rng>
std::vector<Individual> reject(std::vector<Individual> pool, std::size_t count,
                               const GaConfig &cfg, Rng &rng) {
  count = std::min(count, pool.size());
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pool[a].fitness < pool[b].fitness; });
  std::vector<bool> gone(pool.size(), false);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t rejected = 0;
  const double p = cfg.rejection_prob > 0.0 ? cfg.rejection_prob : 1.0;
  while (rejected < count) {
    for (auto i : order) {
      if (rejected == count)
        break;
      if (!gone[i] && unif(rng) < p) {
        gone[i] = true;
        ++rejected;
      }
    }
  }
  std::vector<Individual> kept;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!gone[i])
      kept.push_back(std::move(pool[i]));
  return kept;
}

namespace detail {

inline bool better(const Individual &a, const Individual &b) {
  if (a.fitness != b.fitness)
    return a.fitness > b.fitness;
  return a.history.size() < b.history.size();
}

} // namespace detail

struct EvolveObserver {
  /// Called with the population at every generation boundary (after init too).
  std::function<void(int, const std::vector<Individual> &)> on_generation;
};

/// Runs the genetic search and returns the best history seen. `seeds`, when
/// given, replace the first individuals of the initial population.
template <class Rng>
HistoryOffset evolve(const FitnessFunction &fit, const GaConfig &cfg, Rng &rng,
                     std::string source_id = {}, const std::vector<History> &seeds = {},
                     const EvolveObserver *observer = nullptr) {
  cfg.validate();
  const auto &source = fit.source();
  const Alphabet alpha{source.num_actions(), source.num_symbols()};
  const int init_cap = cfg.length_cap_by_rank ? std::min(cfg.max_len, source.dim()) : cfg.max_len;
  const auto pop_size = static_cast<std::size_t>(cfg.population);

  const auto fresh = [&] {
    Individual ind{random_history(source, init_cap, rng), 0.0};
    ind.fitness = fit(ind.history);
    return ind;
  };

  std::vector<Individual> pop;
  for (const auto &h : seeds) {
    if (pop.size() == pop_size)
      break;
    History trimmed(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                               h.size(), static_cast<std::size_t>(cfg.max_len))));
    if (!trimmed.empty())
      pop.push_back({trimmed, fit(trimmed)});
  }
  while (pop.size() < pop_size)
    pop.push_back(fresh());

  Individual best = *std::min_element(pop.begin(), pop.end(), detail::better);
  HistoryOffset out;
  out.best_trace.push_back(best.fitness);
  if (observer && observer->on_generation)
    observer->on_generation(0, pop);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> uniform_pick(0, pop_size - 1);
  const auto refresh_count = static_cast<std::size_t>(std::llround(cfg.diversity_refresh * cfg.population));

  for (int g = 1; g <= cfg.generations; ++g) {
    std::vector<double> fitnesses;
    for (const auto &ind : pop)
      fitnesses.push_back(ind.fitness);
    const auto weights = rank_weights(fitnesses);
    std::discrete_distribution<std::size_t> weighted(weights.begin(), weights.end());
    const auto select = [&]() -> const Individual & {
      return pop[unif(rng) < cfg.crossover_select_prob ? weighted(rng) : uniform_pick(rng)];
    };

    std::vector<Individual> children;
    children.reserve(2 * pop_size);
    for (std::size_t k = 0; k < pop_size; ++k) {
      const auto &pa = select();
      const auto &pb = select();
      auto [ca, cb] = crossover(pa.history, pb.history, cfg, rng);
      for (auto *c : {&ca, &cb}) {
        Individual child{mutate(std::move(*c), alpha, cfg, rng), 0.0};
        child.fitness = fit(child.history);
        children.push_back(std::move(child));
      }
    }
    pop = reject(std::move(children), pop_size, cfg, rng);

    for (std::size_t k = 0; k < refresh_count; ++k)
      pop[uniform_pick(rng)] = fresh();

    for (const auto &ind : pop)
      if (detail::better(ind, best))
        best = ind;
    const bool present = std::any_of(pop.begin(), pop.end(),
                                     [&](const Individual &ind) { return ind.history == best.history; });
    if (!present) {
      auto worst = std::min_element(pop.begin(), pop.end(), [](const auto &a, const auto &b) {
        return a.fitness < b.fitness;
      });
      *worst = best;
    }
    out.best_trace.push_back(best.fitness);
    if (observer && observer->on_generation)
      observer->on_generation(g, pop);
  }
  out.history = best.history;
  out.fitness = best.fitness;
  out.source_id = std::move(source_id);
  return out;
}

} // namespace psrx
