#pragma once

// Exact inference over tabular POMDPs. These routines are the ground truth
// for every entry of the system-dynamics matrix and for the equivalence
// checks run against learned PSR models.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "psrx/errors.hpp"

namespace psrx {

/// Sensor code carried by the symbol emitted from the absorbing sink.
inline constexpr int kTerminalSensor = -1;

/// Below this a filter normalizer is treated as zero.
inline constexpr double kProbabilityFloor = 1e-300;

/// An observation symbol: a sensor reading joined with the reward received.
struct Symbol {
  int sensor = 0;
  double reward = 0.0;

  bool terminal() const { return sensor == kTerminalSensor; }
  friend bool operator==(const Symbol &, const Symbol &) = default;
};

struct Step {
  int action = 0;
  int symbol = 0;
  friend bool operator==(const Step &, const Step &) = default;
  friend auto operator<=>(const Step &, const Step &) = default;
};

/// Action-observation sequence. Histories and tests share the representation.
using Sequence = std::vector<Step>;
using History = Sequence;
using Test = Sequence;

inline Sequence concat(const Sequence &a, const Sequence &b) {
  Sequence out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline std::string symbol_label(const Symbol &z) {
  std::string code = z.terminal() ? "T" : std::to_string(z.sensor);
  return fmt::format("{}{:+g}", code, z.reward);
}

/// Renders a sequence as "(S2-1)(E1-1)".
inline std::string format_sequence(const Sequence &seq,
                                   const std::vector<std::string> &actions,
                                   const std::vector<Symbol> &symbols) {
  std::string out;
  for (const auto &s : seq)
    out += fmt::format("({}{})", actions.at(s.action),
                       symbol_label(symbols.at(s.symbol)));
  return out;
}

struct PomdpModel {
  int num_states = 0;
  std::vector<std::string> actions;
  std::vector<Symbol> symbols;
  /// transition[a](s, s')
  std::vector<Eigen::MatrixXd> transition;
  /// emission[a](s', z)
  std::vector<Eigen::MatrixXd> emission;
  Eigen::VectorXd initial_belief;
  /// States on which an episode ends.
  std::vector<bool> terminal;

  int num_actions() const { return static_cast<int>(actions.size()); }
  int num_symbols() const { return static_cast<int>(symbols.size()); }
  bool is_terminal(int s) const { return terminal.at(static_cast<std::size_t>(s)); }

  bool valid_step(const Step &s) const {
    return s.action >= 0 && s.action < num_actions() && s.symbol >= 0 &&
           s.symbol < num_symbols();
  }

  /// Throws ValidationError when a stochasticity invariant is broken.
  void validate(double tol = 1e-12) const {
    const auto n = num_states;
    if (n <= 0)
      throw ValidationError("model has no states");
    if (transition.size() != actions.size() || emission.size() != actions.size())
      throw ValidationError("tensor count does not match action count");
    if (initial_belief.size() != n || terminal.size() != static_cast<std::size_t>(n))
      throw ValidationError("initial belief or terminal mask has wrong size");
    if ((initial_belief.array() < 0.0).any() ||
        std::abs(initial_belief.sum() - 1.0) > tol)
      throw ValidationError("initial belief is not a distribution");
    for (int a = 0; a < num_actions(); ++a) {
      const auto &T = transition[static_cast<std::size_t>(a)];
      const auto &E = emission[static_cast<std::size_t>(a)];
      if (T.rows() != n || T.cols() != n || E.rows() != n || E.cols() != num_symbols())
        throw ValidationError(fmt::format("action {} tensors have wrong shape", a));
      if ((T.array() < 0.0).any() || (E.array() < 0.0).any())
        throw ValidationError(fmt::format("action {} has a negative entry", a));
      for (int s = 0; s < n; ++s) {
        if (std::abs(T.row(s).sum() - 1.0) > tol)
          throw ValidationError(fmt::format("transition[{}][{}] does not sum to 1", a, s));
        if (std::abs(E.row(s).sum() - 1.0) > tol)
          throw ValidationError(fmt::format("emission[{}][{}] does not sum to 1", a, s));
      }
    }
  }
};

using StateBelief = Eigen::VectorXd;

struct FilterResult {
  StateBelief belief;
  double probability = 0.0;
};

namespace detail {

inline void check_step(const PomdpModel &model, const Step &step) {
  if (step.action < 0 || step.action >= model.num_actions())
    throw UnknownAction(fmt::format("action index {}", step.action));
  if (step.symbol < 0 || step.symbol >= model.num_symbols())
    throw UnknownSymbol(fmt::format("symbol index {}", step.symbol));
}

// Unnormalized successor: emission[a](., z) .* (transition[a]^T b).
inline Eigen::VectorXd propagate(const PomdpModel &model, const StateBelief &b,
                                 const Step &step) {
  const auto a = static_cast<std::size_t>(step.action);
  Eigen::VectorXd next = model.transition[a].transpose() * b;
  return next.cwiseProduct(model.emission[a].col(step.symbol));
}

} // namespace detail

/// Bayes filter step. Returns the posterior and P(z | b, a).
inline FilterResult belief_update(const PomdpModel &model, const StateBelief &b,
                                  const Step &step) {
  detail::check_step(model, step);
  Eigen::VectorXd next = detail::propagate(model, b, step);
  const double p = next.sum();
  if (!(p >= kProbabilityFloor))
    throw ZeroProbabilityObservation(fmt::format(
        "P(z={} | b, a={}) = {:g}", step.symbol, step.action, p));
  return {next / p, p};
}

/// P(t | b): product of the one-step normalizers along t. Zero is a legal result.
inline double test_probability(const PomdpModel &model, const StateBelief &b,
                               const Test &t) {
  Eigen::VectorXd cur = b;
  double prob = 1.0;
  for (const auto &step : t) {
    detail::check_step(model, step);
    cur = detail::propagate(model, cur, step);
    const double p = cur.sum();
    if (!(p >= kProbabilityFloor))
      return 0.0;
    prob *= p;
    cur /= p;
  }
  return prob;
}

/// Belief after h from the initial belief, and P(h | initial belief).
inline FilterResult filter_history(const PomdpModel &model, const History &h) {
  FilterResult r{model.initial_belief, 1.0};
  for (const auto &step : h) {
    detail::check_step(model, step);
    Eigen::VectorXd next = detail::propagate(model, r.belief, step);
    const double p = next.sum();
    if (!(p >= kProbabilityFloor))
      return {Eigen::VectorXd::Zero(model.num_states), 0.0};
    r.belief = next / p;
    r.probability *= p;
  }
  return r;
}

/// System-dynamics matrix entry P(t | h).
inline double dynamics_entry(const PomdpModel &model, const History &h,
                             const Test &t) {
  const auto r = filter_history(model, h);
  if (r.probability <= 0.0)
    throw ImpossibleHistory(fmt::format("history of length {} has probability 0",
                                        h.size()));
  return test_probability(model, r.belief, t);
}

/// Outcome vector u_t with u_t[s] = P(t | state s). P(t | b) = b . u_t.
inline Eigen::VectorXd outcome_vector(const PomdpModel &model, const Test &t) {
  Eigen::VectorXd u = Eigen::VectorXd::Ones(model.num_states);
  for (auto it = t.rbegin(); it != t.rend(); ++it) {
    detail::check_step(model, *it);
    const auto a = static_cast<std::size_t>(it->action);
    u = model.transition[a] * model.emission[a].col(it->symbol).cwiseProduct(u);
  }
  return u;
}

/// Draws an index from a discrete distribution given as weights.
template <class Weights, class Rng>
int sample_index(const Weights &weights, Rng &rng) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    total += weights[i];
  std::uniform_real_distribution<double> unif(0.0, total);
  double u = unif(rng);
  int last_positive = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0)
      continue;
    last_positive = static_cast<int>(i);
    if (u < weights[i])
      return static_cast<int>(i);
    u -= weights[i];
  }
  return last_positive;
}

} // namespace psrx
