#pragma once

// Analytical discovery of core tests and core histories from an exact POMDP,
// followed by extraction of the PSR parameters m_t = P(Q|H)^+ P(t|H).

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "psrx/pomdp.hpp"
#include "psrx/psr.hpp"

namespace psrx {

struct AdlConfig {
  /// Singular values below rank_tolerance * sigma_max count as zero.
  double rank_tolerance = 1e-7;
  int max_iterations = 20;

  void validate() const {
    if (!(rank_tolerance > 0.0 && rank_tolerance < 1.0))
      throw ConfigError("rank_tolerance must lie in (0, 1)");
    if (max_iterations < 1)
      throw ConfigError("max_iterations must be positive");
  }
};

struct DynamicsMatrix {
  std::vector<History> rows;
  std::vector<Test> cols;
  Eigen::MatrixXd entries;
};

struct IndependentSet {
  std::vector<int> rows;
  std::vector<int> cols;
};

inline int numeric_rank(const Eigen::MatrixXd &a, double tol) {
  if (a.size() == 0)
    return 0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  const auto &sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0)
    return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    r += sv[i] > tol * sv[0];
  return r;
}

namespace detail {

// Column-pivoted Gram-Schmidt: picks `count` columns, each time the one with
// the largest residual norm; among near-equal norms the lowest index wins.
inline std::vector<int> pivot_columns(Eigen::MatrixXd residual, int count) {
  std::vector<int> picked;
  std::vector<bool> used(static_cast<std::size_t>(residual.cols()), false);
  for (int k = 0; k < count; ++k) {
    int best = -1;
    double best_norm = 0.0;
    for (Eigen::Index j = 0; j < residual.cols(); ++j) {
      if (used[static_cast<std::size_t>(j)])
        continue;
      const double n = residual.col(j).norm();
      if (n > best_norm * (1.0 + 1e-9)) {
        best = static_cast<int>(j);
        best_norm = n;
      }
    }
    if (best < 0 || best_norm == 0.0)
      break;
    used[static_cast<std::size_t>(best)] = true;
    picked.push_back(best);
    const Eigen::VectorXd q = residual.col(best) / best_norm;
    for (int pass = 0; pass < 2; ++pass)
      residual -= q * (q.transpose() * residual);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

} // namespace detail

/// Maximal linearly independent column set of `a`, then a row set that is
/// independent within those columns, so a(rows, cols) is square and
/// well-conditioned. Both sets have size numeric_rank(a, tol).
inline IndependentSet independent_rows_cols(const Eigen::MatrixXd &a, double tol) {
  if (a.size() == 0)
    throw std::invalid_argument("independent_rows_cols needs a non-empty matrix");
  const int r = numeric_rank(a, tol);
  IndependentSet out;
  out.cols = detail::pivot_columns(a, r);
  Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(out.cols.size()));
  for (std::size_t k = 0; k < out.cols.size(); ++k)
    sub.col(static_cast<Eigen::Index>(k)) = a.col(out.cols[k]);
  out.rows = detail::pivot_columns(sub.transpose(), static_cast<int>(out.cols.size()));
  return out;
}

namespace detail {

inline bool shorter_first(const Sequence &a, const Sequence &b) {
  if (a.size() != b.size())
    return a.size() < b.size();
  return a < b;
}

inline std::vector<Sequence> sorted_unique(std::vector<Sequence> v) {
  std::sort(v.begin(), v.end(), shorter_first);
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::vector<Test> one_step_tests(int num_actions, int num_symbols) {
  std::vector<Test> out;
  for (int a = 0; a < num_actions; ++a)
    for (int z = 0; z < num_symbols; ++z)
      out.push_back({Step{a, z}});
  return out;
}

} // namespace detail

/// Fills P(t|h) for every row/column pair. Rows must be possible histories.
inline DynamicsMatrix build_dynamics(const PomdpModel &model, std::vector<History> rows,
                                     std::vector<Test> cols) {
  DynamicsMatrix d{std::move(rows), std::move(cols), {}};
  d.entries.resize(static_cast<Eigen::Index>(d.rows.size()), static_cast<Eigen::Index>(d.cols.size()));
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const auto f = filter_history(model, d.rows[i]);
    if (f.probability <= 0.0)
      throw ImpossibleHistory(fmt::format("row {} has probability 0", i));
    for (std::size_t j = 0; j < d.cols.size(); ++j)
      d.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          test_probability(model, f.belief, d.cols[j]);
  }
  return d;
}

struct Discovery {
  std::vector<Test> core_tests;
  std::vector<History> core_histories;
  /// P(Q|H): rows are core histories, columns core tests.
  Eigen::MatrixXd core_matrix;
  std::vector<int> rank_trajectory;
  DynamicsMatrix dynamics;
};

/// Grows core tests and histories by one-step extensions until the rank of
/// the dynamics matrix stops increasing.
inline Discovery discover(const PomdpModel &model, const AdlConfig &cfg = {}) {
  cfg.validate();
  const auto one_step = detail::one_step_tests(model.num_actions(), model.num_symbols());
  std::vector<History> core_histories{History{}};
  std::vector<Test> core_tests;
  Discovery out;
  int prev_rank = 0;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<History> rows{History{}};
    for (const auto &h : core_histories) {
      rows.push_back(h);
      for (const auto &az : one_step) {
        auto ext = concat(h, az);
        if (filter_history(model, ext).probability > 0.0)
          rows.push_back(std::move(ext));
      }
    }
    std::vector<Test> cols = one_step;
    for (const auto &q : core_tests) {
      cols.push_back(q);
      for (const auto &az : one_step)
        cols.push_back(concat(az, q));
    }
    auto d = build_dynamics(model, detail::sorted_unique(std::move(rows)),
                            detail::sorted_unique(std::move(cols)));
    const auto sel = independent_rows_cols(d.entries, cfg.rank_tolerance);
    const int rank = static_cast<int>(sel.cols.size());
    out.rank_trajectory.push_back(rank);

    core_histories.clear();
    core_tests.clear();
    for (int i : sel.rows)
      core_histories.push_back(d.rows[static_cast<std::size_t>(i)]);
    for (int j : sel.cols)
      core_tests.push_back(d.cols[static_cast<std::size_t>(j)]);

    if (rank <= prev_rank) {
      out.core_tests = core_tests;
      out.core_histories = core_histories;
      out.core_matrix.resize(rank, rank);
      for (int i = 0; i < rank; ++i)
        for (int j = 0; j < rank; ++j)
          out.core_matrix(i, j) = d.entries(sel.rows[static_cast<std::size_t>(i)],
                                            sel.cols[static_cast<std::size_t>(j)]);
      out.dynamics = std::move(d);
      return out;
    }
    prev_rank = rank;
  }
  throw RankNotConverged(fmt::format("rank still growing after {} iterations", cfg.max_iterations));
}

/// PSR parameters from the core set, via the pseudo-inverse of P(Q|H).
inline PsrModel extract_model(const PomdpModel &model, const std::vector<Test> &core_tests,
                              const std::vector<History> &core_histories, double tol = 1e-7) {
  const auto q = static_cast<Eigen::Index>(core_tests.size());
  if (q == 0 || static_cast<Eigen::Index>(core_histories.size()) != q)
    throw SingularCoreMatrix("core tests and core histories must be non-empty and equal in number");

  std::vector<Eigen::VectorXd> hist_beliefs;
  for (const auto &h : core_histories) {
    const auto f = filter_history(model, h);
    if (f.probability <= 0.0)
      throw ImpossibleHistory("core history has probability 0");
    hist_beliefs.push_back(f.belief);
  }
  const auto column = [&](const Test &t) {
    Eigen::VectorXd v(q);
    for (Eigen::Index i = 0; i < q; ++i)
      v[i] = test_probability(model, hist_beliefs[static_cast<std::size_t>(i)], t);
    return v;
  };

  Eigen::MatrixXd core(q, q);
  for (Eigen::Index j = 0; j < q; ++j)
    core.col(j) = column(core_tests[static_cast<std::size_t>(j)]);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(core, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto &sv = svd.singularValues();
  if (!(sv[q - 1] >= tol * sv[0]))
    throw SingularCoreMatrix(fmt::format("condition {:g} exceeds 1/{:g}", sv[0] / sv[q - 1], tol));
  const Eigen::MatrixXd pinv =
      svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();

  PsrModel psr;
  psr.actions = model.actions;
  psr.symbols = model.symbols;
  psr.core_tests = core_tests;
  psr.M.resize(static_cast<std::size_t>(model.num_actions()));
  psr.m.resize(static_cast<std::size_t>(model.num_actions()));
  for (int a = 0; a < model.num_actions(); ++a) {
    for (int z = 0; z < model.num_symbols(); ++z) {
      const Test az{Step{a, z}};
      Eigen::MatrixXd Maz(q, q);
      for (Eigen::Index i = 0; i < q; ++i)
        Maz.row(i) = (pinv * column(concat(az, core_tests[static_cast<std::size_t>(i)]))).transpose();
      psr.M[static_cast<std::size_t>(a)].push_back(std::move(Maz));
      psr.m[static_cast<std::size_t>(a)].push_back(pinv * column(az));
    }
  }
  psr.b0.resize(q);
  for (Eigen::Index j = 0; j < q; ++j)
    psr.b0[j] = test_probability(model, model.initial_belief, core_tests[static_cast<std::size_t>(j)]);
  return psr;
}

struct LearnedPsr {
  PsrModel psr;
  Discovery discovery;
};

inline LearnedPsr learn_psr(const PomdpModel &model, const AdlConfig &cfg = {}) {
  auto disc = discover(model, cfg);
  auto psr = extract_model(model, disc.core_tests, disc.core_histories, cfg.rank_tolerance);
  return {std::move(psr), std::move(disc)};
}

/// Dynamics matrix as CSV: header row of test labels, one row per history.
inline void write_dynamics_csv(const DynamicsMatrix &d, const PomdpModel &model,
                               const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw Error(fmt::format("cannot write '{}'", path));
  out << "history";
  for (const auto &t : d.cols)
    out << ',' << format_sequence(t, model.actions, model.symbols);
  out << '\n';
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    out << (d.rows[i].empty() ? std::string("()") : format_sequence(d.rows[i], model.actions, model.symbols));
    for (std::size_t j = 0; j < d.cols.size(); ++j)
      out << fmt::format(",{:.17g}", d.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
}

} // namespace psrx
