#pragma once

// Linear predictive state representation. The state is the column vector of
// core-test predictions b = P(Q|h); update matrices act on the left, so that
// M[a][z] * b = P(azQ|h) and m[a][z] . b = P(az|h).

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "psrx/pomdp.hpp"

namespace psrx {

inline constexpr double kPsrZeroProbability = 1e-12;
inline constexpr double kPredictionSlack = 1e-6;

using PredictionVector = Eigen::VectorXd;

struct PsrModel {
  std::vector<std::string> actions;
  std::vector<Symbol> symbols;
  std::vector<Test> core_tests;
  /// M[a][z], |Q| x |Q|; row i is m_{az q_i}.
  std::vector<std::vector<Eigen::MatrixXd>> M;
  /// m[a][z], length |Q|.
  std::vector<std::vector<Eigen::VectorXd>> m;
  PredictionVector b0;

  int dim() const { return static_cast<int>(core_tests.size()); }
  int num_actions() const { return static_cast<int>(actions.size()); }
  int num_symbols() const { return static_cast<int>(symbols.size()); }

  std::optional<int> action_index(const std::string &name) const {
    const auto it = std::find(actions.begin(), actions.end(), name);
    if (it == actions.end())
      return std::nullopt;
    return static_cast<int>(it - actions.begin());
  }
  std::optional<int> symbol_index(const Symbol &z) const {
    const auto it = std::find(symbols.begin(), symbols.end(), z);
    if (it == symbols.end())
      return std::nullopt;
    return static_cast<int>(it - symbols.begin());
  }

  std::string format(const Sequence &s) const { return format_sequence(s, actions, symbols); }
};

struct PsrUpdate {
  PredictionVector belief;
  double probability = 0.0;
};

namespace detail {

inline void check_psr_step(const PsrModel &model, const Step &step) {
  if (step.action < 0 || step.action >= model.num_actions())
    throw UnknownAction(fmt::format("action index {}", step.action));
  if (step.symbol < 0 || step.symbol >= model.num_symbols())
    throw UnknownSymbol(fmt::format("symbol index {}", step.symbol));
}

inline void check_dim(const PsrModel &model, const PredictionVector &b) {
  if (b.size() != model.dim())
    throw DimensionMismatch(
        fmt::format("prediction vector has {} entries, model has {}", b.size(), model.dim()));
}

} // namespace detail

/// b' = M[a][z] b / (m[a][z] . b), clamped entrywise to [0,1].
inline PsrUpdate psr_update(const PsrModel &model, const PredictionVector &b,
                            const Step &step) {
  detail::check_psr_step(model, step);
  detail::check_dim(model, b);
  const auto a = static_cast<std::size_t>(step.action);
  const auto z = static_cast<std::size_t>(step.symbol);
  const double p = model.m[a][z].dot(b);
  if (!(p >= kPsrZeroProbability))
    throw ZeroProbabilityObservation(
        fmt::format("m[{}][{}] . b = {:g}", step.action, step.symbol, p));
  PredictionVector next = (model.M[a][z] * b / p).cwiseMax(0.0).cwiseMin(1.0);
  return {std::move(next), p};
}

/// Parameter vector m_t with P(t|h) = m_t . P(Q|h).
inline Eigen::VectorXd test_param(const PsrModel &model, const Test &t) {
  if (t.empty())
    throw std::invalid_argument("test_param needs a non-empty test");
  for (const auto &s : t)
    detail::check_psr_step(model, s);
  const auto &last = t.back();
  Eigen::VectorXd v = model.m[static_cast<std::size_t>(last.action)]
                             [static_cast<std::size_t>(last.symbol)];
  for (auto it = t.rbegin() + 1; it != t.rend(); ++it)
    v = model.M[static_cast<std::size_t>(it->action)]
               [static_cast<std::size_t>(it->symbol)].transpose() * v;
  return v;
}

/// Stacks m_t rows for each test; P(tests|h) = result * P(Q|h).
inline Eigen::MatrixXd projection_matrix(const PsrModel &model, const std::vector<Test> &tests) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(tests.size()), model.dim());
  for (std::size_t i = 0; i < tests.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = test_param(model, tests[i]).transpose();
  return out;
}

/// Projection of the task onto a test set: [m_t . b for each t].
inline Eigen::VectorXd project(const PsrModel &model, const PredictionVector &b,
                               const std::vector<Test> &tests) {
  if (tests.empty())
    throw std::invalid_argument("project needs at least one test");
  detail::check_dim(model, b);
  return projection_matrix(model, tests) * b;
}

/// Test written against task-independent labels: action name and symbol value.
struct StepLabel {
  std::string action;
  Symbol symbol;
  friend bool operator==(const StepLabel &, const StepLabel &) = default;
};
using LabeledTest = std::vector<StepLabel>;

inline LabeledTest label_test(const PsrModel &model, const Test &t) {
  LabeledTest out;
  for (const auto &s : t) {
    detail::check_psr_step(model, s);
    out.push_back({model.actions[static_cast<std::size_t>(s.action)],
                   model.symbols[static_cast<std::size_t>(s.symbol)]});
  }
  return out;
}

/// Resolves labels to indices; nullopt when the model never emits a symbol in t
/// (the test is then impossible in that task).
inline std::optional<Test> resolve_test(const PsrModel &model, const LabeledTest &t) {
  Test out;
  for (const auto &s : t) {
    const auto a = model.action_index(s.action);
    if (!a)
      throw UnknownAction(fmt::format("action '{}'", s.action));
    const auto z = model.symbol_index(s.symbol);
    if (!z)
      return std::nullopt;
    out.push_back({*a, *z});
  }
  return out;
}

/// Projection matrix for labelled tests; unresolvable tests give zero rows and
/// the model's own core tests give exact unit rows.
inline Eigen::MatrixXd projection_matrix(const PsrModel &model,
                                         const std::vector<LabeledTest> &tests) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tests.size()), model.dim());
  for (std::size_t i = 0; i < tests.size(); ++i) {
    auto t = resolve_test(model, tests[i]);
    if (!t || t->empty())
      continue;
    const auto core = std::find(model.core_tests.begin(), model.core_tests.end(), *t);
    if (core != model.core_tests.end())
      out(static_cast<Eigen::Index>(i), core - model.core_tests.begin()) = 1.0;
    else
      out.row(static_cast<Eigen::Index>(i)) = test_param(model, *t).transpose();
  }
  return out;
}

/// Projection matrices computed once per test list. Insertions are serialized;
/// returned references stay valid for the cache's lifetime.
class ProjectionCache {
public:
  const Eigen::MatrixXd &get(const PsrModel &model, const std::vector<LabeledTest> &tests) {
    const auto key = cache_key(tests);
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end())
      it = entries_.emplace(key, std::make_unique<Eigen::MatrixXd>(projection_matrix(model, tests)))
               .first;
    return *it->second;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

private:
  static std::string cache_key(const std::vector<LabeledTest> &tests) {
    std::string key;
    for (const auto &t : tests) {
      for (const auto &s : t)
        key += fmt::format("{}:{}:{:.17g};", s.action, s.symbol.sensor, s.symbol.reward);
      key += '|';
    }
    return key;
  }

  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Eigen::MatrixXd>> entries_;
};

// ---------------------------------------------------------------------------
// JSON serialization

inline nlohmann::json step_to_json(const PsrModel &model, const Step &s) {
  const auto &z = model.symbols.at(static_cast<std::size_t>(s.symbol));
  return nlohmann::json::array({model.actions.at(static_cast<std::size_t>(s.action)), z.sensor, z.reward});
}

inline StepLabel step_label_from_json(const nlohmann::json &j) {
  if (!j.is_array() || j.size() != 3)
    throw ParseError("a step must be an [action, sensor_code, reward] triple");
  StepLabel s;
  s.action = j[0].is_string() ? j[0].get<std::string>()
                              : std::string(1, "NESW"[j[0].get<int>() & 3]);
  s.symbol = Symbol{j[1].get<int>(), j[2].get<double>()};
  return s;
}

inline LabeledTest labeled_test_from_json(const nlohmann::json &j) {
  if (!j.is_array())
    throw ParseError("a test must be an array of step triples");
  LabeledTest t;
  for (const auto &s : j)
    t.push_back(step_label_from_json(s));
  return t;
}

inline nlohmann::json labeled_test_to_json(const LabeledTest &t) {
  auto out = nlohmann::json::array();
  for (const auto &s : t)
    out.push_back(nlohmann::json::array({s.action, s.symbol.sensor, s.symbol.reward}));
  return out;
}

namespace detail {
inline nlohmann::json vec_to_json(const Eigen::VectorXd &v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
inline Eigen::VectorXd vec_from_json(const nlohmann::json &j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
} // namespace detail

inline nlohmann::json to_json(const PsrModel &model) {
  nlohmann::json j;
  j["actions"] = model.actions;
  auto syms = nlohmann::json::array();
  for (const auto &z : model.symbols)
    syms.push_back(nlohmann::json::array({z.sensor, z.reward}));
  j["symbols"] = syms;
  auto tests = nlohmann::json::array();
  for (const auto &t : model.core_tests) {
    auto steps = nlohmann::json::array();
    for (const auto &s : t)
      steps.push_back(step_to_json(model, s));
    tests.push_back(steps);
  }
  j["core_tests"] = tests;
  auto M = nlohmann::json::array();
  auto m = nlohmann::json::array();
  for (int a = 0; a < model.num_actions(); ++a) {
    auto Ma = nlohmann::json::array();
    auto ma = nlohmann::json::array();
    for (int z = 0; z < model.num_symbols(); ++z) {
      const auto &mat = model.M[static_cast<std::size_t>(a)][static_cast<std::size_t>(z)];
      auto rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < mat.rows(); ++r)
        rows.push_back(detail::vec_to_json(mat.row(r).transpose()));
      Ma.push_back(rows);
      ma.push_back(detail::vec_to_json(model.m[static_cast<std::size_t>(a)][static_cast<std::size_t>(z)]));
    }
    M.push_back(Ma);
    m.push_back(ma);
  }
  j["M"] = M;
  j["m"] = m;
  j["b0"] = detail::vec_to_json(model.b0);
  return j;
}

inline PsrModel psr_from_json(const nlohmann::json &j) {
  PsrModel model;
  model.actions = j.at("actions").get<std::vector<std::string>>();
  for (const auto &z : j.at("symbols"))
    model.symbols.push_back({z.at(0).get<int>(), z.at(1).get<double>()});
  for (const auto &jt : j.at("core_tests")) {
    const auto labels = labeled_test_from_json(jt);
    auto t = resolve_test(model, labels);
    if (!t)
      throw ParseError("core test uses a symbol missing from the symbol table");
    model.core_tests.push_back(*t);
  }
  const auto q = model.dim();
  const auto &M = j.at("M");
  const auto &m = j.at("m");
  if (M.size() != model.actions.size() || m.size() != model.actions.size())
    throw ParseError("parameter arrays do not match the action table");
  model.M.resize(model.actions.size());
  model.m.resize(model.actions.size());
  for (std::size_t a = 0; a < model.actions.size(); ++a) {
    if (M[a].size() != model.symbols.size() || m[a].size() != model.symbols.size())
      throw ParseError("parameter arrays do not match the symbol table");
    for (std::size_t z = 0; z < model.symbols.size(); ++z) {
      Eigen::MatrixXd mat(q, q);
      const auto &rows = M[a][z];
      if (static_cast<int>(rows.size()) != q)
        throw DimensionMismatch("update matrix row count");
      for (int r = 0; r < q; ++r) {
        const auto row = detail::vec_from_json(rows[static_cast<std::size_t>(r)]);
        if (row.size() != q)
          throw DimensionMismatch("update matrix column count");
        mat.row(r) = row.transpose();
      }
      model.M[a].push_back(std::move(mat));
      auto vec = detail::vec_from_json(m[a][z]);
      if (vec.size() != q)
        throw DimensionMismatch("one-step vector length");
      model.m[a].push_back(std::move(vec));
    }
  }
  model.b0 = detail::vec_from_json(j.at("b0"));
  if (model.b0.size() != q)
    throw DimensionMismatch("initial prediction length");
  return model;
}

inline void save_psr(const PsrModel &model, const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw Error(fmt::format("cannot write '{}'", path));
  out << to_json(model).dump(1) << '\n';
}

inline PsrModel load_psr(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(fmt::format("cannot read '{}'", path));
  return psr_from_json(nlohmann::json::parse(in));
}

} // namespace psrx
