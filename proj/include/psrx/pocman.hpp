#pragma once

// Partially observable Pacman with one pellet and no ghosts. Mazes are read
// from a small text format and compiled into tabular POMDPs.
//
// Maze file:
//   sense: N,W              header lines, all optional
//   sensor_accuracy: 0.95
//   action_accuracy: 0.9
//   step_reward: -1
//   goal_reward: 10
//   pellet: 1,2             row,col of the pellet when '*' is not used
//   #####                   '#' wall, '.' free, 'P' start, '*' pellet
//   #P.*#
//   #####

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psrx/pomdp.hpp"

namespace psrx {

enum class Direction { North = 0, East = 1, South = 2, West = 3 };

inline constexpr std::array<Direction, 4> kDirections{Direction::North, Direction::East,
                                                      Direction::South, Direction::West};

inline char direction_letter(Direction d) { return "NESW"[static_cast<int>(d)]; }

inline Direction parse_direction(std::string_view s) {
  if (s == "N" || s == "North") return Direction::North;
  if (s == "E" || s == "East") return Direction::East;
  if (s == "S" || s == "South") return Direction::South;
  if (s == "W" || s == "West") return Direction::West;
  throw ParseError(fmt::format("unknown direction '{}'", s));
}

inline std::pair<int, int> offset(Direction d) {
  switch (d) {
  case Direction::North: return {-1, 0};
  case Direction::East: return {0, 1};
  case Direction::South: return {1, 0};
  case Direction::West: return {0, -1};
  }
  return {0, 0};
}

inline std::array<Direction, 2> perpendicular(Direction d) {
  if (d == Direction::North || d == Direction::South)
    return {Direction::East, Direction::West};
  return {Direction::North, Direction::South};
}

enum class CellKind { Wall, Free, Pellet, Start };

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell &, const Cell &) = default;
};

struct MazeSpec {
  std::vector<std::vector<CellKind>> grid;
  std::array<Direction, 2> sense_directions{Direction::North, Direction::West};
  double sensor_accuracy = 0.95;
  double action_accuracy = 0.9;
  double step_reward = -1.0;
  double goal_reward = 10.0;

  int rows() const { return static_cast<int>(grid.size()); }
  int cols() const { return grid.empty() ? 0 : static_cast<int>(grid.front().size()); }

  CellKind at(Cell c) const {
    if (c.row < 0 || c.row >= rows() || c.col < 0 || c.col >= cols())
      return CellKind::Wall;
    return grid[static_cast<std::size_t>(c.row)][static_cast<std::size_t>(c.col)];
  }
  bool is_free(Cell c) const { return at(c) != CellKind::Wall; }

  /// Free cells in row-major order; index i is POMDP state i.
  std::vector<Cell> free_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < rows(); ++r)
      for (int c = 0; c < cols(); ++c)
        if (is_free({r, c}))
          out.push_back({r, c});
    return out;
  }

  std::optional<Cell> find(CellKind kind) const {
    for (int r = 0; r < rows(); ++r)
      for (int c = 0; c < cols(); ++c)
        if (at({r, c}) == kind)
          return Cell{r, c};
    return std::nullopt;
  }
  Cell start() const { return find(CellKind::Start).value(); }
  Cell pellet() const { return find(CellKind::Pellet).value(); }

  int state_of(Cell c) const {
    const auto cells = free_cells();
    const auto it = std::find(cells.begin(), cells.end(), c);
    if (it == cells.end())
      throw ValidationError(fmt::format("cell ({},{}) is not free", c.row, c.col));
    return static_cast<int>(it - cells.begin());
  }
};

inline Cell neighbour(Cell c, Direction d) {
  const auto [dr, dc] = offset(d);
  return {c.row + dr, c.col + dc};
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_number(const std::string &key, const std::string &value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size())
      throw ParseError(fmt::format("trailing characters in '{}: {}'", key, value));
    return v;
  } catch (const std::logic_error &) {
    throw ParseError(fmt::format("bad number in '{}: {}'", key, value));
  }
}

inline void validate_maze(const MazeSpec &m) {
  int starts = 0, pellets = 0, free = 0;
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      const auto k = m.at({r, c});
      starts += k == CellKind::Start;
      pellets += k == CellKind::Pellet;
      free += k != CellKind::Wall;
      const bool boundary = r == 0 || c == 0 || r == m.rows() - 1 || c == m.cols() - 1;
      if (boundary && k != CellKind::Wall)
        throw ValidationError(fmt::format("open boundary at ({},{})", r, c));
    }
  }
  if (starts != 1)
    throw ValidationError(fmt::format("expected exactly one start cell, found {}", starts));
  if (pellets != 1)
    throw ValidationError(fmt::format("expected exactly one pellet cell, found {}", pellets));
  if (free < 2)
    throw ValidationError(fmt::format("need at least 2 free cells, found {}", free));
  if (m.sense_directions[0] == m.sense_directions[1])
    throw ValidationError("sense directions must differ");
  for (double p : {m.sensor_accuracy, m.action_accuracy})
    if (!(p >= 0.0 && p <= 1.0))
      throw ValidationError(fmt::format("accuracy {} outside [0,1]", p));
}

} // namespace detail

inline MazeSpec parse_maze(std::string_view text) {
  MazeSpec maze;
  std::optional<Cell> pellet_directive;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty())
      continue;
    if (const auto colon = line.find(':'); colon != std::string::npos) {
      const auto key = detail::trim(std::string_view(line).substr(0, colon));
      const auto value = detail::trim(std::string_view(line).substr(colon + 1));
      if (key == "sense") {
        const auto comma = value.find(',');
        if (comma == std::string::npos)
          throw ParseError(fmt::format("line {}: sense needs two directions", line_no));
        maze.sense_directions = {
            parse_direction(detail::trim(std::string_view(value).substr(0, comma))),
            parse_direction(detail::trim(std::string_view(value).substr(comma + 1)))};
      } else if (key == "sensor_accuracy") {
        maze.sensor_accuracy = detail::parse_number(key, value);
      } else if (key == "action_accuracy") {
        maze.action_accuracy = detail::parse_number(key, value);
      } else if (key == "step_reward") {
        maze.step_reward = detail::parse_number(key, value);
      } else if (key == "goal_reward") {
        maze.goal_reward = detail::parse_number(key, value);
      } else if (key == "pellet") {
        const auto comma = value.find(',');
        if (comma == std::string::npos)
          throw ParseError(fmt::format("line {}: pellet needs row,col", line_no));
        pellet_directive = Cell{
            static_cast<int>(detail::parse_number(key, value.substr(0, comma))),
            static_cast<int>(detail::parse_number(key, detail::trim(value.substr(comma + 1))))};
      } else {
        throw ParseError(fmt::format("line {}: unknown header '{}'", line_no, key));
      }
      continue;
    }
    std::vector<CellKind> row;
    for (char ch : line) {
      switch (ch) {
      case '#': row.push_back(CellKind::Wall); break;
      case '.': row.push_back(CellKind::Free); break;
      case 'P': row.push_back(CellKind::Start); break;
      case '*': row.push_back(CellKind::Pellet); break;
      default:
        throw ParseError(fmt::format("line {}: unknown glyph '{}'", line_no, ch));
      }
    }
    if (!maze.grid.empty() && row.size() != maze.grid.front().size())
      throw ParseError(fmt::format("line {}: ragged row ({} vs {} columns)", line_no,
                                   row.size(), maze.grid.front().size()));
    maze.grid.push_back(std::move(row));
  }
  if (maze.grid.empty())
    throw ParseError("maze has no grid rows");
  if (pellet_directive) {
    if (maze.at(*pellet_directive) != CellKind::Free)
      throw ValidationError(fmt::format("pellet directive ({},{}) is not a plain free cell",
                                        pellet_directive->row, pellet_directive->col));
    maze.grid[static_cast<std::size_t>(pellet_directive->row)]
             [static_cast<std::size_t>(pellet_directive->col)] = CellKind::Pellet;
  }
  detail::validate_maze(maze);
  return maze;
}

/// Sensor code of two wall bits: 2*first + second, where 1 means no wall.
inline int encode_observation(const std::array<bool, 2> &free_bits) {
  return 2 * static_cast<int>(free_bits[0]) + static_cast<int>(free_bits[1]);
}

inline std::array<bool, 2> decode_observation(int code) {
  return {(code & 2) != 0, (code & 1) != 0};
}

/// Noise-free sensor code of a cell.
inline int true_sensor_code(const MazeSpec &maze, Cell c) {
  return encode_observation({maze.is_free(neighbour(c, maze.sense_directions[0])),
                             maze.is_free(neighbour(c, maze.sense_directions[1]))});
}

/// Shortest start-to-pellet path in moves.
inline int shortest_path_length(const MazeSpec &maze) {
  const auto start = maze.start();
  const auto goal = maze.pellet();
  std::vector<std::vector<int>> dist(static_cast<std::size_t>(maze.rows()),
                                     std::vector<int>(static_cast<std::size_t>(maze.cols()), -1));
  std::deque<Cell> queue{start};
  dist[static_cast<std::size_t>(start.row)][static_cast<std::size_t>(start.col)] = 0;
  while (!queue.empty()) {
    const auto c = queue.front();
    queue.pop_front();
    if (c == goal)
      return dist[static_cast<std::size_t>(c.row)][static_cast<std::size_t>(c.col)];
    for (auto d : kDirections) {
      const auto n = neighbour(c, d);
      auto &dn = dist[static_cast<std::size_t>(n.row)][static_cast<std::size_t>(n.col)];
      if (maze.is_free(n) && dn < 0) {
        dn = dist[static_cast<std::size_t>(c.row)][static_cast<std::size_t>(c.col)] + 1;
        queue.push_back(n);
      }
    }
  }
  return -1;
}

/// Largest achievable return: the pellet reached along a shortest path with no slips.
inline double max_return(const MazeSpec &maze) {
  return (shortest_path_length(maze) - 1) * maze.step_reward + maze.goal_reward;
}

/// States are the free cells in row-major order followed by one absorbing sink.
/// Landing on the pellet pays goal_reward in place of step_reward and ends the
/// episode; the pellet state then drains into the sink, which self-loops
/// emitting the terminal symbol.
inline PomdpModel compile_pomdp(const MazeSpec &maze) {
  const auto cells = maze.free_cells();
  const int n_free = static_cast<int>(cells.size());
  const int n = n_free + 1;
  const int sink = n_free;
  const int pellet = maze.state_of(maze.pellet());

  // Per-state emission distribution over (sensor, reward) symbols.
  std::vector<std::vector<std::pair<Symbol, double>>> emits(static_cast<std::size_t>(n));
  for (int s = 0; s < n_free; ++s) {
    const auto c = cells[static_cast<std::size_t>(s)];
    const std::array<bool, 2> truth{maze.is_free(neighbour(c, maze.sense_directions[0])),
                                    maze.is_free(neighbour(c, maze.sense_directions[1]))};
    const double reward = s == pellet ? maze.goal_reward : maze.step_reward;
    for (int code = 0; code < 4; ++code) {
      const auto read = decode_observation(code);
      double p = 1.0;
      for (int k = 0; k < 2; ++k)
        p *= read[static_cast<std::size_t>(k)] == truth[static_cast<std::size_t>(k)]
                 ? maze.sensor_accuracy
                 : 1.0 - maze.sensor_accuracy;
      if (p > 0.0)
        emits[static_cast<std::size_t>(s)].push_back({Symbol{code, reward}, p});
    }
  }
  emits[static_cast<std::size_t>(sink)].push_back({Symbol{kTerminalSensor, 0.0}, 1.0});

  PomdpModel model;
  model.num_states = n;
  for (auto d : kDirections)
    model.actions.emplace_back(1, direction_letter(d));
  for (const auto &row : emits)
    for (const auto &[z, p] : row)
      if (std::find(model.symbols.begin(), model.symbols.end(), z) == model.symbols.end())
        model.symbols.push_back(z);
  std::sort(model.symbols.begin(), model.symbols.end(), [](const Symbol &a, const Symbol &b) {
    if (a.terminal() != b.terminal())
      return b.terminal();
    if (a.reward != b.reward)
      return a.reward < b.reward;
    return a.sensor < b.sensor;
  });
  const auto symbol_index = [&](const Symbol &z) {
    return static_cast<int>(std::find(model.symbols.begin(), model.symbols.end(), z) -
                            model.symbols.begin());
  };

  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n, model.num_symbols());
  for (int s = 0; s < n; ++s)
    for (const auto &[z, p] : emits[static_cast<std::size_t>(s)])
      E(s, symbol_index(z)) += p;

  const double slip = (1.0 - maze.action_accuracy) / 2.0;
  for (auto d : kDirections) {
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
    for (int s = 0; s < n_free; ++s) {
      if (s == pellet) {
        T(s, sink) = 1.0;
        continue;
      }
      const auto c = cells[static_cast<std::size_t>(s)];
      const auto perp = perpendicular(d);
      const std::array<std::pair<Direction, double>, 3> moves{
          {{d, maze.action_accuracy}, {perp[0], slip}, {perp[1], slip}}};
      for (const auto &[dir, p] : moves) {
        const auto target = neighbour(c, dir);
        T(s, maze.is_free(target) ? maze.state_of(target) : s) += p;
      }
    }
    T(sink, sink) = 1.0;
    model.transition.push_back(std::move(T));
    model.emission.push_back(E);
  }

  model.initial_belief = Eigen::VectorXd::Zero(n);
  model.initial_belief[maze.state_of(maze.start())] = 1.0;
  model.terminal.assign(static_cast<std::size_t>(n), false);
  model.terminal[static_cast<std::size_t>(pellet)] = true;
  model.terminal[static_cast<std::size_t>(sink)] = true;
  model.validate();
  return model;
}

struct EnvConfig {
  int episode_cap = 100;
  std::uint64_t rng_seed = 0;
};

struct StepOutcome {
  int next_state = 0;
  int symbol = 0;
  bool done = false;
};

/// Samples one transition. Deterministic given the generator state.
template <class Rng>
StepOutcome step(const PomdpModel &model, int s, int action, Rng &rng) {
  if (s < 0 || s >= model.num_states)
    throw ValidationError(fmt::format("state {} out of range", s));
  if (model.is_terminal(s))
    throw SteppedTerminal(fmt::format("state {} is terminal", s));
  if (action < 0 || action >= model.num_actions())
    throw UnknownAction(fmt::format("action index {}", action));
  const auto a = static_cast<std::size_t>(action);
  const int next = sample_index(model.transition[a].row(s), rng);
  const int z = sample_index(model.emission[a].row(next), rng);
  return {next, z, model.is_terminal(next)};
}

template <class Rng>
int sample_initial_state(const PomdpModel &model, Rng &rng) {
  return sample_index(model.initial_belief, rng);
}

} // namespace psrx
