#pragma once

// CMAC tile coding over (prediction vector, action) and online Q-learning on
// PSR beliefs filtered alongside a simulator.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "psrx/pocman.hpp"
#include "psrx/pomdp.hpp"
#include "psrx/psr.hpp"

namespace psrx {

struct TileCoderConfig {
  int dims = 1;
  int num_actions = 4;
  int num_tilings = 8;
  /// Bin width per prediction-vector component; <= 0 means 1/dims.
  double quantization = 0.0;
  /// Tiling k is displaced by k * tiling_offset.
  double tiling_offset = 0.015625;
  int table_bits = 20;
  double init_range = 0.01;
  std::uint64_t seed = 0;

  double step() const { return quantization > 0.0 ? quantization : 1.0 / dims; }
  std::size_t table_size() const { return std::size_t{1} << table_bits; }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace detail

class TileCoder {
public:
  TileCoder() = default;

  explicit TileCoder(TileCoderConfig cfg) : cfg_(cfg) {
    if (cfg_.dims < 1 || cfg_.num_actions < 1 || cfg_.num_tilings < 1)
      throw ConfigError("tile coder needs dims, actions and tilings >= 1");
    if (!(cfg_.step() > 0.0 && cfg_.step() <= 1.0))
      throw ConfigError("quantization must lie in (0, 1]");
    if (cfg_.table_bits < 4 || cfg_.table_bits > 30)
      throw ConfigError("table_bits must lie in [4, 30]");
    if (cfg_.quantization <= 0.0)
      cfg_.quantization = cfg_.step();
    weights_.resize(cfg_.table_size());
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_real_distribution<double> init(-cfg_.init_range, cfg_.init_range);
    for (auto &w : weights_)
      w = cfg_.init_range > 0.0 ? init(rng) : 0.0;
  }

  const TileCoderConfig &config() const { return cfg_; }
  int dims() const { return cfg_.dims; }
  int num_tilings() const { return cfg_.num_tilings; }
  std::vector<double> &weights() { return weights_; }
  const std::vector<double> &weights() const { return weights_; }

  /// Quantized coordinates of b in one tiling: floor((b_i - k*offset) / step).
  std::vector<std::int64_t> bins(const PredictionVector &b, int tiling) const {
    check(b);
    std::vector<std::int64_t> out(static_cast<std::size_t>(cfg_.dims));
    const double shift = tiling * cfg_.tiling_offset;
    for (int i = 0; i < cfg_.dims; ++i)
      out[static_cast<std::size_t>(i)] =
          static_cast<std::int64_t>(std::floor((b[i] - shift) / cfg_.quantization));
    return out;
  }

  /// One index per tiling. Each tiling owns a disjoint slice of the table, so
  /// the indices of one query are always distinct.
  std::vector<std::size_t> tiles(const PredictionVector &b, int action) const {
    check(b);
    if (action < 0 || action >= cfg_.num_actions)
      throw UnknownAction(fmt::format("action index {}", action));
    const std::size_t slice = cfg_.table_size() / static_cast<std::size_t>(cfg_.num_tilings);
    std::vector<std::size_t> out(static_cast<std::size_t>(cfg_.num_tilings));
    for (int k = 0; k < cfg_.num_tilings; ++k) {
      std::uint64_t h = detail::splitmix64(static_cast<std::uint64_t>(k) * 0x100000001b3ULL +
                                           static_cast<std::uint64_t>(action));
      for (auto c : bins(b, k))
        h = detail::splitmix64(h ^ static_cast<std::uint64_t>(c));
      out[static_cast<std::size_t>(k)] = static_cast<std::size_t>(k) * slice + h % slice;
    }
    return out;
  }

  double q_value(const PredictionVector &b, int action) const {
    double sum = 0.0;
    for (auto i : tiles(b, action))
      sum += weights_[i];
    return sum;
  }

  std::vector<double> q_values(const PredictionVector &b) const {
    std::vector<double> out(static_cast<std::size_t>(cfg_.num_actions));
    for (int a = 0; a < cfg_.num_actions; ++a)
      out[static_cast<std::size_t>(a)] = q_value(b, a);
    return out;
  }

  /// argmax_a Q(b, a); ties go to the lowest action index.
  int greedy_action(const PredictionVector &b) const {
    const auto q = q_values(b);
    return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
  }

  double max_q(const PredictionVector &b) const {
    const auto q = q_values(b);
    return *std::max_element(q.begin(), q.end());
  }

  /// One Q-learning step; adds alpha * delta to each active tile and returns delta.
  double td_update(const PredictionVector &b, int action, double reward,
                   const PredictionVector &b_next, bool done, double alpha, double gamma) {
    const double target = done ? reward : reward + gamma * max_q(b_next);
    const auto active = tiles(b, action);
    double q = 0.0;
    for (auto i : active)
      q += weights_[i];
    const double delta = target - q;
    for (auto i : active)
      weights_[i] += alpha * delta;
    return delta;
  }

  void save(const std::string &path) const;
  static TileCoder load(const std::string &path);

private:
  void check(const PredictionVector &b) const {
    if (b.size() != cfg_.dims)
      throw DimensionMismatch(
          fmt::format("coder expects {} components, got {}", cfg_.dims, b.size()));
  }

  TileCoderConfig cfg_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Binary format (little-endian):
//   char[8] "PSRXCMAC", u32 version, u32 dims, u32 tilings, u32 actions,
//   f64 quantization, f64 tiling_offset, f64 init_range, u64 table_size,
//   u64 seed, then table_size f64 weights.

namespace detail {

template <class T>
void put_le(std::ostream &out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>)
    bits = std::bit_cast<std::uint64_t>(static_cast<double>(value));
  else
    bits = static_cast<std::uint64_t>(value);
  std::array<char, sizeof(T) == 4 ? 4 : 8> bytes{};
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
T get_le(std::istream &in) {
  std::array<unsigned char, sizeof(T) == 4 ? 4 : 8> bytes{};
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in)
    throw ParseError("truncated coder file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>)
    return std::bit_cast<double>(bits);
  else
    return static_cast<T>(bits);
}

inline constexpr char kCoderMagic[8] = {'P', 'S', 'R', 'X', 'C', 'M', 'A', 'C'};

} // namespace detail

inline void TileCoder::save(const std::string &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(fmt::format("cannot write '{}'", path));
  out.write(detail::kCoderMagic, 8);
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.dims));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.num_tilings));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.num_actions));
  detail::put_le<double>(out, cfg_.quantization);
  detail::put_le<double>(out, cfg_.tiling_offset);
  detail::put_le<double>(out, cfg_.init_range);
  detail::put_le<std::uint64_t>(out, weights_.size());
  detail::put_le<std::uint64_t>(out, cfg_.seed);
  for (double w : weights_)
    detail::put_le<double>(out, w);
}

inline TileCoder TileCoder::load(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(fmt::format("cannot read '{}'", path));
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kCoderMagic, 8) != 0)
    throw ParseError(fmt::format("'{}' is not a coder file", path));
  if (detail::get_le<std::uint32_t>(in) != 1)
    throw ParseError("unsupported coder version");
  TileCoderConfig cfg;
  cfg.dims = static_cast<int>(detail::get_le<std::uint32_t>(in));
  cfg.num_tilings = static_cast<int>(detail::get_le<std::uint32_t>(in));
  cfg.num_actions = static_cast<int>(detail::get_le<std::uint32_t>(in));
  cfg.quantization = detail::get_le<double>(in);
  cfg.tiling_offset = detail::get_le<double>(in);
  cfg.init_range = detail::get_le<double>(in);
  const auto size = detail::get_le<std::uint64_t>(in);
  cfg.seed = detail::get_le<std::uint64_t>(in);
  if (size == 0 || (size & (size - 1)) != 0)
    throw ParseError("table size must be a power of two");
  cfg.table_bits = std::countr_zero(size);
  TileCoder coder;
  coder.cfg_ = cfg;
  coder.weights_.resize(size);
  for (auto &w : coder.weights_)
    w = detail::get_le<double>(in);
  return coder;
}

struct QLearnConfig {
  /// Per-tile learning rate; <= 0 means 0.1 / num_tilings.
  double alpha = 0.0;
  double gamma = 0.95;
  int num_trajectories = 100;
  int trajectory_length = 50;

  double alpha_for(int num_tilings) const { return alpha > 0.0 ? alpha : 0.1 / num_tilings; }

  void validate() const {
    if (alpha < 0.0)
      throw ConfigError("alpha must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw ConfigError("gamma must lie in (0, 1]");
    if (num_trajectories < 0 || trajectory_length < 1)
      throw ConfigError("bad trajectory budget");
  }
};

inline TileCoderConfig default_coder_config(const PsrModel &psr, std::uint64_t seed) {
  TileCoderConfig cfg;
  cfg.dims = psr.dim();
  cfg.num_actions = psr.num_actions();
  cfg.quantization = 1.0 / psr.dim();
  cfg.seed = seed;
  return cfg;
}

/// Q-learning under a uniform-random behaviour policy. The PSR belief is
/// filtered alongside the simulator and every transition updates the coder.
template <class Rng>
void train(TileCoder &coder, const PsrModel &psr, const PomdpModel &env,
           const QLearnConfig &cfg, Rng &rng) {
  cfg.validate();
  if (coder.dims() != psr.dim())
    throw DimensionMismatch(fmt::format("coder has {} dims, PSR has {}", coder.dims(), psr.dim()));
  const double alpha = cfg.alpha_for(coder.num_tilings());
  std::uniform_int_distribution<int> pick(0, env.num_actions() - 1);
  for (int ep = 0; ep < cfg.num_trajectories; ++ep) {
    int s = sample_initial_state(env, rng);
    PredictionVector b = psr.b0;
    for (int t = 0; t < cfg.trajectory_length; ++t) {
      const int a = pick(rng);
      const auto out = step(env, s, a, rng);
      const double reward = env.symbols[static_cast<std::size_t>(out.symbol)].reward;
      auto next = psr_update(psr, b, {a, out.symbol});
      coder.td_update(b, a, reward, next.belief, out.done, alpha, cfg.gamma);
      if (out.done)
        break;
      s = out.next_state;
      b = std::move(next.belief);
    }
  }
}

template <class Rng>
TileCoder train(const PsrModel &psr, const PomdpModel &env, const QLearnConfig &cfg, Rng &rng,
                std::uint64_t init_seed = 0) {
  TileCoder coder(default_coder_config(psr, init_seed));
  train(coder, psr, env, cfg, rng);
  return coder;
}

/// Return of one episode that acts greedily on the filtered PSR belief.
template <class Rng>
double greedy_episode(const TileCoder &coder, const PsrModel &psr, const PomdpModel &env,
                      int episode_cap, Rng &rng) {
  int s = sample_initial_state(env, rng);
  PredictionVector b = psr.b0;
  double ret = 0.0;
  for (int t = 0; t < episode_cap; ++t) {
    const int a = coder.greedy_action(b);
    const auto out = step(env, s, a, rng);
    ret += env.symbols[static_cast<std::size_t>(out.symbol)].reward;
    if (out.done)
      break;
    b = psr_update(psr, b, {a, out.symbol}).belief;
    s = out.next_state;
  }
  return ret;
}

} // namespace psrx
