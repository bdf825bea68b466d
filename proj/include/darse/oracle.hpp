#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "darse/error.hpp"
#include "darse/evaluator.hpp"
#include "darse/lowrank.hpp"
#include "darse/search.hpp"

namespace darse {

struct OracleResult {
  RankVector best;
  double metric = 0.0;
  long long evaluated_count = 0;
};

/// Every rank in [r_min, min(r_max, max rank)] for each layer.
inline std::vector<std::vector<int>> full_candidate_sets(std::span<const LayerSpec> layers,
                                                         const RankSpace& space) {
  std::vector<std::vector<int>> sets;
  for (const auto& l : layers) {
    std::vector<int> s;
    for (int r = space.r_min; r <= space.layer_cap(l); ++r) s.push_back(r);
    sets.push_back(std::move(s));
  }
  return sets;
}

struct BruteForceOptions {
  double cap = 1e6;  // refuse enumerations larger than this
  int jobs = 0;
};

namespace detail {

inline double combination_count(const std::vector<std::vector<int>>& sets) {
  double product = 1.0;
  for (const auto& s : sets) product *= static_cast<double>(s.size());
  return product;
}

inline std::vector<std::vector<int>> normalized_sets(std::span<const LayerSpec> layers,
                                                     std::span<const std::vector<int>> sets) {
  if (sets.size() != layers.size()) {
    throw InvalidInput("oracle: " + std::to_string(sets.size()) + " candidate sets for " +
                       std::to_string(layers.size()) + " layers");
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::vector<int> s = sets[i];
    if (s.empty()) throw InvalidInput("oracle: empty candidate set for layer " + std::to_string(i));
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.front() < 0 || s.back() > layers[i].max_rank()) {
      throw InvalidRank("oracle: candidate outside [0, " +
                        std::to_string(layers[i].max_rank()) + "] for layer " +
                        std::to_string(i));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline long long minimal_weight(std::span<const LayerSpec> layers,
                                const std::vector<std::vector<int>>& sets) {
  long long w = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    w += static_cast<long long>(sets[i].front()) * (layers[i].rows + layers[i].cols);
  }
  return w;
}

}  // namespace detail

/// Exhaustive argmin over the Cartesian product of per-layer candidates,
/// skipping combinations over the parameter budget. Enumeration is
/// lexicographic (layer 0 outermost, ranks ascending).
inline OracleResult brute_force_search(const ObjectiveEvaluator& eval,
                                       std::span<const LayerSpec> layers,
                                       std::span<const std::vector<int>> candidate_sets,
                                       std::optional<long long> param_budget = std::nullopt,
                                       const BruteForceOptions& opts = {}) {
  validate_layers(layers);
  if (eval.layer_count() != layers.size()) {
    throw InvalidInput("brute_force_search: evaluator/layer count mismatch");
  }
  const auto sets = detail::normalized_sets(layers, candidate_sets);
  const double count = detail::combination_count(sets);
  if (count > opts.cap) {
    throw CapExceeded("brute_force_search: " + std::to_string(static_cast<long double>(count)) +
                          " combinations exceed the cap of " +
                          std::to_string(static_cast<long double>(opts.cap)),
                      count);
  }
  if (param_budget) {
    const long long w = detail::minimal_weight(layers, sets);
    if (w > *param_budget) {
      throw Infeasible("brute_force_search: minimal achievable weight " + std::to_string(w) +
                           " exceeds the budget " + std::to_string(*param_budget),
                       w);
    }
  }

  struct Partial {
    std::optional<RankVector> best;
    double metric = 0.0;
    long long evaluated = 0;
    std::exception_ptr error;
  };

  // Enumerates every combination whose layer-0 rank is sets[0][outer].
  auto enumerate_outer = [&](std::size_t outer, Partial& acc) {
    const std::size_t n = sets.size();
    std::vector<std::size_t> idx(n, 0);
    idx[0] = outer;
    RankVector r{std::vector<int>(n)};
    while (true) {
      for (std::size_t i = 0; i < n; ++i) r[i] = sets[i][idx[i]];
      if (!param_budget || param_count(r, layers) <= *param_budget) {
        const double m = checked_evaluate(eval, r);
        ++acc.evaluated;
        if (!acc.best || preferred(m, r, acc.metric, *acc.best)) {
          acc.best = r;
          acc.metric = m;
        }
      }
      std::size_t k = n - 1;
      while (k >= 1) {
        if (++idx[k] < sets[k].size()) break;
        idx[k] = 0;
        --k;
      }
      if (k == 0) return;
    }
  };

  const std::size_t outer_count = sets[0].size();
  std::vector<Partial> partials(outer_count);
  auto run = [&](std::size_t outer) {
    try {
      enumerate_outer(outer, partials[outer]);
    } catch (...) {
      partials[outer].error = std::current_exception();
    }
  };
  const std::size_t workers =
      (opts.jobs > 1 && eval.concurrent_safe())
          ? std::min<std::size_t>(static_cast<std::size_t>(opts.jobs), outer_count)
          : 1;
  if (workers <= 1) {
    for (std::size_t o = 0; o < outer_count; ++o) run(o);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t o = next++; o < outer_count; o = next++) run(o);
      });
    }
    for (auto& th : pool) th.join();
  }

  OracleResult out;
  bool have = false;
  for (auto& p : partials) {
    if (p.error) std::rethrow_exception(p.error);
    out.evaluated_count += p.evaluated;
    if (p.best && (!have || preferred(p.metric, *p.best, out.metric, out.best))) {
      out.best = *p.best;
      out.metric = p.metric;
      have = true;
    }
  }
  if (!have) {
    throw Infeasible("brute_force_search: no combination fits the budget",
                     detail::minimal_weight(layers, sets));
  }
  return out;
}

/// One selectable rank for a layer in the separable dynamic program.
struct LayerOption {
  int rank = 0;
  double cost = 0.0;     // contribution to the metric
  long long weight = 0;  // contribution to the budgeted total
};

/// Exact minimizer of Σ_i cost_i(r_i) subject to Σ_i weight_i(r_i) ≤ budget.
/// Table over (layer, exact weight used); weights are integers so no
/// discretization is involved. Costs accumulate left to right from 0.0, which
/// reproduces a separable evaluator's sum bit for bit. An absent budget
/// leaves the constraint inactive.
inline OracleResult dp_separable_search(
    std::span<const std::vector<LayerOption>> per_layer,
    std::optional<long long> budget = std::nullopt) {
  const std::size_t n = per_layer.size();
  if (n == 0) throw InvalidInput("dp_separable_search: no layers");
  long long min_total = 0;
  long long max_total = 0;
  long long g = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (per_layer[i].empty()) {
      throw InvalidInput("dp_separable_search: layer " + std::to_string(i) + " has no options");
    }
    long long lo = std::numeric_limits<long long>::max();
    long long hi = 0;
    for (const auto& o : per_layer[i]) {
      if (!std::isfinite(o.cost)) throw InvalidInput("dp_separable_search: non-finite cost");
      if (o.weight < 0) throw InvalidInput("dp_separable_search: negative weight");
      lo = std::min(lo, o.weight);
      hi = std::max(hi, o.weight);
      g = std::gcd(g, o.weight);
    }
    min_total += lo;
    max_total += hi;
  }
  if (budget && min_total > *budget) {
    throw Infeasible("dp_separable_search: minimal achievable weight " +
                         std::to_string(min_total) + " exceeds the budget " +
                         std::to_string(*budget),
                     min_total);
  }
  if (g == 0) g = 1;
  const long long limit = budget ? std::min(*budget, max_total) : max_total;
  const auto cells = static_cast<std::size_t>(limit / g) + 1;
  constexpr double kUnset = std::numeric_limits<double>::infinity();

  // choice[l][w]: option index used at layer l to reach reduced weight w.
  std::vector<std::vector<int>> choice(n, std::vector<int>(cells, -1));
  std::vector<double> value(cells, kUnset), next_value(cells);
  std::vector<long long> rank_sum(cells, 0), next_rank_sum(cells);
  long long transitions = 0;

  auto prefix = [&](std::size_t layer, std::size_t w) {
    std::vector<int> ranks(layer + 1);
    for (std::size_t l = layer + 1; l-- > 0;) {
      const auto& o = per_layer[l][static_cast<std::size_t>(choice[l][w])];
      ranks[l] = o.rank;
      w -= static_cast<std::size_t>(o.weight / g);
    }
    return ranks;
  };
  // Prefix ending with option `opt` at layer `layer` from state `from`.
  auto candidate_prefix = [&](std::size_t layer, std::size_t from, int rank) {
    std::vector<int> ranks;
    if (layer > 0) ranks = prefix(layer - 1, from);
    ranks.push_back(rank);
    return ranks;
  };

  for (std::size_t l = 0; l < n; ++l) {
    std::fill(next_value.begin(), next_value.end(), kUnset);
    for (std::size_t w = 0; w < cells; ++w) {
      if (l > 0 && value[w] == kUnset) continue;
      if (l == 0 && w != 0) break;
      const double base = l == 0 ? 0.0 : value[w];
      const long long base_ranks = l == 0 ? 0 : rank_sum[w];
      for (std::size_t k = 0; k < per_layer[l].size(); ++k) {
        const auto& o = per_layer[l][k];
        const std::size_t to = w + static_cast<std::size_t>(o.weight / g);
        if (to >= cells) continue;
        ++transitions;
        const double v = base + o.cost;
        const long long rs = base_ranks + o.rank;
        bool take = next_value[to] == kUnset || v < next_value[to] ||
                    (v == next_value[to] && rs < next_rank_sum[to]);
        if (!take && v == next_value[to] && rs == next_rank_sum[to]) {
          take = candidate_prefix(l, w, o.rank) < prefix(l, to);
        }
        if (take) {
          next_value[to] = v;
          next_rank_sum[to] = rs;
          choice[l][to] = static_cast<int>(k);
        }
      }
    }
    value.swap(next_value);
    rank_sum.swap(next_rank_sum);
  }

  std::optional<std::size_t> best_w;
  for (std::size_t w = 0; w < cells; ++w) {
    if (value[w] == kUnset) continue;
    if (!best_w) {
      best_w = w;
      continue;
    }
    const std::size_t b = *best_w;
    if (value[w] < value[b] ||
        (value[w] == value[b] &&
         (rank_sum[w] < rank_sum[b] ||
          (rank_sum[w] == rank_sum[b] && prefix(n - 1, w) < prefix(n - 1, b))))) {
      best_w = w;
    }
  }
  if (!best_w) {
    throw Infeasible("dp_separable_search: no assignment fits the budget", min_total);
  }
  return {RankVector(prefix(n - 1, *best_w)), value[*best_w], std::max(1LL, transitions)};
}

/// Options for a separable objective with parameter weights r (m + n).
inline std::vector<std::vector<LayerOption>> parameter_options(
    const SeparableObjective& eval, std::span<const LayerSpec> layers,
    std::span<const std::vector<int>> candidate_sets) {
  const auto sets = detail::normalized_sets(layers, candidate_sets);
  std::vector<std::vector<LayerOption>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (int r : sets[i]) {
      out[i].push_back({r, eval.layer_cost(i, r),
                        static_cast<long long>(r) * (layers[i].rows + layers[i].cols)});
    }
  }
  return out;
}

/// Options whose weight is the rank itself, for totals of the form Σ r_i ≤ B.
inline std::vector<std::vector<LayerOption>> rank_options(
    const SeparableObjective& eval, std::span<const LayerSpec> layers,
    std::span<const std::vector<int>> candidate_sets) {
  auto out = parameter_options(eval, layers, candidate_sets);
  for (auto& layer : out)
    for (auto& o : layer) o.weight = o.rank;
  return out;
}

}  // namespace darse
