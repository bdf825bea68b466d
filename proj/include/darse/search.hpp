#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "darse/error.hpp"
#include "darse/evaluator.hpp"
#include "darse/lowrank.hpp"

namespace darse {

enum class Phase { seed, coarse, fine };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::seed: return "seed";
    case Phase::coarse: return "coarse";
    case Phase::fine: return "fine";
  }
  return "unknown";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "seed") return Phase::seed;
  if (s == "coarse") return Phase::coarse;
  if (s == "fine") return Phase::fine;
  throw InvalidInput("unknown phase '" + s + "'");
}

struct HistoryEntry {
  RankVector rank_vector;
  double metric = 0.0;
  Phase phase = Phase::seed;
  int iteration = 0;
  long long evaluation_index = 0;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

using HistorySink = std::function<void(const HistoryEntry&)>;

/// Append-only record of every evaluator call made during a search.
class ExplorationHistory {
 public:
  ExplorationHistory() = default;
  explicit ExplorationHistory(HistorySink sink) : sink_(std::move(sink)) {}

  const HistoryEntry& append(RankVector r, double metric, Phase phase, int iteration) {
    const long long index =
        entries_.empty() ? 0 : entries_.back().evaluation_index + 1;
    entries_.push_back({std::move(r), metric, phase, iteration, index});
    if (sink_) sink_(entries_.back());
    return entries_.back();
  }

  /// Appends a previously recorded entry, e.g. when reloading a history file.
  void restore(HistoryEntry e) {
    if (!entries_.empty() && e.evaluation_index <= entries_.back().evaluation_index) {
      throw InvalidInput("history: evaluation_index must be strictly increasing");
    }
    entries_.push_back(std::move(e));
  }

  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  const std::vector<HistoryEntry>& entries() const noexcept { return entries_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Argmin over all entries under the shared tie-break rule.
  const HistoryEntry& best() const {
    if (entries_.empty()) throw InvalidInput("history: no entries");
    const HistoryEntry* b = &entries_.front();
    for (const auto& e : entries_) {
      if (preferred(e.metric, e.rank_vector, b->metric, b->rank_vector)) b = &e;
    }
    return *b;
  }

 private:
  std::vector<HistoryEntry> entries_;
  std::vector<std::string> warnings_;
  HistorySink sink_;
};

enum class CandidateMode { grid, arithmetic };

/// Discrete feasible ranks plus the knobs of both search phases.
struct RankSpace {
  int r_min = 1;
  int r_max = 8;
  std::vector<int> coarse_grid;  // used in grid mode
  int fine_delta = 2;            // Δr
  int r_step = 1;                // used in arithmetic mode
  CandidateMode mode = CandidateMode::grid;

  /// Powers of two in [max(1, r_min), r_max] together with positive multiples
  /// of 128 in [r_min, r_max], sorted and deduplicated.
  static std::vector<int> default_grid(int r_min, int r_max) {
    std::vector<int> g;
    for (long long p = 1; p <= r_max; p *= 2) {
      if (p >= std::max(1, r_min)) g.push_back(static_cast<int>(p));
    }
    for (long long m = 128; m <= r_max; m += 128) {
      if (m >= r_min) g.push_back(static_cast<int>(m));
    }
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    if (g.empty()) g.push_back(r_min);
    return g;
  }

  static RankSpace with_default_grid(int r_min, int r_max, int fine_delta = 2) {
    RankSpace s;
    s.r_min = r_min;
    s.r_max = r_max;
    s.coarse_grid = default_grid(r_min, r_max);
    s.fine_delta = fine_delta;
    return s;
  }

  void validate() const {
    if (r_min < 0) throw InvalidInput("rank space: r_min must be >= 0");
    if (r_max < r_min) throw InvalidInput("rank space: r_max must be >= r_min");
    if (fine_delta < 1) throw InvalidInput("rank space: fine_delta must be >= 1");
    if (r_step < 1) throw InvalidInput("rank space: r_step must be >= 1");
    if (mode == CandidateMode::grid) {
      if (coarse_grid.empty()) throw InvalidInput("rank space: coarse grid is empty");
      for (std::size_t i = 0; i < coarse_grid.size(); ++i) {
        if (coarse_grid[i] < r_min || coarse_grid[i] > r_max) {
          throw InvalidInput("rank space: grid value " + std::to_string(coarse_grid[i]) +
                             " outside [r_min, r_max]");
        }
        if (i > 0 && coarse_grid[i] <= coarse_grid[i - 1]) {
          throw InvalidInput("rank space: coarse grid must be strictly increasing");
        }
      }
    }
  }

  /// Coarse-phase candidate ranks before per-layer capping.
  std::vector<int> coarse_candidates() const {
    if (mode == CandidateMode::grid) return coarse_grid;
    std::vector<int> c;
    for (long long r = r_min; r <= r_max; r += r_step) c.push_back(static_cast<int>(r));
    return c;
  }

  /// Highest rank layer `l` may take.
  int layer_cap(const LayerSpec& l) const { return std::min(r_max, l.max_rank()); }
};

enum class SweepOrder { ascending, descending, permuted };
enum class TieBreak { smaller_rank };

struct SearchConfig {
  double epsilon = 0.0;  // minimum outer-iteration improvement to continue
  int max_iter = 10;
  std::optional<long long> param_budget;  // Σ r_i (m_i + n_i) ≤ B when set
  TieBreak tie_break = TieBreak::smaller_rank;
  SweepOrder sweep_order = SweepOrder::ascending;
  std::uint64_t order_seed = 0;  // permutation seed for SweepOrder::permuted
  bool memoize = true;
  int jobs = 0;  // 0 or 1: sequential evaluation

  void validate() const {
    if (std::isnan(epsilon)) throw InvalidInput("search: epsilon must not be NaN");
    if (max_iter < 1) throw InvalidInput("search: max_iter must be >= 1");
    if (param_budget && *param_budget < 1) {
      throw InvalidInput("search: param_budget must be positive");
    }
    if (jobs < 0) throw InvalidInput("search: jobs must be >= 0");
  }
};

enum class StopDecision { continue_search, halt };

/// Halt iff the improvement prev_best − new_best falls below ε.
inline StopDecision stop_decision(double prev_best, double new_best,
                                  const SearchConfig& cfg) {
  return (prev_best - new_best) < cfg.epsilon ? StopDecision::halt
                                              : StopDecision::continue_search;
}

/// Outcome of one search phase.
struct PhaseResult {
  RankVector ranks;
  double metric = 0.0;
  int iterations = 0;
  long long evaluations = 0;  // evaluator calls made during the phase
};

namespace detail {

/// Evaluation front-end shared by both phases: memoizes through the history,
/// fans candidate batches out to worker threads when allowed, and appends
/// results to the history in candidate order.
class SearchSession {
 public:
  SearchSession(const ObjectiveEvaluator& eval, std::span<const LayerSpec> layers,
                const SearchConfig& cfg, ExplorationHistory& history)
      : eval_(eval), layers_(layers), cfg_(cfg), history_(history) {
    validate_layers(layers_);
    cfg_.validate();
    if (eval_.layer_count() != layers_.size()) {
      throw InvalidInput("search: evaluator expects " + std::to_string(eval_.layer_count()) +
                         " layers, got " + std::to_string(layers_.size()));
    }
    if (cfg_.memoize) {
      for (const auto& e : history_.entries()) cache_.emplace(e.rank_vector, e.metric);
    }
  }

  bool feasible(const RankVector& r) const {
    return !cfg_.param_budget || param_count(r, layers_) <= *cfg_.param_budget;
  }

  double evaluate(const RankVector& r, Phase phase, int iteration) {
    return evaluate_batch(std::span<const RankVector>(&r, 1), phase, iteration).front();
  }

  std::vector<double> evaluate_batch(std::span<const RankVector> batch, Phase phase,
                                     int iteration) {
    std::vector<double> out(batch.size());
    std::vector<std::size_t> pending;
    std::map<RankVector, std::size_t> first_pending;
    std::vector<std::ptrdiff_t> alias(batch.size(), -1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (cfg_.memoize) {
        if (auto it = cache_.find(batch[i]); it != cache_.end()) {
          out[i] = it->second;
          continue;
        }
        if (auto it = first_pending.find(batch[i]); it != first_pending.end()) {
          alias[i] = static_cast<std::ptrdiff_t>(it->second);
          continue;
        }
        first_pending.emplace(batch[i], i);
      }
      pending.push_back(i);
    }

    std::vector<std::exception_ptr> errors(batch.size());
    auto work = [&](std::size_t i) {
      try {
        out[i] = checked_evaluate(eval_, batch[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    const std::size_t workers =
        (cfg_.jobs > 1 && eval_.concurrent_safe())
            ? std::min<std::size_t>(static_cast<std::size_t>(cfg_.jobs), pending.size())
            : 1;
    if (workers <= 1) {
      for (std::size_t i : pending) work(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < pending.size(); k = next++) work(pending[k]);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Merge in candidate order; the first failure in that order wins.
    for (std::size_t i : pending) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      history_.append(batch[i], out[i], phase, iteration);
      if (cfg_.memoize) cache_.emplace(batch[i], out[i]);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (alias[i] >= 0) out[i] = out[static_cast<std::size_t>(alias[i])];
    }
    return out;
  }

  std::vector<std::size_t> layer_order() const {
    std::vector<std::size_t> order(layers_.size());
    std::iota(order.begin(), order.end(), 0);
    switch (cfg_.sweep_order) {
      case SweepOrder::ascending: break;
      case SweepOrder::descending: std::reverse(order.begin(), order.end()); break;
      case SweepOrder::permuted: {
        std::mt19937_64 rng(cfg_.order_seed);
        std::shuffle(order.begin(), order.end(), rng);
        break;
      }
    }
    return order;
  }

  std::span<const LayerSpec> layers() const { return layers_; }
  const SearchConfig& config() const { return cfg_; }
  ExplorationHistory& history() { return history_; }

 private:
  const ObjectiveEvaluator& eval_;
  std::span<const LayerSpec> layers_;
  SearchConfig cfg_;
  ExplorationHistory& history_;
  std::map<RankVector, double> cache_;
};

/// Greedy coordinate sweeps shared by both phases. `candidates(i)` lists the
/// ranks layer i may take (ascending). The incumbent value of each layer is
/// kept unless a candidate is preferred over it, so metrics never increase.
template <typename CandidateFn>
PhaseResult greedy_sweeps(SearchSession& session, RankVector start, Phase phase,
                          Phase start_phase, CandidateFn&& candidates) {
  const auto layers = session.layers();
  const SearchConfig& cfg = session.config();
  if (!session.feasible(start)) {
    throw Infeasible("search: starting vector " + start.to_string() + " needs " +
                         std::to_string(param_count(start, layers)) +
                         " parameters, over the budget of " +
                         std::to_string(*cfg.param_budget),
                     param_count(start, layers));
  }
  const std::size_t before = session.history().size();
  PhaseResult res{std::move(start), 0.0, 0, 0};
  res.metric = session.evaluate(res.ranks, start_phase, 0);
  const auto order = session.layer_order();

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    res.iterations = iter;
    const double prev = res.metric;
    bool changed = false;
    for (std::size_t i : order) {
      std::vector<RankVector> trial;
      bool any_candidate = false;
      for (int c : candidates(i)) {
        if (c == res.ranks[i]) continue;
        any_candidate = true;
        RankVector r = res.ranks;
        r[i] = c;
        if (session.feasible(r)) trial.push_back(std::move(r));
      }
      if (any_candidate && trial.empty()) {
        session.history().add_warning(
            std::string("budget-saturated: ") + to_string(phase) + " iteration " +
            std::to_string(iter) + " layer " + std::to_string(i) + " keeps rank " +
            std::to_string(res.ranks[i]) + ": every other candidate exceeds the budget");
        continue;
      }
      if (trial.empty()) continue;
      const auto metrics = session.evaluate_batch(trial, phase, iter);
      std::size_t pick = trial.size();
      double best_metric = res.metric;
      const RankVector* best_vec = &res.ranks;
      for (std::size_t k = 0; k < trial.size(); ++k) {
        if (preferred(metrics[k], trial[k], best_metric, *best_vec)) {
          pick = k;
          best_metric = metrics[k];
          best_vec = &trial[k];
        }
      }
      if (pick != trial.size()) {
        res.ranks = trial[pick];
        res.metric = best_metric;
        changed = true;
      }
    }
    if (!changed) break;
    if (stop_decision(prev, res.metric, cfg) == StopDecision::halt) break;
  }
  res.evaluations = static_cast<long long>(session.history().size() - before);
  return res;
}

}  // namespace detail

/// Coarse phase: start every layer at r_min, then sweep layers, trying every
/// coarse candidate (capped per layer) with the other layers fixed.
inline PhaseResult coarse_search(const ObjectiveEvaluator& eval,
                                 std::span<const LayerSpec> layers, const RankSpace& space,
                                 const SearchConfig& cfg, ExplorationHistory& history) {
  space.validate();
  detail::SearchSession session(eval, layers, cfg, history);
  RankVector start(std::vector<int>(layers.size(), space.r_min));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (space.r_min > layers[i].max_rank()) {
      throw InvalidInput("search: r_min " + std::to_string(space.r_min) +
                         " exceeds the maximum rank of layer " + std::to_string(i));
    }
  }
  const auto grid = space.coarse_candidates();
  return detail::greedy_sweeps(session, std::move(start), Phase::coarse, Phase::seed,
                               [&](std::size_t i) {
                                 std::vector<int> c;
                                 const int cap = space.layer_cap(layers[i]);
                                 for (int r : grid) {
                                   if (r >= space.r_min && r <= cap) c.push_back(r);
                                 }
                                 return c;
                               });
}

/// Fine phase: per layer, unit steps over [coarse_i − Δr, coarse_i + Δr]
/// clamped to [r_min, min(r_max, max rank)].
inline PhaseResult fine_search(const ObjectiveEvaluator& eval,
                               std::span<const LayerSpec> layers, const RankVector& coarse,
                               const RankSpace& space, const SearchConfig& cfg,
                               ExplorationHistory& history) {
  space.validate();
  detail::SearchSession session(eval, layers, cfg, history);
  if (coarse.size() != layers.size()) {
    throw InvalidInput("fine_search: coarse vector " + coarse.to_string() +
                       " has wrong length");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (coarse[i] < space.r_min || coarse[i] > space.layer_cap(layers[i])) {
      throw InvalidRank("fine_search: coarse rank " + std::to_string(coarse[i]) +
                        " of layer " + std::to_string(i) + " outside the rank space");
    }
  }
  return detail::greedy_sweeps(session, coarse, Phase::fine, Phase::fine, [&](std::size_t i) {
    const int lo = std::max(space.r_min, coarse[i] - space.fine_delta);
    const int hi = std::min(space.layer_cap(layers[i]), coarse[i] + space.fine_delta);
    std::vector<int> c;
    for (int r = lo; r <= hi; ++r) c.push_back(r);
    return c;
  });
}

struct ExploreResult {
  RankVector best;
  double metric = 0.0;
  ExplorationHistory history;
  PhaseResult coarse;
  PhaseResult fine;
};

/// Coarse then fine phase over one shared history; the answer is the argmin
/// over every evaluated vector, which need not be the fine phase's endpoint.
inline ExploreResult explore(const ObjectiveEvaluator& eval, std::span<const LayerSpec> layers,
                             const RankSpace& space, const SearchConfig& cfg,
                             HistorySink sink = {}) {
  ExploreResult out{{}, 0.0, ExplorationHistory(std::move(sink)), {}, {}};
  out.coarse = coarse_search(eval, layers, space, cfg, out.history);
  out.fine = fine_search(eval, layers, out.coarse.ranks, space, cfg, out.history);
  const HistoryEntry& b = out.history.best();
  out.best = b.rank_vector;
  out.metric = b.metric;
  return out;
}

}  // namespace darse
