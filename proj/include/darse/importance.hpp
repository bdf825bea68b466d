#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "darse/error.hpp"
#include "darse/lowrank.hpp"
#include "darse/matrix.hpp"

namespace darse {

/// Σ σ_j² over the full spectrum of `m`.
inline double importance_score(const Matrix& m) {
  require_finite(m, "importance_score");
  return svd(m).spectrum.total_energy();
}

namespace detail {

// Floors x, treating values within a relative 1e-9 below an integer as that
// integer so that exact proportional splits survive rounding in I_i / ΣI.
inline long long snapped_floor(double x) {
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<long long>(nearest);
  }
  return static_cast<long long>(std::floor(x));
}

inline double importance_sum(std::span<const double> importances) {
  if (importances.empty()) throw InvalidInput("allocate_ranks: no importances");
  double total = 0.0;
  for (double v : importances) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidInput("allocate_ranks: importances must be finite and >= 0");
    }
    total += v;
  }
  if (total <= 0.0) {
    throw DegenerateInput("allocate_ranks: all importances are zero");
  }
  return total;
}

}  // namespace detail

/// floor(I_i / ΣI · rank_budget) for every layer, before any per-layer cap.
inline RankVector proportional_ranks(std::span<const double> importances,
                                     int rank_budget) {
  if (rank_budget < 1) throw InvalidInput("allocate_ranks: rank budget must be >= 1");
  const double total = detail::importance_sum(importances);
  std::vector<int> ranks;
  ranks.reserve(importances.size());
  for (double v : importances) {
    ranks.push_back(static_cast<int>(
        detail::snapped_floor(v / total * static_cast<double>(rank_budget))));
  }
  return RankVector(std::move(ranks));
}

/// Importance-proportional ranks, clamped to [0, caps_i].
inline RankVector allocate_ranks(std::span<const double> importances, int rank_budget,
                                 std::span<const int> caps) {
  if (caps.size() != importances.size()) {
    throw InvalidInput("allocate_ranks: " + std::to_string(caps.size()) +
                       " caps for " + std::to_string(importances.size()) + " layers");
  }
  RankVector r = proportional_ranks(importances, rank_budget);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (caps[i] < 0) throw InvalidInput("allocate_ranks: negative cap");
    r[i] = std::clamp(r[i], 0, caps[i]);
  }
  return r;
}

struct FitConfig {
  double reg_strength = 0.0;   // λ
  double step_size = 1e-2;     // initial learning rate
  int max_steps = 1000;
  double stop_tolerance = 1e-12;  // absolute loss decrease on an accepted step

  void validate() const {
    if (!std::isfinite(reg_strength) || reg_strength < 0.0)
      throw InvalidInput("fit: reg_strength must be >= 0");
    if (!std::isfinite(step_size) || step_size <= 0.0)
      throw InvalidInput("fit: step_size must be > 0");
    if (max_steps < 1) throw InvalidInput("fit: max_steps must be >= 1");
    if (!std::isfinite(stop_tolerance) || stop_tolerance < 0.0)
      throw InvalidInput("fit: stop_tolerance must be >= 0");
  }
};

struct FitResult {
  LowRankFactors factors;
  double final_loss = 0.0;
  int steps = 0;  // gradient steps attempted, accepted or not
};

struct FitGradient {
  Matrix du;
  Matrix dv;
};

/// ‖base + u·vᵀ − target‖_F² + λ(‖u‖_F² + ‖v‖_F²).
inline double fit_objective(const Matrix& base, const Matrix& target,
                            const LowRankFactors& f, double reg_strength) {
  Matrix residual = base - target;
  if (f.rank() > 0) residual = residual + f.product();
  return frobenius_norm_squared(residual) +
         reg_strength * (frobenius_norm_squared(f.u) + frobenius_norm_squared(f.v));
}

/// Analytic gradient of fit_objective: 2·E·v + 2λu and 2·Eᵀ·u + 2λv with
/// E = base + u·vᵀ − target.
inline FitGradient fit_gradient(const Matrix& base, const Matrix& target,
                                const LowRankFactors& f, double reg_strength) {
  Matrix residual = base - target;
  if (f.rank() > 0) residual = residual + f.product();
  FitGradient g{2.0 * multiply(residual, f.v), 2.0 * transposed_multiply(residual, f.u)};
  if (reg_strength != 0.0) {
    g.du = g.du + (2.0 * reg_strength) * f.u;
    g.dv = g.dv + (2.0 * reg_strength) * f.v;
  }
  return g;
}

/// Gradient descent on fit_objective from a seeded uniform(±0.01) start.
/// A step that increases the loss is rejected and the step size halved, so the
/// loss is non-increasing over accepted steps.
inline FitResult fit_low_rank(const Matrix& base, const Matrix& target, int rank,
                              const FitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_same_shape(base, target, "fit_low_rank");
  require_finite(base, "fit_low_rank");
  require_finite(target, "fit_low_rank");
  const std::size_t m = base.rows();
  const std::size_t n = base.cols();
  if (rank < 0 || static_cast<std::size_t>(rank) > std::min(m, n)) {
    throw InvalidRank("fit_low_rank: rank " + std::to_string(rank) + " outside [0, " +
                      std::to_string(std::min(m, n)) + "]");
  }

  FitResult result{LowRankFactors::zero(m, n), 0.0, 0};
  if (rank == 0) {
    result.final_loss = fit_objective(base, target, result.factors, cfg.reg_strength);
    return result;
  }

  std::mt19937_64 rng(seed);
  LowRankFactors f{Matrix::uniform(m, rank, rng, -0.01, 0.01),
                   Matrix::uniform(n, rank, rng, -0.01, 0.01)};
  double loss = fit_objective(base, target, f, cfg.reg_strength);
  double lr = cfg.step_size;

  int step = 0;
  while (step < cfg.max_steps) {
    ++step;
    const FitGradient g = fit_gradient(base, target, f, cfg.reg_strength);
    LowRankFactors trial{f.u - lr * g.du, f.v - lr * g.dv};
    const double trial_loss = fit_objective(base, target, trial, cfg.reg_strength);
    if (!std::isfinite(trial_loss)) {
      throw NumericFailure("fit_low_rank: loss became non-finite at step " +
                           std::to_string(step));
    }
    if (trial_loss <= loss) {
      const double decrease = loss - trial_loss;
      f = std::move(trial);
      loss = trial_loss;
      if (decrease < cfg.stop_tolerance) break;
    } else {
      lr *= 0.5;
      if (lr < 1e-300) break;
    }
  }
  result.factors = std::move(f);
  result.final_loss = loss;
  result.steps = step;
  return result;
}

}  // namespace darse
