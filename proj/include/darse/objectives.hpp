#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "darse/error.hpp"
#include "darse/evaluator.hpp"
#include "darse/importance.hpp"
#include "darse/lowrank.hpp"

namespace darse {

/// metric(r) = Σ_i Σ_{j > r_i} σ_j^(i)²: the exact minimal reconstruction
/// energy when layer i is truncated to rank r_i. Closed form, separable, and
/// non-increasing in every coordinate.
class SpectralTailObjective final : public SeparableObjective {
 public:
  explicit SpectralTailObjective(std::vector<Spectrum> spectra)
      : spectra_(std::move(spectra)) {
    if (spectra_.empty()) throw InvalidInput("spectral tail objective: no spectra");
  }

  double layer_cost(std::size_t layer, int rank) const override {
    const Spectrum& s = spectra_.at(layer);
    if (rank < 0 || static_cast<std::size_t>(rank) > s.size()) {
      throw InvalidRank("spectral tail objective: rank " + std::to_string(rank) +
                        " outside [0, " + std::to_string(s.size()) + "] for layer " +
                        std::to_string(layer));
    }
    return s.tail_energy(static_cast<std::size_t>(rank));
  }

  double evaluate(const RankVector& r) const override {
    if (r.size() != spectra_.size()) {
      throw InvalidInput("spectral tail objective: rank vector " + r.to_string() +
                         " has wrong length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) total += layer_cost(i, r[i]);
    return total;
  }

  bool concurrent_safe() const override { return true; }
  std::size_t layer_count() const override { return spectra_.size(); }

  const std::vector<Spectrum>& spectra() const { return spectra_; }

 private:
  std::vector<Spectrum> spectra_;
};

/// Spectra with σ_j = scale · decay^j, j = 0..k-1.
inline Spectrum geometric_spectrum(std::size_t k, double scale, double decay) {
  if (!(scale >= 0.0) || !(decay > 0.0 && decay <= 1.0)) {
    throw InvalidInput("geometric spectrum needs scale >= 0 and decay in (0, 1]");
  }
  std::vector<double> values(k);
  double v = scale;
  for (auto& x : values) {
    x = v;
    v *= decay;
  }
  return Spectrum(std::move(values));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Runs the regularized low-rank fitter per layer; metric is the sum of final
/// fit objectives. Each layer uses its own seed stream derived from `seed`.
class MatrixFitObjective final : public SeparableObjective {
 public:
  MatrixFitObjective(std::vector<Matrix> bases, std::vector<Matrix> targets,
                     FitConfig cfg, std::uint64_t seed)
      : bases_(std::move(bases)), targets_(std::move(targets)), cfg_(cfg), seed_(seed) {
    if (bases_.empty()) throw InvalidInput("matrix fit objective: no layers");
    if (bases_.size() != targets_.size()) {
      throw InvalidInput("matrix fit objective: " + std::to_string(bases_.size()) +
                         " bases but " + std::to_string(targets_.size()) + " targets");
    }
    for (std::size_t i = 0; i < bases_.size(); ++i) {
      require_same_shape(bases_[i], targets_[i], "matrix fit objective");
      require_finite(bases_[i], "matrix fit objective");
      require_finite(targets_[i], "matrix fit objective");
    }
    cfg_.validate();
  }

  double layer_cost(std::size_t layer, int rank) const override {
    return fit_low_rank(bases_.at(layer), targets_.at(layer), rank, cfg_,
                        mix_seed(seed_, layer))
        .final_loss;
  }

  double evaluate(const RankVector& r) const override {
    if (r.size() != bases_.size()) {
      throw InvalidInput("matrix fit objective: rank vector " + r.to_string() +
                         " has wrong length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) total += layer_cost(i, r[i]);
    return total;
  }

  bool concurrent_safe() const override { return true; }
  std::size_t layer_count() const override { return bases_.size(); }

  const std::vector<Matrix>& bases() const { return bases_; }
  const std::vector<Matrix>& targets() const { return targets_; }

 private:
  std::vector<Matrix> bases_;
  std::vector<Matrix> targets_;
  FitConfig cfg_;
  std::uint64_t seed_;
};

}  // namespace darse
