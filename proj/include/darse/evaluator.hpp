#pragma once

#include <cmath>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "darse/error.hpp"
#include "darse/lowrank.hpp"

namespace darse {

/// Stand-in for "fine-tune under rank vector r, then measure the error on the
/// task data". Lower metric is better.
///
/// Implementations must be deterministic per instance: the same rank vector
/// always yields the same metric. The search engine relies on this when it
/// memoizes results. An evaluator that returns true from concurrent_safe() may
/// have evaluate() invoked from several threads at once.
class ObjectiveEvaluator {
 public:
  virtual ~ObjectiveEvaluator() = default;

  virtual double evaluate(const RankVector& r) const = 0;

  virtual bool concurrent_safe() const { return false; }

  /// Number of layers the evaluator expects.
  virtual std::size_t layer_count() const = 0;
};

/// Per-layer additive objectives expose their per-layer terms so that exact
/// dynamic-programming oracles can consume them. evaluate(r) must equal the
/// left-to-right sum of layer_cost(i, r_i), starting from 0.0.
class SeparableObjective : public ObjectiveEvaluator {
 public:
  virtual double layer_cost(std::size_t layer, int rank) const = 0;
};

/// Calls `eval` and converts failures into EvaluationError carrying `r`.
inline double checked_evaluate(const ObjectiveEvaluator& eval, const RankVector& r) {
  double metric = 0.0;
  try {
    metric = eval.evaluate(r);
  } catch (const EvaluationError&) {
    throw;
  } catch (const Error& e) {
    throw EvaluationError("evaluation of " + r.to_string() + " failed: " + e.what(),
                          r.ranks, e.kind());
  } catch (const std::exception& e) {
    throw EvaluationError("evaluation of " + r.to_string() + " failed: " + e.what(),
                          r.ranks);
  }
  if (!std::isfinite(metric)) {
    throw EvaluationError("evaluation of " + r.to_string() + " returned non-finite metric",
                          r.ranks, ErrorKind::numeric_failure);
  }
  return metric;
}

/// Returns predetermined metrics from a lookup table; useful for driving the
/// search engine through known landscapes.
class ScriptedObjective final : public ObjectiveEvaluator {
 public:
  ScriptedObjective(std::size_t layers, std::map<RankVector, double> table,
                    std::optional<double> fallback = std::nullopt)
      : layers_(layers), table_(std::move(table)), fallback_(fallback) {
    for (const auto& [r, metric] : table_) {
      if (r.size() != layers_) {
        throw InvalidInput("scripted objective: entry " + r.to_string() +
                           " has wrong length");
      }
      if (!std::isfinite(metric)) {
        throw InvalidInput("scripted objective: non-finite metric for " + r.to_string());
      }
    }
    if (fallback_ && !std::isfinite(*fallback_)) {
      throw InvalidInput("scripted objective: non-finite default metric");
    }
  }

  double evaluate(const RankVector& r) const override {
    if (auto it = table_.find(r); it != table_.end()) return it->second;
    if (fallback_) return *fallback_;
    throw InvalidInput("scripted objective: no metric for " + r.to_string());
  }

  bool concurrent_safe() const override { return true; }
  std::size_t layer_count() const override { return layers_; }

  const std::map<RankVector, double>& table() const { return table_; }
  const std::optional<double>& fallback() const { return fallback_; }

 private:
  std::size_t layers_;
  std::map<RankVector, double> table_;
  std::optional<double> fallback_;
};

}  // namespace darse
