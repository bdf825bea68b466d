#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "darse/error.hpp"
#include "darse/matrix.hpp"

namespace darse {

inline constexpr int kSentimentClasses = 5;

/// Maps a polarity score in [-1, 1] onto five ordered sentiment classes
/// (0 = strong negative ... 4 = strong positive).
inline int map_score_to_class(double y) {
  if (!(y >= -1.0 && y <= 1.0)) {
    throw InvalidInput("map_score_to_class: score " + std::to_string(y) +
                       " outside [-1, 1]");
  }
  if (y > 0.5) return 4;
  if (y > 0.049) return 3;
  if (y >= -0.049) return 2;
  if (y >= -0.5) return 1;
  return 0;
}

inline double mse_loss(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw InvalidInput("mse_loss: lengths " + std::to_string(pred.size()) + " and " +
                       std::to_string(truth.size()) + " must match and be non-empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

/// log Σ_k exp(row_k), shifted by the row maximum.
inline double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

/// Mean categorical cross-entropy of integer labels under softmax(logits).
inline double ce_loss(const Matrix& logits, std::span<const int> labels) {
  if (labels.empty() || logits.rows() != labels.size() || logits.cols() == 0) {
    throw InvalidInput("ce_loss: need one logits row per label (" +
                       std::to_string(logits.rows()) + " rows, " +
                       std::to_string(labels.size()) + " labels)");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int z = labels[i];
    if (z < 0 || static_cast<std::size_t>(z) >= logits.cols()) {
      throw InvalidInput("ce_loss: label " + std::to_string(z) + " out of range");
    }
    const auto row = logits.row(i);
    s += log_sum_exp(row) - row[static_cast<std::size_t>(z)];
  }
  return s / static_cast<double>(labels.size());
}

struct MultiTaskWeights {
  double regression = 0.5;      // w_r
  double classification = 0.5;  // w_c

  void validate() const {
    if (!std::isfinite(regression) || !std::isfinite(classification) ||
        regression < 0.0 || classification < 0.0 ||
        regression + classification <= 0.0) {
      throw InvalidInput("multitask weights must be >= 0 with a positive sum");
    }
  }

  friend bool operator==(const MultiTaskWeights&, const MultiTaskWeights&) = default;
};

inline double multitask_loss(double regression_loss, double classification_loss,
                             const MultiTaskWeights& w) {
  return w.regression * regression_loss + w.classification * classification_loss;
}

}  // namespace darse
