#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2l/tensor.hpp"

namespace s2l::metrics {

struct ScoredExample {
  int id = 0;
  bool member = false;
  double score = 0.0;
};

/// Dimension-normalised l2: sqrt(sum((a_i-b_i)^2) / d).
template <typename Scalar>
double l2_distance(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("l2_distance: element counts differ (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  const double ss =
      (a.array().template cast<double>() - b.array().template cast<double>())
          .square()
          .sum();
  return std::sqrt(ss / static_cast<double>(a.size()));
}

/// Mann-Whitney AUC with the convention that lower scores indicate members:
/// P(member < nonmember) + 1/2 P(tie).
double auc(const std::vector<ScoredExample>& scored);

/// True-positive rate at a fixed false-positive rate on the empirical
/// (step-function) ROC. Predictions are positive when score <= threshold,
/// and the threshold is the largest admitting at most fpr_target nonmembers.
/// With fewer than 1/fpr_target nonmembers, interpolates and sets *warned.
double tpr_at_fpr(const std::vector<ScoredExample>& scored, double fpr_target = 0.01,
                  bool* warned = nullptr);

/// Exhaustive nearest neighbour under l2_distance; ties break to smallest id.
std::pair<int, double> nearest_member(const Tensor& x, const std::vector<Tensor>& members);

/// Empirical-quantile normalisation against a calibration pool: piecewise
/// linear between pool points, mid-rank at ties, clamped to [0,1] outside.
std::vector<double> rank_normalize(const std::vector<double>& scores,
                                   const std::vector<double>& pool);

}  // namespace s2l::metrics
