#include "s2l/metrics.hpp"

#include <limits>

namespace s2l::metrics {

namespace {

void split_scores(const std::vector<ScoredExample>& scored, std::vector<double>* mem,
                  std::vector<double>* non) {
  for (const auto& e : scored) {
    if (!std::isfinite(e.score)) {
      throw std::invalid_argument("scored example " + std::to_string(e.id) +
                                  " has non-finite score");
    }
    (e.member ? mem : non)->push_back(e.score);
  }
  if (mem->empty() || non->empty()) {
    throw std::invalid_argument("both member and nonmember scores are required");
  }
}

}  // namespace

double auc(const std::vector<ScoredExample>& scored) {
  std::vector<double> mem, non;
  split_scores(scored, &mem, &non);
  // Mann-Whitney via mid-ranks over the pooled sample.
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(scored.size());
  for (double s : mem) pooled.push_back({s, true});
  for (double s : non) pooled.push_back({s, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_nonmember = 0.0;  // mid-ranks of nonmembers, 1-based
  size_t i = 0;
  while (i < pooled.size()) {
    size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // (i+1 + j) / 2
    for (size_t k = i; k < j; ++k) {
      if (!pooled[k].second) rank_sum_nonmember += mid_rank;
    }
    i = j;
  }
  const double n1 = static_cast<double>(non.size());
  const double n0 = static_cast<double>(mem.size());
  // U counts (member < nonmember) pairs plus half ties.
  const double u = rank_sum_nonmember - n1 * (n1 + 1.0) / 2.0;
  return u / (n0 * n1);
}

double tpr_at_fpr(const std::vector<ScoredExample>& scored, double fpr_target,
                  bool* warned) {
  if (fpr_target < 0.0 || fpr_target > 1.0) {
    throw std::invalid_argument("tpr_at_fpr: target must be in [0,1]");
  }
  std::vector<double> mem, non;
  split_scores(scored, &mem, &non);
  std::sort(non.begin(), non.end());
  const double n_non = static_cast<double>(non.size());
  const double n_mem = static_cast<double>(mem.size());
  auto tpr_leq = [&](double thresh) {
    std::int64_t c = 0;
    for (double s : mem) c += (s <= thresh);
    return static_cast<double>(c) / n_mem;
  };
  const std::int64_t allowed =
      static_cast<std::int64_t>(std::floor(fpr_target * n_non + 1e-12));
  if (warned) *warned = false;
  if (allowed >= static_cast<std::int64_t>(non.size())) return 1.0;
  if (allowed >= 1) {
    // Largest threshold keeping at most `allowed` nonmembers at or below it.
    // With ties, step down until the constraint holds.
    std::int64_t k = allowed;
    while (k > 0) {
      const double t = non[static_cast<size_t>(k - 1)];
      std::int64_t fp = 0;
      for (double s : non) fp += (s <= t);
      if (fp <= allowed) return tpr_leq(t);
      --k;
    }
  }
  // Too few nonmembers to resolve the target; interpolate between the
  // all-negative operating point and the first nonmember threshold.
  if (warned) *warned = true;
  std::int64_t below = 0;
  for (double s : mem) below += (s < non[0]);
  const double tpr0 = static_cast<double>(below) / n_mem;
  const double tpr1 = tpr_leq(non[0]);
  return tpr0 + (tpr1 - tpr0) * (fpr_target * n_non);
}

std::pair<int, double> nearest_member(const Tensor& x, const std::vector<Tensor>& members) {
  if (members.empty()) {
    throw std::invalid_argument("nearest_member: empty member set");
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < members.size(); ++i) {
    const double d = l2_distance(x, members[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return {best, best_d};
}

std::vector<double> rank_normalize(const std::vector<double>& scores,
                                   const std::vector<double>& pool) {
  if (pool.empty()) {
    throw std::invalid_argument("rank_normalize: empty calibration pool");
  }
  std::vector<double> sorted = pool;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto quantile = [&](double s) {
    if (s < sorted.front()) return 0.0;
    if (s > sorted.back()) return 1.0;
    // Mid-rank at pool values, linear in between.
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), s);
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), s);
    const double below = static_cast<double>(lo - sorted.begin());
    const double leq = static_cast<double>(hi - sorted.begin());
    if (lo != hi) return 0.5 * (below + leq) / n;  // s is a pool value
    // Between two adjacent pool values: interpolate their mid-ranks.
    const double v0 = *(lo - 1);
    const double v1 = *lo;
    auto midrank = [&](double v) {
      const auto l = std::lower_bound(sorted.begin(), sorted.end(), v);
      const auto h = std::upper_bound(sorted.begin(), sorted.end(), v);
      return 0.5 * static_cast<double>((l - sorted.begin()) + (h - sorted.begin())) / n;
    };
    const double q0 = midrank(v0);
    const double q1 = midrank(v1);
    return q0 + (q1 - q0) * (s - v0) / (v1 - v0);
  };
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(quantile(s));
  return out;
}

}  // namespace s2l::metrics
