#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "trajphen/rng.hpp"

namespace trajphen {

// Area under the ROC curve in the Mann-Whitney U formulation: the fraction
// of (positive, negative) pairs ranked correctly, ties counted 1/2.
// Undefined (nullopt) when either class is empty.
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean absolute error; nullopt on empty input.
std::optional<double> mae(const std::vector<double>& pred, const std::vector<double>& truth);

// Two-sided Wilcoxon signed-rank p-value for paired deltas. Zero deltas are
// dropped; all-zero input gives p = 1. Exact sign-assignment enumeration for
// n <= exact_limit, normal approximation with continuity correction and tie
// correction beyond that.
double wilcoxon_signed_rank(const std::vector<double>& deltas, int exact_limit = 12);

// Two-sided Mann-Whitney U test, normal approximation with tie correction.
double mann_whitney_p(const std::vector<double>& group_a, const std::vector<double>& group_b);

// Spearman rank correlation with average ranks; nullopt when either vector
// is constant.
std::optional<double> spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

struct SpearmanPerm {
  double rho = 0.0;
  double p = 1.0;
};

// Permutation test for Spearman rho: y is permuted n_perm times and
// p = (1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_perm).
std::optional<SpearmanPerm> spearman_perm(const std::vector<double>& x,
                                          const std::vector<double>& y, int n_perm, uint64_t seed);

// Average ranks (1-based) with ties sharing their midpoint rank.
std::vector<double> average_ranks(const std::vector<double>& v);

// Standard normal CDF.
double normal_cdf(double z);

}  // namespace trajphen
