#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/embedding.hpp"

namespace trajphen {

struct GeometryBin {
  double lo = 0.0, hi = 0.0;   // sim_traj range covered by the bin
  double mean_idp = 0.0;       // mean sim_idp inside the bin
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% bootstrap interval on the mean
  int n = 0;
};

struct GeometryReport {
  double rho = 0.0;
  double p_perm = 1.0;
  int n_pairs = 0;
  std::vector<GeometryBin> bins;
  std::vector<double> sim_traj;  // per sampled pair, aligned with sim_idp
  std::vector<double> sim_idp;

  nlohmann::json summary_json() const;
};

// Pairwise-similarity alignment between two embedding spaces: samples
// distinct subject pairs, computes cosine similarity of each pair on both
// sides, and reports Spearman rho with a permutation p plus equal-count
// quantile-bin means of sim_idp with bootstrap confidence intervals.
GeometryReport geometry_alignment(const EmbeddingMatrix& idp, const EmbeddingMatrix& traj,
                                  int n_pairs, int n_bins, int n_perm, int n_boot,
                                  uint64_t seed);

}  // namespace trajphen
