#include "trajphen/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "trajphen/rng.hpp"
#include "trajphen/stats.hpp"

namespace trajphen {

namespace {

double cosine(const double* a, const double* b, int64_t d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw std::invalid_argument("geometry_alignment: zero-norm embedding, cosine undefined");
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

nlohmann::json GeometryReport::summary_json() const {
  nlohmann::json bins_json = nlohmann::json::array();
  for (const auto& b : bins) {
    bins_json.push_back({{"lo", b.lo},
                         {"hi", b.hi},
                         {"mean_idp", b.mean_idp},
                         {"ci_lo", b.ci_lo},
                         {"ci_hi", b.ci_hi},
                         {"n", b.n}});
  }
  return {{"rho", rho}, {"p_perm", p_perm}, {"n_pairs", n_pairs}, {"bins", bins_json}};
}

GeometryReport geometry_alignment(const EmbeddingMatrix& idp, const EmbeddingMatrix& traj,
                                  int n_pairs, int n_bins, int n_perm, int n_boot,
                                  uint64_t seed) {
  if (n_pairs <= 0 || n_bins <= 0 || n_perm <= 0 || n_boot <= 0) {
    throw std::invalid_argument("geometry_alignment: counts must be positive");
  }
  std::vector<int64_t> common;
  for (int64_t id : idp.subject_ids) {
    if (traj.contains(id)) common.push_back(id);
  }
  std::sort(common.begin(), common.end());
  const int64_t m = static_cast<int64_t>(common.size());
  if (m < 2) {
    throw std::invalid_argument("geometry_alignment: need at least 2 subjects in both spaces");
  }

  Rng rng(seed);
  std::vector<std::pair<int64_t, int64_t>> pairs;
  const uint64_t total = static_cast<uint64_t>(m) * static_cast<uint64_t>(m - 1) / 2;
  if (static_cast<uint64_t>(n_pairs) >= total) {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
    }
  } else {
    std::set<std::pair<int64_t, int64_t>> seen;
    while (pairs.size() < static_cast<size_t>(n_pairs)) {
      int64_t i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(m)));
      int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(m)));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (seen.emplace(i, j).second) pairs.emplace_back(i, j);
    }
  }

  GeometryReport report;
  report.n_pairs = static_cast<int>(pairs.size());
  report.sim_traj.reserve(pairs.size());
  report.sim_idp.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    report.sim_traj.push_back(
        cosine(traj.row(common[static_cast<size_t>(i)]), traj.row(common[static_cast<size_t>(j)]), traj.dim));
    report.sim_idp.push_back(
        cosine(idp.row(common[static_cast<size_t>(i)]), idp.row(common[static_cast<size_t>(j)]), idp.dim));
  }

  auto sp = spearman_perm(report.sim_traj, report.sim_idp, n_perm, seed ^ 0xA5A5A5A5ULL);
  if (!sp) {
    throw std::invalid_argument("geometry_alignment: similarity vector is constant");
  }
  report.rho = sp->rho;
  report.p_perm = sp->p;

  // equal-count quantile bins over sim_traj rank
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return report.sim_traj[a] < report.sim_traj[b];
  });
  const size_t np = order.size();
  const size_t nb = std::min<size_t>(static_cast<size_t>(n_bins), np);
  for (size_t b = 0; b < nb; ++b) {
    size_t begin = b * np / nb;
    size_t end = (b + 1) * np / nb;
    if (begin >= end) continue;
    GeometryBin bin;
    bin.n = static_cast<int>(end - begin);
    bin.lo = report.sim_traj[order[begin]];
    bin.hi = report.sim_traj[order[end - 1]];
    std::vector<double> vals;
    vals.reserve(end - begin);
    double mean = 0.0;
    for (size_t k = begin; k < end; ++k) {
      vals.push_back(report.sim_idp[order[k]]);
      mean += vals.back();
    }
    mean /= static_cast<double>(vals.size());
    bin.mean_idp = mean;

    std::vector<double> boot_means(static_cast<size_t>(n_boot));
    for (int r = 0; r < n_boot; ++r) {
      double s = 0.0;
      for (size_t k = 0; k < vals.size(); ++k) {
        s += vals[rng.below(vals.size())];
      }
      boot_means[static_cast<size_t>(r)] = s / static_cast<double>(vals.size());
    }
    std::sort(boot_means.begin(), boot_means.end());
    auto pct = [&](double q) {
      size_t idx = static_cast<size_t>(q * static_cast<double>(n_boot - 1) + 0.5);
      return boot_means[std::min(idx, boot_means.size() - 1)];
    };
    bin.ci_lo = pct(0.025);
    bin.ci_hi = pct(0.975);
    report.bins.push_back(bin);
  }
  return report;
}

}  // namespace trajphen
