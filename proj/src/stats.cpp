#include "trajphen/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace trajphen {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auc: scores and labels differ in length");
  }
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw std::invalid_argument("auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<double> ranks = average_ranks(scores);
  double rank_sum_pos = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum_pos += ranks[i];
  }
  double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("mae: predictions and truth differ in length");
  }
  if (pred.empty()) return std::nullopt;
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

namespace {

// Sum of the tie correction term t^3 - t over tie groups.
double tie_term(const std::vector<double>& v) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    double t = static_cast<double>(j - i + 1);
    total += t * t * t - t;
    i = j + 1;
  }
  return total;
}

}  // namespace

double wilcoxon_signed_rank(const std::vector<double>& deltas, int exact_limit) {
  std::vector<double> nz;
  for (double d : deltas) {
    if (d != 0.0) nz.push_back(d);
  }
  const size_t n = nz.size();
  if (n == 0) return 1.0;

  std::vector<double> abs_vals(n);
  for (size_t i = 0; i < n; ++i) abs_vals[i] = std::fabs(nz[i]);
  std::vector<double> ranks = average_ranks(abs_vals);
  double w_plus = 0.0;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (nz[i] > 0.0) w_plus += ranks[i];
  }
  double w_minus = total - w_plus;

  if (n <= static_cast<size_t>(exact_limit)) {
    // enumerate every sign assignment conditional on the observed |deltas|
    double lo = std::min(w_plus, w_minus);
    double hi = std::max(w_plus, w_minus);
    uint64_t count = 0;
    uint64_t assignments = uint64_t{1} << n;
    for (uint64_t bits = 0; bits < assignments; ++bits) {
      double w = 0.0;
      for (size_t i = 0; i < n; ++i) {
        if (bits & (uint64_t{1} << i)) w += ranks[i];
      }
      if (w <= lo || w >= hi) ++count;
    }
    double p = static_cast<double>(count) / static_cast<double>(assignments);
    return std::min(p, 1.0);
  }

  double nn = static_cast<double>(n);
  double mean = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(abs_vals) / 48.0;
  if (var <= 0.0) return 1.0;
  double diff = w_plus - mean;
  double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);  // continuity toward the mean
  double z = (diff + cc) / std::sqrt(var);
  double p = 2.0 * (1.0 - normal_cdf(std::fabs(z)));
  return std::clamp(p, 0.0, 1.0);
}

double mann_whitney_p(const std::vector<double>& group_a, const std::vector<double>& group_b) {
  if (group_a.empty() || group_b.empty()) {
    throw std::invalid_argument("mann_whitney: both groups must be non-empty");
  }
  const double na = static_cast<double>(group_a.size());
  const double nb = static_cast<double>(group_b.size());
  std::vector<double> combined = group_a;
  combined.insert(combined.end(), group_b.begin(), group_b.end());
  std::vector<double> ranks = average_ranks(combined);
  double rank_sum_a = 0.0;
  for (size_t i = 0; i < group_a.size(); ++i) rank_sum_a += ranks[i];
  double u = rank_sum_a - na * (na + 1.0) / 2.0;

  double n_total = na + nb;
  double mean = na * nb / 2.0;
  double tie = tie_term(combined);
  double var = na * nb / 12.0 * ((n_total + 1.0) - tie / (n_total * (n_total - 1.0)));
  if (var <= 0.0) return 1.0;
  double diff = u - mean;
  double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);
  double z = (diff + cc) / std::sqrt(var);
  double p = 2.0 * (1.0 - normal_cdf(std::fabs(z)));
  return std::clamp(p, 0.0, 1.0);
}

std::optional<double> spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 observations");
  std::vector<double> rx = average_ranks(x);
  std::vector<double> ry = average_ranks(y);
  double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;  // constant input
  return sxy / std::sqrt(sxx * syy);
}

std::optional<SpearmanPerm> spearman_perm(const std::vector<double>& x,
                                          const std::vector<double>& y, int n_perm,
                                          uint64_t seed) {
  if (n_perm <= 0) throw std::invalid_argument("spearman_perm: n_perm must be positive");
  auto rho_obs = spearman_rho(x, y);
  if (!rho_obs) return std::nullopt;
  Rng rng(seed);
  std::vector<double> shuffled = y;
  int count = 0;
  for (int i = 0; i < n_perm; ++i) {
    rng.shuffle(shuffled);
    auto rho_p = spearman_rho(x, shuffled);
    if (rho_p && std::fabs(*rho_p) >= std::fabs(*rho_obs)) ++count;
  }
  SpearmanPerm out;
  out.rho = *rho_obs;
  out.p = static_cast<double>(1 + count) / static_cast<double>(1 + n_perm);
  return out;
}

}  // namespace trajphen
