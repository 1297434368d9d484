#include "trajphen/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "trajphen/adam.hpp"
#include "trajphen/errors.hpp"

namespace trajphen {

ProjectionHeads::ProjectionHeads(int64_t d_idp, int64_t d_traj, int64_t d_align, int64_t hidden,
                                 double tau, uint64_t seed)
    : tau_(tau), d_align_(d_align) {
  if (tau <= 0.0) throw std::invalid_argument("ProjectionHeads: tau must be positive");
  if (d_align <= 0 || hidden <= 0) {
    throw std::invalid_argument("ProjectionHeads: dimensions must be positive");
  }
  Rng rng(seed);
  f_idp_ = Mlp(params_, "distill.f_idp", d_idp, hidden, d_align, rng);
  f_traj_ = Mlp(params_, "distill.f_traj", d_traj, hidden, d_align, rng);
}

namespace {

Tensor normalize_rows_checked(const Tensor& z, const char* side) {
  Tensor sq_norm = sum_axis(mul(z, z), 1);  // [N]
  for (double v : sq_norm.data()) {
    if (!(v > 1e-24)) {
      throw std::invalid_argument(std::string("infonce: zero-norm ") + side +
                                  " projection, cosine similarity undefined");
    }
  }
  return scale_rows(z, rsqrt(sq_norm));
}

Tensor diagonal_infonce(const Tensor& scaled_sims) {
  const int64_t n = scaled_sims.dim(0);
  std::vector<int64_t> diag(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = i;
  Tensor ce = sub(logsumexp_lastdim(scaled_sims), gather_lastdim(scaled_sims, diag));
  return mean_all(ce);
}

}  // namespace

Tensor infonce_from_projections(const Tensor& z_idp, const Tensor& z_traj, double tau,
                                bool symmetric) {
  if (z_idp.rank() != 2 || z_traj.rank() != 2 || z_idp.dim(0) != z_traj.dim(0) ||
      z_idp.dim(1) != z_traj.dim(1)) {
    throw std::invalid_argument("infonce: projections must be [N,d] with matching shapes, got " +
                                shape_str(z_idp.shape()) + " and " + shape_str(z_traj.shape()));
  }
  if (z_idp.dim(0) < 2) {
    throw std::invalid_argument("infonce: batch must contain at least 2 pairs");
  }
  if (tau <= 0.0) throw std::invalid_argument("infonce: tau must be positive");
  Tensor zi = normalize_rows_checked(z_idp, "idp");
  Tensor zt = normalize_rows_checked(z_traj, "traj");
  Tensor sims = mul_scalar(matmul(zi, transpose_last2(zt)), 1.0 / tau);  // [N,N]
  Tensor loss = diagonal_infonce(sims);
  if (symmetric) {
    loss = mul_scalar(add(loss, diagonal_infonce(transpose_last2(sims))), 0.5);
  }
  return loss;
}

Tensor mse_from_projections(const Tensor& z_idp, const Tensor& z_traj) {
  if (z_idp.shape() != z_traj.shape() || z_idp.rank() != 2) {
    throw std::invalid_argument("mse: projections must be [N,d] with matching shapes, got " +
                                shape_str(z_idp.shape()) + " and " + shape_str(z_traj.shape()));
  }
  Tensor d = sub(z_idp, z_traj);
  return mul_scalar(sum_all(mul(d, d)), 1.0 / static_cast<double>(z_idp.dim(0)));
}

void DistillConfig::validate() const {
  if (objective != "infonce" && objective != "mse") {
    throw std::invalid_argument("DistillConfig: objective must be 'infonce' or 'mse', got '" +
                                objective + "'");
  }
  if (tau <= 0.0) throw std::invalid_argument("DistillConfig: tau must be positive");
  if (d_align <= 0 || hidden <= 0 || batch_size < 2 || epochs < 0) {
    throw std::invalid_argument("DistillConfig: invalid sizes");
  }
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("DistillConfig: val_fraction must lie in [0,1)");
  }
}

nlohmann::json DistillReport::to_json() const {
  return {{"train_loss", train_loss}, {"val_loss", val_loss}, {"best_epoch", best_epoch}};
}

ParamRegistry merged_registry(std::initializer_list<const ParamRegistry*> regs) {
  ParamRegistry merged;
  for (const ParamRegistry* reg : regs) {
    for (const auto& item : reg->items()) merged.insert(item.name, item.tensor, item.trainable);
  }
  return merged;
}

DistillReport distill_pretrain(IdpEncoder& student, ProjectionHeads& heads,
                               const std::vector<IdpRecord>& records,
                               const EmbeddingMatrix& teacher, const DistillConfig& cfg,
                               const std::vector<int64_t>& downstream_subjects) {
  cfg.validate();
  if (records.size() < 2) throw std::invalid_argument("distill_pretrain: need at least 2 records");

  std::set<int64_t> forbidden(downstream_subjects.begin(), downstream_subjects.end());
  for (const IdpRecord& r : records) {
    if (forbidden.count(r.subject_id)) {
      throw GuardViolation("distill_pretrain: subject " + std::to_string(r.subject_id) +
                           " belongs to the downstream evaluation split");
    }
    if (!teacher.contains(r.subject_id)) {
      throw std::invalid_argument("distill_pretrain: no teacher embedding for subject " +
                                  std::to_string(r.subject_id));
    }
  }

  Rng rng(cfg.seed);
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t n_val = static_cast<size_t>(cfg.val_fraction * static_cast<double>(order.size()));
  if (n_val == 1) n_val = 2;  // infonce needs at least a pair
  std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<int64_t>(n_val));
  std::vector<size_t> train_idx(order.begin() + static_cast<int64_t>(n_val), order.end());
  if (train_idx.size() < 2) throw std::invalid_argument("distill_pretrain: train split too small");

  auto teacher_batch = [&](const std::vector<size_t>& idx) {
    Tensor t({static_cast<int64_t>(idx.size()), teacher.dim});
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* row = teacher.row(records[idx[i]].subject_id);
      std::copy_n(row, teacher.dim, t.data().begin() + static_cast<int64_t>(i) * teacher.dim);
    }
    return t;
  };
  auto batch_loss = [&](const std::vector<size_t>& idx) {
    auto organs = organ_batch(records, idx);
    Tensor cls = student.forward(organs).cls;
    Tensor zi = heads.project_idp(cls);
    Tensor zt = heads.project_traj(teacher_batch(idx));
    if (cfg.objective == "infonce") {
      return infonce_from_projections(zi, zt, cfg.tau, cfg.symmetric);
    }
    return mse_from_projections(zi, zt);
  };

  ParamRegistry all = merged_registry({&student.params(), &heads.params()});
  Adam opt(all.trainable_tensors(), {.lr = cfg.lr});

  DistillReport report;
  auto best_snapshot = all.snapshot();
  double best_val = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t start = 0; start + 2 <= train_idx.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(train_idx.size(), start + static_cast<size_t>(cfg.batch_size));
      if (end - start < 2) break;
      std::vector<size_t> idx(train_idx.begin() + static_cast<int64_t>(start),
                              train_idx.begin() + static_cast<int64_t>(end));
      Tensor loss = batch_loss(idx);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.value();
      ++n_batches;
    }
    report.train_loss.push_back(n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0);
    if (!val_idx.empty()) {
      NoGradGuard ng;
      double v = batch_loss(val_idx).value();
      report.val_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best_snapshot = all.snapshot();
        report.best_epoch = epoch;
      }
    } else {
      best_snapshot = all.snapshot();
      report.best_epoch = epoch;
    }
  }
  all.restore(best_snapshot);
  return report;
}

}  // namespace trajphen
