#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/embedding.hpp"
#include "trajphen/idp_encoder.hpp"
#include "trajphen/nn.hpp"
#include "trajphen/params.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

// Projection heads of Eq. 5: two small MLPs mapping IDP and trajectory
// embeddings into a shared alignment space.
class ProjectionHeads {
 public:
  ProjectionHeads(int64_t d_idp, int64_t d_traj, int64_t d_align, int64_t hidden, double tau,
                  uint64_t seed);

  Tensor project_idp(const Tensor& z) const { return f_idp_.forward(z); }
  Tensor project_traj(const Tensor& z) const { return f_traj_.forward(z); }

  double tau() const { return tau_; }
  int64_t d_align() const { return d_align_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

 private:
  ParamRegistry params_;
  Mlp f_idp_, f_traj_;
  double tau_ = 0.07;
  int64_t d_align_ = 32;
};

// InfoNCE over projected pairs, IDP rows as anchors: row i of the similarity
// matrix is scored against the matched column i with in-batch negatives.
// Cosine similarities at temperature tau. Throws if N < 2 or any projection
// has zero norm. The symmetric variant adds the trajectory-anchored term.
Tensor infonce_from_projections(const Tensor& z_idp, const Tensor& z_traj, double tau,
                                bool symmetric = false);

// Mean squared distance between matched projections.
Tensor mse_from_projections(const Tensor& z_idp, const Tensor& z_traj);

struct DistillConfig {
  std::string objective = "infonce";  // "infonce" | "mse"
  double tau = 0.07;
  int d_align = 32;
  int hidden = 32;
  int epochs = 30;
  int batch_size = 256;
  double lr = 1e-3;
  double val_fraction = 0.1;
  bool symmetric = false;
  uint64_t seed = 1;

  void validate() const;
};

struct DistillReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;

  nlohmann::json to_json() const;
};

// Aligns the student to precomputed (frozen) teacher embeddings on the
// distillation split. Every record must carry a teacher embedding; any
// subject found in `downstream_subjects` aborts (leakage guard). Restores
// the best-validation-loss snapshot before returning.
DistillReport distill_pretrain(IdpEncoder& student, ProjectionHeads& heads,
                               const std::vector<IdpRecord>& records,
                               const EmbeddingMatrix& teacher, const DistillConfig& cfg,
                               const std::vector<int64_t>& downstream_subjects = {});

// Registry view over student + heads parameters (shared storage), the unit
// that distillation checkpoints.
ParamRegistry merged_registry(std::initializer_list<const ParamRegistry*> regs);

}  // namespace trajphen
