#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/cohort.hpp"
#include "trajphen/distill.hpp"
#include "trajphen/fusion.hpp"
#include "trajphen/trajectory_model.hpp"

namespace trajphen {

// One downstream training/evaluation variant (a Table-style row).
struct VariantConfig {
  std::string name;
  std::string mode = "idp_only";      // idp_only | traj_only | concat | xattn
  std::string init = "scratch";       // scratch | distilled
  std::string objective = "infonce";  // which distilled checkpoint to load
};

// Full run configuration; every stage reads the slice it needs. JSON keys
// mirror the field names and may be overridden from the CLI by dot path.
struct RunConfig {
  std::string out = "runs/demo";
  uint64_t seed = 1;

  CohortConfig cohort;

  // teacher model + pretraining
  int teacher_d_model = 64;
  int teacher_n_layers = 2;
  int teacher_n_heads = 4;
  int teacher_age_basis_dim = 32;
  int teacher_mlp_hidden = 256;
  double teacher_lambda_time = 1.0;
  int teacher_epochs = 3;
  int teacher_batch_size = 64;
  double teacher_lr = 1e-2;
  double teacher_val_fraction = 0.05;

  std::string embed_pooling = "weighted";

  // student encoder
  int encoder_d = 64;
  int encoder_d_e = 8;
  int encoder_n_layers = 2;
  int encoder_n_heads = 4;
  int encoder_mlp_hidden = 128;
  bool encoder_single_organ = false;  // concatenated-feature baseline
  double max_missing_rate = 0.2;

  // distillation
  std::vector<std::string> distill_objectives = {"infonce", "mse"};
  double distill_tau = 0.07;
  int distill_d_align = 32;
  int distill_hidden = 32;
  int distill_epochs = 30;
  int distill_batch_size = 256;
  double distill_lr = 1e-3;
  double distill_val_fraction = 0.1;
  bool distill_symmetric = false;

  // fine-tuning
  std::vector<VariantConfig> variants;
  int finetune_epochs = 60;
  int finetune_batch_size = 128;
  double finetune_lr = 1e-3;
  int finetune_patience = 10;
  double finetune_lambda_mae = 1.0;
  int fusion_n_heads = 4;

  // evaluation
  int eval_controls_per_case = 5;
  int eval_min_cases = 5;

  // geometry analysis
  std::string geometry_objective = "infonce";
  std::string geometry_subjects = "downstream-test";
  int geometry_n_pairs = 20000;
  int geometry_n_bins = 10;
  int geometry_n_perm = 1000;
  int geometry_n_boot = 500;

  TrajModelConfig teacher_model_config() const;
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static std::vector<VariantConfig> default_variants();
};

// Stable per-stage seed derivation from the global seed.
uint64_t derive_seed(uint64_t global, const std::string& tag);

// Dot-path override: "cohort.n_pretrain=2000" applied onto a config JSON.
void apply_override(nlohmann::json& config, const std::string& dotted);

// Pipeline stages; each reads its inputs from the run directory, writes its
// outputs plus a manifest, and throws ConfigError / GuardViolation /
// MissingArtifact on the corresponding failure.
void run_gen_data(const RunConfig& cfg);
void run_pretrain_traj(const RunConfig& cfg);
void run_embed(const RunConfig& cfg);
void run_distill(const RunConfig& cfg);
void run_finetune(const RunConfig& cfg);
void run_evaluate(const RunConfig& cfg);
void run_geometry(const RunConfig& cfg);
void run_all(const RunConfig& cfg);
void run_stage(const RunConfig& cfg, const std::string& stage);

// Per-disease delta report between two metrics files (same panel required).
nlohmann::json compare_runs(const std::string& metrics_path_a, const std::string& metrics_path_b,
                            uint64_t seed = 1);

// Exclusive run-directory lock; throws if another writer holds it.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

}  // namespace trajphen
