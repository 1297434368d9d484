#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/embedding.hpp"
#include "trajphen/idp_encoder.hpp"
#include "trajphen/nn.hpp"
#include "trajphen/params.hpp"

namespace trajphen {

enum class FusionMode { IdpOnly, TrajOnly, Concat, XAttn };

FusionMode fusion_mode_from_string(const std::string& s);
std::string fusion_mode_to_string(FusionMode m);

struct FusionConfig {
  FusionMode mode = FusionMode::XAttn;
  int n_heads = 4;
  int n_diseases = 0;
  int d_traj = 0;  // trajectory embedding width; 0 only for idp_only
  double lambda_mae = 1.0;
  bool freeze_encoder = false;

  void validate() const;
};

// Downstream predictor with four heads-of-evidence variants: IDP-only,
// trajectory-only, concatenation, and cross-attention fusion. Risk heads
// emit per-disease logits; time heads emit per-disease onset gaps in years.
class FusionModel {
 public:
  // enc_cfg may be null for traj_only; required otherwise.
  FusionModel(FusionConfig cfg, const IdpEncoderConfig* enc_cfg, uint64_t seed);

  struct Out {
    Tensor risk_logits;  // [N, D]
    Tensor time_years;   // [N, D]
  };
  // organs required unless traj_only; traj_emb [N, d_traj] required unless
  // idp_only.
  Out forward(const std::vector<Tensor>* organs, const Tensor* traj_emb) const;

  // organ tokens [N,O,d] attend to trajectory kv tokens [N,M,d_traj];
  // residual add, then mean over organ tokens.
  Tensor cross_attend(const Tensor& organ_tokens, const Tensor& traj_kv) const;

  IdpEncoder* encoder() { return encoder_.get(); }
  const IdpEncoder* encoder() const { return encoder_.get(); }
  ParamRegistry& all_params() { return all_params_; }  // merged checkpoint view
  const ParamRegistry& all_params() const { return all_params_; }
  ParamRegistry& head_params() { return head_params_; }
  std::vector<Tensor> trainable_tensors() const;  // honors mode + freeze_encoder
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  std::unique_ptr<IdpEncoder> encoder_;
  ParamRegistry head_params_;
  ParamRegistry all_params_;  // shared-storage view over encoder + heads
  std::unique_ptr<MultiHeadAttention> xattn_;
  Linear risk_head_, time_head_;
};

// Subject-level downstream labels over a disease panel. `prevalent` marks
// subject-disease pairs with onset at or before the subject's baseline;
// those pairs are excluded from classification loss and evaluation.
struct DownstreamDataset {
  std::vector<int64_t> subject_ids;
  std::vector<IdpRecord> records;  // aligned with subject_ids; may be empty for traj_only
  EmbeddingMatrix traj;            // may be empty for idp_only
  std::vector<int> disease_ids;    // label column order
  std::vector<uint8_t> is_case;    // [N, D]
  std::vector<uint8_t> prevalent;  // [N, D]
  std::vector<double> gap_years;   // [N, D], meaningful where is_case

  int64_t n() const { return static_cast<int64_t>(subject_ids.size()); }
  int64_t n_diseases() const { return static_cast<int64_t>(disease_ids.size()); }
  void validate() const;
};

struct FinetuneConfig {
  int epochs = 60;
  int batch_size = 128;
  double lr = 1e-3;
  int patience = 10;
  uint64_t seed = 1;
};

struct FinetuneReport {
  std::vector<double> train_loss;
  std::vector<double> val_mean_auc;
  int best_epoch = -1;

  nlohmann::json to_json() const;
};

// Joint risk + onset-gap objective: mean over diseases of per-disease BCE
// over non-prevalent pairs plus lambda_mae * L1 gap error over cases only.
Tensor downstream_loss(const FusionModel& model, const FusionModel::Out& out,
                       const DownstreamDataset& data, const std::vector<size_t>& idx);

// Early stopping on validation mean AUC; restores the best snapshot.
FinetuneReport finetune(FusionModel& model, const DownstreamDataset& train,
                        const DownstreamDataset& val, const FinetuneConfig& cfg);

// Per-disease mean AUC over non-prevalent pairs (risk probabilities vs case
// labels); diseases with a single class are skipped.
double mean_downstream_auc(FusionModel& model, const DownstreamDataset& data);

// Forward pass helper returning probabilities and gap predictions.
FusionModel::Out predict_batch(const FusionModel& model, const DownstreamDataset& data,
                               const std::vector<size_t>& idx);

}  // namespace trajphen
