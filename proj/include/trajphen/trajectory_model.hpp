#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajphen/nn.hpp"
#include "trajphen/params.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

// One subject's diagnosis history: event codes with event ages in days.
// Codes are vocabulary indices >= kFirstDiseaseToken; 0 is padding and 1 the
// begin-of-sequence token, neither of which appears in stored trajectories.
struct Trajectory {
  int64_t subject_id = 0;
  std::vector<int> codes;
  std::vector<double> ages_days;
};

constexpr int kPadToken = 0;
constexpr int kBosToken = 1;
constexpr int kFirstDiseaseToken = 2;

struct TrajModelConfig {
  int vocab_size = 66;  // 64 disease codes + pad + bos
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 64;
  int age_basis_dim = 32;
  int mlp_hidden = 256;
  double lambda_time = 1.0;
  // uniform head-bias start; places the initial total event rate near
  // exp(bias)*n_diseases per year instead of n_diseases per year
  double head_bias_init = -6.0;

  void validate() const;
};

enum class Pooling { Mean, Weighted };

Pooling pooling_from_string(const std::string& s);
std::string pooling_to_string(Pooling p);

// Padded batch: BOS-prefixed token rows with per-position ages.
struct TokenBatch {
  int64_t batch = 0;
  int64_t t = 0;
  std::vector<int64_t> tokens;  // [B*T], row-major
  std::vector<double> ages;     // [B*T], days

  bool is_pad(int64_t b, int64_t i) const { return tokens[b * t + i] == kPadToken; }
};

TokenBatch make_token_batch(const std::vector<Trajectory>& trajs, int max_seq_len);

// Decoder-only transformer over diagnosis sequences with continuous age
// encoding. Trained with next-event cross entropy plus an exponential
// time-gap likelihood; once frozen it supplies pooled subject embeddings.
class TrajectoryModel {
 public:
  TrajectoryModel(TrajModelConfig cfg, uint64_t seed);

  struct ForwardOut {
    Tensor logits;  // [B,T,vocab]
    Tensor hidden;  // [B,T,d_model], final layer post-norm
  };
  ForwardOut forward(const TokenBatch& batch) const;

  // Joint loss: mean over valid transitions of next-event CE plus
  // lambda_time * exponential gap NLL with rate sum(exp(disease logits)).
  // Gaps are in years, clamped below at one day.
  Tensor joint_loss(const ForwardOut& out, const TokenBatch& batch) const;

  // Next-event CE alone (evaluation).
  double next_event_ce(const std::vector<Trajectory>& trajs, int batch_size) const;

  // Raw sinusoidal age features before the learned projection; feature 2k is
  // sin(age / wl_k) and 2k+1 is cos(age / wl_k) with geometrically spaced
  // wavelengths wl_k = base^(2k/age_basis_dim) days, base = 10000 * 365.
  std::vector<double> age_features(const std::vector<double>& ages_days) const;

  // Pooled embedding of the history strictly before cutoff_age_days. An
  // empty history embeds a lone BOS token.
  std::vector<double> embed_subject(const Trajectory& traj, double cutoff_age_days,
                                    Pooling mode) const;

  // The truncation rule embed_subject applies: events strictly before the
  // cutoff, clipped to the most recent max_seq_len-1 of them.
  Trajectory history_before(const Trajectory& traj, double cutoff_age_days) const;

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const TrajModelConfig& config() const { return cfg_; }

 private:
  Tensor input_states(const TokenBatch& batch) const;

  TrajModelConfig cfg_;
  ParamRegistry params_;
  Tensor token_emb_;  // [vocab, d]
  Tensor age_proj_;   // [basis, d]
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_f_;
  Linear head_;       // [d, vocab], zero-initialized
  Tensor pool_query_; // [d]
};

// Laplace-smoothed unconditional next-event distribution fit on train
// transitions; returns held-out CE. The reference the teacher must beat.
double unigram_next_event_ce(const std::vector<Trajectory>& train,
                             const std::vector<Trajectory>& heldout, int vocab_size);

struct TeacherTrainConfig {
  int epochs = 3;
  int batch_size = 64;
  double lr = 1e-3;
  uint64_t seed = 1;
};

struct TeacherTrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_ce;      // per epoch
};

TeacherTrainReport pretrain_trajectory_model(TrajectoryModel& model,
                                             const std::vector<Trajectory>& train,
                                             const std::vector<Trajectory>& val,
                                             const TeacherTrainConfig& cfg);

}  // namespace trajphen
