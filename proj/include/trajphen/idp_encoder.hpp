#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/nn.hpp"
#include "trajphen/params.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

// Raw per-subject phenotype table as read from CSV: columns are named
// "organ.feature" and empty cells mark missing values.
struct RawIdpCohort {
  std::vector<int64_t> subject_ids;
  std::vector<std::string> columns;
  std::vector<double> values;    // [n_subjects * n_columns], row-major
  std::vector<uint8_t> present;  // same layout, 1 = observed

  int64_t n_subjects() const { return static_cast<int64_t>(subject_ids.size()); }
  int64_t n_columns() const { return static_cast<int64_t>(columns.size()); }
};

struct IdpFeatureStat {
  std::string column;  // "organ.feature"
  std::string organ;
  bool kept = false;
  double missing_rate = 0.0;
  double median = 0.0;  // imputation value, train-split statistic
  double mean = 0.0;    // z-score statistics, train-split, post-imputation
  double stddev = 1.0;
};

// Feature filter + imputation + standardization statistics, fit on one
// designated statistics split and reused everywhere else.
struct IdpSchema {
  std::vector<IdpFeatureStat> features;     // one per raw column
  std::vector<std::string> organ_names;     // kept organs, first-appearance order
  std::vector<int> organ_dims;              // kept feature count per organ
  std::vector<std::string> warnings;
  double max_missing_rate = 0.2;

  nlohmann::json to_json() const;
  static IdpSchema from_json(const nlohmann::json& j);
};

IdpSchema fit_idp_schema(const RawIdpCohort& cohort, const std::vector<int64_t>& stat_subjects,
                         double max_missing_rate = 0.2);

// Imputed, standardized, schema-filtered record.
struct IdpRecord {
  int64_t subject_id = 0;
  std::vector<std::vector<double>> organs;
};

std::vector<IdpRecord> apply_idp_schema(const RawIdpCohort& cohort, const IdpSchema& schema);

// Per-organ [N, d_o] constant tensors for a batch of records.
std::vector<Tensor> organ_batch(const std::vector<IdpRecord>& records,
                                const std::vector<size_t>& indices);

struct IdpEncoderConfig {
  std::vector<int> organ_dims;
  int d = 64;
  int d_e = 8;
  int n_layers = 2;  // 0 selects the no-transformer baseline
  int n_heads = 4;
  int mlp_hidden = 128;

  void validate() const;
  nlohmann::json to_json() const;
  static IdpEncoderConfig from_json(const nlohmann::json& j);
};

// Organ-wise encoder: per-organ linear projections into a shared space,
// learnable organ-identity embeddings, a shared MLP, and a transformer over
// [CLS, organ tokens]. With n_layers = 0 the CLS output is the mean organ
// token (concatenated-feature MLP baseline when a single organ is used).
class IdpEncoder {
 public:
  IdpEncoder(IdpEncoderConfig cfg, uint64_t seed);

  struct ForwardOut {
    Tensor cls;           // [N, d]
    Tensor organ_tokens;  // [N, O, d]
  };
  ForwardOut forward(const std::vector<Tensor>& organs) const;

  // Single-subject organ projection z = MLP_shared([W_o x + b_o, e_o]).
  std::vector<double> project_organ(const std::vector<double>& x, int organ_index) const;

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const IdpEncoderConfig& config() const { return cfg_; }

 private:
  IdpEncoderConfig cfg_;
  ParamRegistry params_;
  std::vector<Linear> organ_proj_;
  std::vector<Tensor> organ_emb_;  // [d_e] each
  Mlp shared_mlp_;
  Tensor cls_;  // [d]
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_f_;
};

}  // namespace trajphen
