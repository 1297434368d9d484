#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/idp_encoder.hpp"
#include "trajphen/risk_sets.hpp"
#include "trajphen/rng.hpp"
#include "trajphen/trajectory_model.hpp"

namespace trajphen {

enum class Stage { Pretrain, Distill, DownTrain, DownVal, DownTest };

std::string stage_to_string(Stage s);
Stage stage_from_string(const std::string& s);

// One immutable tag per subject; the pipeline's leakage guards key off it.
class SplitRegistry {
 public:
  void assign(int64_t subject_id, Stage stage);
  bool contains(int64_t subject_id) const { return map_.count(subject_id) > 0; }
  Stage stage_of(int64_t subject_id) const;
  std::vector<int64_t> subjects_in(Stage stage) const;  // ascending ids
  std::vector<int64_t> downstream_subjects() const;     // train+val+test
  const std::map<int64_t, Stage>& entries() const { return map_; }
  size_t size() const { return map_.size(); }

 private:
  std::map<int64_t, Stage> map_;
};

struct LatentSubject {
  int64_t subject_id = 0;
  std::vector<double> u;
  double imaging_age_days = 0.0;
};

struct CohortConfig {
  int n_pretrain = 10000;
  int n_distill = 1500;
  int n_down_train = 500;
  int n_down_val = 500;
  int n_down_test = 1500;

  int vocab_diseases = 64;  // disease tokens 2 .. vocab_diseases+1
  int k = 8;
  int n_eval_diseases = 12;
  double eval_prev_lo = 0.02;
  double eval_prev_hi = 0.30;
  double background_rate_lo = 0.0005;  // per year
  double background_rate_hi = 0.004;

  double traj_loading_scale = 1.5;
  double idp_loading_scale = 1.0;
  double sigma_traj = 0.1;
  double sigma_idp = 0.5;
  bool shared_structure = true;

  std::vector<std::string> organ_names = {"brain", "skeleton", "cardiac", "abdominal", "pulmonary"};
  std::vector<int> organ_dims = {6, 8, 12, 6, 8};
  double missing_rate = 0.05;

  double imaging_age_lo_years = 45.0;
  double imaging_age_hi_years = 70.0;
  double min_event_age_years = 40.0;  // adult-onset floor; the process starts here
  double max_age_years = 85.0;
  double horizon_years = 10.0;
  int max_events = 63;  // trajectory file cap; BOS brings rows to max_seq_len

  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static CohortConfig from_json(const nlohmann::json& j);
};

// Ground-truth generative parameters, persisted as the oracle sidecar.
struct CohortTruth {
  int vocab_diseases = 0;
  int k = 0;
  std::vector<double> traj_loading;              // [vocab_diseases, k]
  std::vector<std::vector<double>> idp_loading;  // per organ [d_o, k]
  std::vector<double> base_rate_per_day;         // per disease
  std::vector<int> eval_disease_tokens;

  nlohmann::json to_json() const;
  static CohortTruth from_json(const nlohmann::json& j);
};

struct GeneratedCohort {
  CohortConfig config;
  CohortTruth truth;
  std::vector<LatentSubject> subjects;  // ascending subject id
  SplitRegistry registry;
  std::vector<Trajectory> trajectories;  // every subject
  RawIdpCohort idps;                     // imaged subjects only (distill + downstream)
  std::vector<OutcomeLabel> labels;      // downstream subjects x eval diseases
};

// Per-day disease rates for one subject: base_j * exp(A_j.u + sigma*eps_j).
std::vector<double> subject_hazards_per_day(const CohortTruth& truth, double sigma_traj,
                                            const std::vector<double>& u, Rng& stream);

// Time-homogeneous marked event process from start_age_days onward:
// exponential gaps under the total rate, event identity proportional to
// per-disease rates.
struct SampledEvent {
  int disease_index = 0;  // 0-based disease index, token = index + 2
  double age_days = 0.0;
};
std::vector<SampledEvent> sample_event_stream(const std::vector<double>& rate_per_day,
                                              double max_age_days, Rng& stream,
                                              int safety_cap = 4096,
                                              double start_age_days = 0.0);

// Smallest constant yearly rate whose median-subject incident prevalence
// over (baseline, max_age] hits the target, with the process starting at
// min_event_age: solves exp(-h*(t-a0))*(1-exp(-h*w)) = target on the
// increasing branch.
double calibrate_rate_per_year(double target_incident_prevalence, double mean_baseline_years,
                               double min_event_age_years, double max_age_years);

GeneratedCohort generate_cohort(const CohortConfig& cfg);

// Bayes-optimal incident risk over the follow-up window given the latent
// state: 1 - exp(-h_j(u) * horizon). The model-free AUC ceiling.
double oracle_risk(double rate_per_day, double horizon_days);

}  // namespace trajphen
