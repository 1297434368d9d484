#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajphen {

// One ground-truth or registry row: whether (and when) the subject's first
// onset of the disease was observed.
struct OutcomeLabel {
  int64_t subject_id = 0;
  int disease_id = 0;
  bool onset = false;
  double onset_age_days = 0.0;
};

// Incident-only risk set: imaging is the baseline; the case had onset
// strictly after its own baseline, and every control was imaged before the
// case's onset age and still event-free at that age.
struct RiskSetInstance {
  int disease_id = 0;
  int64_t case_id = 0;
  double baseline_age_days = 0.0;
  double onset_gap_years = 0.0;
  std::vector<int64_t> control_ids;
};

std::vector<RiskSetInstance> build_risk_sets(
    const std::vector<OutcomeLabel>& labels,
    const std::unordered_map<int64_t, double>& imaging_age_days, int disease_id,
    int controls_per_case, uint64_t seed, std::vector<std::string>* log = nullptr);

// Diseases with enough incident cases, ranked into prevalence tertiles.
struct DiseasePanel {
  std::vector<int> disease_ids;
  std::vector<int> n_cases;
  std::vector<double> prevalence;
  std::vector<int> tertile;  // 0 = low, 1 = mid, 2 = high prevalence

  int index_of(int disease_id) const;
};

DiseasePanel build_disease_panel(const std::vector<OutcomeLabel>& labels,
                                 const std::unordered_map<int64_t, double>& imaging_age_days,
                                 int min_cases);

}  // namespace trajphen
