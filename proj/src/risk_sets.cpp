#include "trajphen/risk_sets.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "trajphen/rng.hpp"

namespace trajphen {

std::vector<RiskSetInstance> build_risk_sets(
    const std::vector<OutcomeLabel>& labels,
    const std::unordered_map<int64_t, double>& imaging_age_days, int disease_id,
    int controls_per_case, uint64_t seed, std::vector<std::string>* log) {
  if (controls_per_case <= 0) {
    throw std::invalid_argument("build_risk_sets: controls_per_case must be positive");
  }
  // subjects considered: imaged subjects with a label row for this disease
  struct Subject {
    int64_t id;
    double baseline;
    bool onset;
    double onset_age;
  };
  std::map<int64_t, Subject> subjects;
  for (const OutcomeLabel& row : labels) {
    if (row.disease_id != disease_id) continue;
    auto it = imaging_age_days.find(row.subject_id);
    if (it == imaging_age_days.end()) continue;
    subjects[row.subject_id] = {row.subject_id, it->second, row.onset, row.onset_age_days};
  }

  std::vector<const Subject*> cases;
  std::vector<const Subject*> pool;  // incident-free-so-far candidates
  for (const auto& [id, s] : subjects) {
    if (s.onset && s.onset_age <= s.baseline) continue;  // prevalent: never case, never control
    if (s.onset && s.onset_age > s.baseline) cases.push_back(&s);
    pool.push_back(&s);
  }

  Rng rng(seed);
  std::vector<RiskSetInstance> out;
  for (const Subject* c : cases) {
    std::vector<int64_t> eligible;
    for (const Subject* ctrl : pool) {
      if (ctrl->id == c->id) continue;
      if (!(ctrl->baseline < c->onset_age)) continue;            // imaged before the case time
      if (ctrl->onset && !(ctrl->onset_age > c->onset_age)) continue;  // event-free at the case time
      eligible.push_back(ctrl->id);
    }
    if (eligible.empty()) {
      if (log) {
        log->push_back("disease " + std::to_string(disease_id) + ": case " +
                       std::to_string(c->id) + " dropped, no eligible controls");
      }
      continue;
    }
    std::sort(eligible.begin(), eligible.end());
    RiskSetInstance inst;
    inst.disease_id = disease_id;
    inst.case_id = c->id;
    inst.baseline_age_days = c->baseline;
    inst.onset_gap_years = (c->onset_age - c->baseline) / 365.0;
    auto picks = rng.sample_without_replacement(eligible.size(),
                                                static_cast<size_t>(controls_per_case));
    for (size_t p : picks) inst.control_ids.push_back(eligible[p]);
    std::sort(inst.control_ids.begin(), inst.control_ids.end());
    out.push_back(std::move(inst));
  }
  return out;
}

int DiseasePanel::index_of(int disease_id) const {
  for (size_t i = 0; i < disease_ids.size(); ++i) {
    if (disease_ids[i] == disease_id) return static_cast<int>(i);
  }
  return -1;
}

DiseasePanel build_disease_panel(const std::vector<OutcomeLabel>& labels,
                                 const std::unordered_map<int64_t, double>& imaging_age_days,
                                 int min_cases) {
  std::map<int, int> case_counts;
  std::map<int, int> considered;
  for (const OutcomeLabel& row : labels) {
    auto it = imaging_age_days.find(row.subject_id);
    if (it == imaging_age_days.end()) continue;
    considered[row.disease_id] += 1;
    if (row.onset && row.onset_age_days > it->second) case_counts[row.disease_id] += 1;
  }

  struct Entry {
    int disease_id;
    int n_cases;
    double prevalence;
  };
  std::vector<Entry> kept;
  for (const auto& [disease, n] : considered) {
    int cases = case_counts.count(disease) ? case_counts[disease] : 0;
    if (cases >= min_cases) {
      kept.push_back({disease, cases, static_cast<double>(cases) / static_cast<double>(n)});
    }
  }
  std::sort(kept.begin(), kept.end(), [](const Entry& a, const Entry& b) {
    if (a.prevalence != b.prevalence) return a.prevalence < b.prevalence;
    return a.disease_id < b.disease_id;
  });

  DiseasePanel panel;
  const int k = static_cast<int>(kept.size());
  for (int i = 0; i < k; ++i) {
    panel.disease_ids.push_back(kept[static_cast<size_t>(i)].disease_id);
    panel.n_cases.push_back(kept[static_cast<size_t>(i)].n_cases);
    panel.prevalence.push_back(kept[static_cast<size_t>(i)].prevalence);
    panel.tertile.push_back(i * 3 / k);  // even partition by prevalence rank
  }
  return panel;
}

}  // namespace trajphen
