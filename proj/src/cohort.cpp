#include "trajphen/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trajphen {

std::string stage_to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Distill: return "distill";
    case Stage::DownTrain: return "downstream-train";
    case Stage::DownVal: return "downstream-val";
    case Stage::DownTest: return "downstream-test";
  }
  throw std::logic_error("unreachable");
}

Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "distill") return Stage::Distill;
  if (s == "downstream-train") return Stage::DownTrain;
  if (s == "downstream-val") return Stage::DownVal;
  if (s == "downstream-test") return Stage::DownTest;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

void SplitRegistry::assign(int64_t subject_id, Stage stage) {
  auto [it, inserted] = map_.emplace(subject_id, stage);
  if (!inserted && it->second != stage) {
    throw std::invalid_argument("SplitRegistry: subject " + std::to_string(subject_id) +
                                " already tagged '" + stage_to_string(it->second) +
                                "', cannot retag '" + stage_to_string(stage) + "'");
  }
}

Stage SplitRegistry::stage_of(int64_t subject_id) const {
  auto it = map_.find(subject_id);
  if (it == map_.end()) {
    throw std::invalid_argument("SplitRegistry: unknown subject " + std::to_string(subject_id));
  }
  return it->second;
}

std::vector<int64_t> SplitRegistry::subjects_in(Stage stage) const {
  std::vector<int64_t> out;
  for (const auto& [id, s] : map_) {
    if (s == stage) out.push_back(id);
  }
  return out;
}

std::vector<int64_t> SplitRegistry::downstream_subjects() const {
  std::vector<int64_t> out;
  for (const auto& [id, s] : map_) {
    if (s == Stage::DownTrain || s == Stage::DownVal || s == Stage::DownTest) out.push_back(id);
  }
  return out;
}

void CohortConfig::validate() const {
  if (n_pretrain < 0 || n_distill < 2 || n_down_train < 1 || n_down_val < 1 || n_down_test < 1) {
    throw std::invalid_argument("CohortConfig: stage sizes too small");
  }
  if (vocab_diseases < 1 || k < 1 || n_eval_diseases < 1 || n_eval_diseases > vocab_diseases) {
    throw std::invalid_argument("CohortConfig: bad vocabulary or latent sizes");
  }
  if (!(eval_prev_lo > 0.0) || !(eval_prev_hi < 1.0) || eval_prev_lo > eval_prev_hi) {
    throw std::invalid_argument("CohortConfig: eval prevalence range invalid");
  }
  if (organ_names.size() != organ_dims.size() || organ_names.empty()) {
    throw std::invalid_argument("CohortConfig: organ names and dims must align");
  }
  if (missing_rate < 0.0 || missing_rate >= 1.0) {
    throw std::invalid_argument("CohortConfig: missing_rate must lie in [0,1)");
  }
  if (!(imaging_age_lo_years < imaging_age_hi_years) ||
      !(imaging_age_hi_years + horizon_years <= max_age_years)) {
    throw std::invalid_argument(
        "CohortConfig: need imaging_age_lo < imaging_age_hi and imaging + horizon <= max_age");
  }
  if (!(min_event_age_years >= 0.0) || !(min_event_age_years < imaging_age_lo_years)) {
    throw std::invalid_argument(
        "CohortConfig: min_event_age must be non-negative and below imaging_age_lo");
  }
  if (shared_structure == false && k < 2) {
    throw std::invalid_argument("CohortConfig: disjoint supports need k >= 2");
  }
  if (max_events < 1) throw std::invalid_argument("CohortConfig: max_events must be positive");
}

nlohmann::json CohortConfig::to_json() const {
  return {{"n_pretrain", n_pretrain},
          {"n_distill", n_distill},
          {"n_down_train", n_down_train},
          {"n_down_val", n_down_val},
          {"n_down_test", n_down_test},
          {"vocab_diseases", vocab_diseases},
          {"k", k},
          {"n_eval_diseases", n_eval_diseases},
          {"eval_prev_lo", eval_prev_lo},
          {"eval_prev_hi", eval_prev_hi},
          {"background_rate_lo", background_rate_lo},
          {"background_rate_hi", background_rate_hi},
          {"traj_loading_scale", traj_loading_scale},
          {"idp_loading_scale", idp_loading_scale},
          {"sigma_traj", sigma_traj},
          {"sigma_idp", sigma_idp},
          {"shared_structure", shared_structure},
          {"organ_names", organ_names},
          {"organ_dims", organ_dims},
          {"missing_rate", missing_rate},
          {"imaging_age_lo_years", imaging_age_lo_years},
          {"min_event_age_years", min_event_age_years},
          {"imaging_age_hi_years", imaging_age_hi_years},
          {"max_age_years", max_age_years},
          {"horizon_years", horizon_years},
          {"max_events", max_events},
          {"seed", seed}};
}

CohortConfig CohortConfig::from_json(const nlohmann::json& j) {
  CohortConfig c;
  c.n_pretrain = j.value("n_pretrain", c.n_pretrain);
  c.n_distill = j.value("n_distill", c.n_distill);
  c.n_down_train = j.value("n_down_train", c.n_down_train);
  c.n_down_val = j.value("n_down_val", c.n_down_val);
  c.n_down_test = j.value("n_down_test", c.n_down_test);
  c.vocab_diseases = j.value("vocab_diseases", c.vocab_diseases);
  c.k = j.value("k", c.k);
  c.n_eval_diseases = j.value("n_eval_diseases", c.n_eval_diseases);
  c.eval_prev_lo = j.value("eval_prev_lo", c.eval_prev_lo);
  c.eval_prev_hi = j.value("eval_prev_hi", c.eval_prev_hi);
  c.background_rate_lo = j.value("background_rate_lo", c.background_rate_lo);
  c.background_rate_hi = j.value("background_rate_hi", c.background_rate_hi);
  c.traj_loading_scale = j.value("traj_loading_scale", c.traj_loading_scale);
  c.idp_loading_scale = j.value("idp_loading_scale", c.idp_loading_scale);
  c.sigma_traj = j.value("sigma_traj", c.sigma_traj);
  c.sigma_idp = j.value("sigma_idp", c.sigma_idp);
  c.shared_structure = j.value("shared_structure", c.shared_structure);
  c.organ_names = j.value("organ_names", c.organ_names);
  c.organ_dims = j.value("organ_dims", c.organ_dims);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  c.imaging_age_lo_years = j.value("imaging_age_lo_years", c.imaging_age_lo_years);
  c.min_event_age_years = j.value("min_event_age_years", c.min_event_age_years);
  c.imaging_age_hi_years = j.value("imaging_age_hi_years", c.imaging_age_hi_years);
  c.max_age_years = j.value("max_age_years", c.max_age_years);
  c.horizon_years = j.value("horizon_years", c.horizon_years);
  c.max_events = j.value("max_events", c.max_events);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json CohortTruth::to_json() const {
  return {{"vocab_diseases", vocab_diseases},
          {"k", k},
          {"traj_loading", traj_loading},
          {"idp_loading", idp_loading},
          {"base_rate_per_day", base_rate_per_day},
          {"eval_disease_tokens", eval_disease_tokens}};
}

CohortTruth CohortTruth::from_json(const nlohmann::json& j) {
  CohortTruth t;
  t.vocab_diseases = j.at("vocab_diseases").get<int>();
  t.k = j.at("k").get<int>();
  t.traj_loading = j.at("traj_loading").get<std::vector<double>>();
  t.idp_loading = j.at("idp_loading").get<std::vector<std::vector<double>>>();
  t.base_rate_per_day = j.at("base_rate_per_day").get<std::vector<double>>();
  t.eval_disease_tokens = j.at("eval_disease_tokens").get<std::vector<int>>();
  return t;
}

std::vector<double> subject_hazards_per_day(const CohortTruth& truth, double sigma_traj,
                                            const std::vector<double>& u, Rng& stream) {
  const int v = truth.vocab_diseases, k = truth.k;
  std::vector<double> rates(static_cast<size_t>(v));
  for (int j = 0; j < v; ++j) {
    double lin = 0.0;
    for (int c = 0; c < k; ++c) {
      lin += truth.traj_loading[static_cast<size_t>(j * k + c)] * u[static_cast<size_t>(c)];
    }
    if (sigma_traj != 0.0) lin += sigma_traj * stream.normal();
    rates[static_cast<size_t>(j)] = truth.base_rate_per_day[static_cast<size_t>(j)] * std::exp(lin);
  }
  return rates;
}

std::vector<SampledEvent> sample_event_stream(const std::vector<double>& rate_per_day,
                                              double max_age_days, Rng& stream, int safety_cap,
                                              double start_age_days) {
  double total = 0.0;
  for (double r : rate_per_day) {
    if (r < 0.0) throw std::invalid_argument("sample_event_stream: negative rate");
    total += r;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_event_stream: all hazards are zero");
  std::vector<SampledEvent> events;
  double t = start_age_days;
  while (static_cast<int>(events.size()) < safety_cap) {
    t += stream.exponential(total);
    if (t > max_age_days) break;
    int j = static_cast<int>(stream.categorical(rate_per_day));
    events.push_back({j, t});
  }
  return events;
}

double calibrate_rate_per_year(double target_incident_prevalence, double mean_baseline_years,
                               double min_event_age_years, double max_age_years) {
  const double t = mean_baseline_years - min_event_age_years;  // pre-baseline exposure
  const double w = max_age_years - mean_baseline_years;        // follow-up window
  if (t <= 0.0 || w <= 0.0) {
    throw std::invalid_argument("calibrate_rate_per_year: degenerate exposure windows");
  }
  auto incident = [&](double h) { return std::exp(-h * t) * (1.0 - std::exp(-h * (w))); };
  const double h_peak = std::log((t + w) / t) / w;
  const double peak = incident(h_peak);
  if (!(target_incident_prevalence > 0.0) || target_incident_prevalence >= peak) {
    throw std::invalid_argument("calibrate_rate_per_year: target prevalence " +
                                std::to_string(target_incident_prevalence) +
                                " is not reachable (max " + std::to_string(peak) + ")");
  }
  double lo = 0.0, hi = h_peak;
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    (incident(mid) < target_incident_prevalence ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double oracle_risk(double rate_per_day, double horizon_days) {
  return 1.0 - std::exp(-rate_per_day * horizon_days);
}

GeneratedCohort generate_cohort(const CohortConfig& cfg) {
  cfg.validate();
  GeneratedCohort out;
  out.config = cfg;

  Rng master(cfg.seed);
  CohortTruth& truth = out.truth;
  truth.vocab_diseases = cfg.vocab_diseases;
  truth.k = cfg.k;

  // factor supports: full overlap when shared, disjoint halves otherwise
  const int k = cfg.k;
  int traj_lo = 0, traj_hi = k;
  int idp_lo = 0, idp_hi = k;
  if (!cfg.shared_structure) {
    traj_hi = k / 2;
    idp_lo = k / 2;
  }
  const double traj_std =
      cfg.traj_loading_scale / std::sqrt(static_cast<double>(traj_hi - traj_lo));
  const double idp_std = cfg.idp_loading_scale / std::sqrt(static_cast<double>(idp_hi - idp_lo));

  truth.traj_loading.assign(static_cast<size_t>(cfg.vocab_diseases * k), 0.0);
  for (int j = 0; j < cfg.vocab_diseases; ++j) {
    for (int c = traj_lo; c < traj_hi; ++c) {
      truth.traj_loading[static_cast<size_t>(j * k + c)] = master.normal(0.0, traj_std);
    }
  }
  for (int d_o : cfg.organ_dims) {
    std::vector<double> b(static_cast<size_t>(d_o * k), 0.0);
    for (int f = 0; f < d_o; ++f) {
      for (int c = idp_lo; c < idp_hi; ++c) {
        b[static_cast<size_t>(f * k + c)] = master.normal(0.0, idp_std);
      }
    }
    truth.idp_loading.push_back(std::move(b));
  }

  // evaluated diseases carry log-spaced target prevalences over the horizon;
  // the rest form low-rate comorbidity background
  truth.base_rate_per_day.assign(static_cast<size_t>(cfg.vocab_diseases), 0.0);
  const double mean_baseline = 0.5 * (cfg.imaging_age_lo_years + cfg.imaging_age_hi_years);
  for (int e = 0; e < cfg.n_eval_diseases; ++e) {
    double f = cfg.n_eval_diseases == 1
                   ? 0.0
                   : static_cast<double>(e) / static_cast<double>(cfg.n_eval_diseases - 1);
    double p = cfg.eval_prev_lo * std::pow(cfg.eval_prev_hi / cfg.eval_prev_lo, f);
    double rate_per_year = calibrate_rate_per_year(p, mean_baseline, cfg.min_event_age_years,
                                                   cfg.max_age_years);
    truth.base_rate_per_day[static_cast<size_t>(e)] = rate_per_year / 365.0;
    truth.eval_disease_tokens.push_back(kFirstDiseaseToken + e);
  }
  for (int j = cfg.n_eval_diseases; j < cfg.vocab_diseases; ++j) {
    double rate_per_year;
    if (cfg.background_rate_hi <= 0.0) {
      rate_per_year = 0.0;
    } else {
      double lo = std::max(cfg.background_rate_lo, 1e-12);
      rate_per_year = lo * std::pow(cfg.background_rate_hi / lo, master.uniform());
    }
    truth.base_rate_per_day[static_cast<size_t>(j)] = rate_per_year / 365.0;
  }

  const int64_t n_total =
      cfg.n_pretrain + cfg.n_distill + cfg.n_down_train + cfg.n_down_val + cfg.n_down_test;
  auto stage_of_index = [&](int64_t i) {
    if (i < cfg.n_pretrain) return Stage::Pretrain;
    i -= cfg.n_pretrain;
    if (i < cfg.n_distill) return Stage::Distill;
    i -= cfg.n_distill;
    if (i < cfg.n_down_train) return Stage::DownTrain;
    i -= cfg.n_down_train;
    if (i < cfg.n_down_val) return Stage::DownVal;
    return Stage::DownTest;
  };

  const double max_age_days = cfg.max_age_years * 365.0;
  int64_t total_idp_dim = 0;
  for (int d_o : cfg.organ_dims) total_idp_dim += d_o;

  for (size_t o = 0; o < cfg.organ_names.size(); ++o) {
    for (int f = 0; f < cfg.organ_dims[o]; ++f) {
      out.idps.columns.push_back(cfg.organ_names[o] + ".f" + std::to_string(f));
    }
  }

  for (int64_t i = 0; i < n_total; ++i) {
    const int64_t subject_id = i + 1;
    const Stage stage = stage_of_index(i);
    Rng stream = Rng::substream(cfg.seed, static_cast<uint64_t>(subject_id));

    LatentSubject subj;
    subj.subject_id = subject_id;
    subj.u.resize(static_cast<size_t>(k));
    for (double& v : subj.u) v = stream.normal();
    subj.imaging_age_days =
        stream.uniform(cfg.imaging_age_lo_years * 365.0, cfg.imaging_age_hi_years * 365.0);

    std::vector<double> rates = subject_hazards_per_day(truth, cfg.sigma_traj, subj.u, stream);
    std::vector<SampledEvent> events = sample_event_stream(
        rates, max_age_days, stream, 4096, cfg.min_event_age_years * 365.0);

    Trajectory traj;
    traj.subject_id = subject_id;
    for (const SampledEvent& ev : events) {
      if (static_cast<int>(traj.codes.size()) >= cfg.max_events) break;
      traj.codes.push_back(kFirstDiseaseToken + ev.disease_index);
      traj.ages_days.push_back(ev.age_days);
    }
    out.trajectories.push_back(std::move(traj));

    const bool imaged = stage != Stage::Pretrain;
    if (imaged) {
      out.idps.subject_ids.push_back(subject_id);
      for (size_t o = 0; o < cfg.organ_dims.size(); ++o) {
        const int d_o = cfg.organ_dims[o];
        const auto& b = truth.idp_loading[o];
        for (int f = 0; f < d_o; ++f) {
          double v = 0.0;
          for (int c = 0; c < k; ++c) {
            v += b[static_cast<size_t>(f * k + c)] * subj.u[static_cast<size_t>(c)];
          }
          v += cfg.sigma_idp * stream.normal();
          out.idps.values.push_back(v);
          out.idps.present.push_back(stream.uniform() < cfg.missing_rate ? 0 : 1);
        }
      }
    }

    const bool downstream =
        stage == Stage::DownTrain || stage == Stage::DownVal || stage == Stage::DownTest;
    if (downstream) {
      // first occurrence per evaluated disease from the full sampled stream
      for (int e = 0; e < cfg.n_eval_diseases; ++e) {
        OutcomeLabel label;
        label.subject_id = subject_id;
        label.disease_id = kFirstDiseaseToken + e;
        for (const SampledEvent& ev : events) {
          if (ev.disease_index == e) {
            label.onset = true;
            label.onset_age_days = ev.age_days;
            break;
          }
        }
        out.labels.push_back(label);
      }
    }

    out.registry.assign(subject_id, stage);
    out.subjects.push_back(std::move(subj));
  }
  return out;
}

}  // namespace trajphen
