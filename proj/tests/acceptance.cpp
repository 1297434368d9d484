// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy artifacts (cohort, teacher, distillation) are built once
// through the pipeline stages and shared by the criteria that need them.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "testutil.hpp"
#include "trajphen/checkpoint.hpp"
#include "trajphen/cohort.hpp"
#include "trajphen/distill.hpp"
#include "trajphen/fusion.hpp"
#include "trajphen/geometry.hpp"
#include "trajphen/io.hpp"
#include "trajphen/pipeline.hpp"
#include "trajphen/risk_sets.hpp"
#include "trajphen/stats.hpp"
#include "trajphen/trajectory_model.hpp"

using namespace trajphen;
using trajphen::testutil::finite_diff_max_rel_err;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Outcome> g_outcomes;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void record(int id, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
  g_outcomes.push_back({id, name, pass, detail, seconds});
  std::printf("[%s] %d. %s: %s (%.1fs)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str(), seconds);
  std::fflush(stdout);
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central differences on random configs

void criterion_gradients() {
  Timer timer;
  Rng rng(101);
  double worst = 0.0;
  int configs = 0;
  auto track = [&](double err) {
    worst = std::max(worst, err);
    ++configs;
  };

  // joint trajectory loss on random small models
  for (int trial = 0; trial < 6; ++trial) {
    TrajModelConfig mc;
    mc.vocab_size = 5 + static_cast<int>(rng.below(4));
    mc.d_model = 8;
    mc.n_layers = 1 + static_cast<int>(rng.below(2));
    mc.n_heads = 2;
    mc.max_seq_len = 10;
    mc.age_basis_dim = 4;
    mc.mlp_hidden = 12;
    mc.lambda_time = trial % 2 == 0 ? 1.0 : 0.3;
    TrajectoryModel model(mc, 300 + static_cast<uint64_t>(trial));
    for (double& v : model.params().find("traj.head.w")->data()) v = rng.normal(0.0, 0.3);
    std::vector<Trajectory> trajs;
    for (int s = 0; s < 3; ++s) {
      Trajectory t;
      t.subject_id = s;
      double age = rng.uniform(1000.0, 3000.0);
      int len = 2 + static_cast<int>(rng.below(5));
      for (int e = 0; e < len; ++e) {
        t.codes.push_back(kFirstDiseaseToken +
                          static_cast<int>(rng.below(mc.vocab_size - kFirstDiseaseToken)));
        t.ages_days.push_back(age);
        age += rng.uniform(10.0, 900.0);
      }
      trajs.push_back(std::move(t));
    }
    TokenBatch batch = make_token_batch(trajs, mc.max_seq_len);
    track(finite_diff_max_rel_err(
        [&] { return model.joint_loss(model.forward(batch), batch); }, model.params().tensors()));
  }

  // infonce and mse through projection heads
  for (int trial = 0; trial < 9; ++trial) {
    int n = 3 + static_cast<int>(rng.below(4));
    int d_in = 4 + static_cast<int>(rng.below(4));
    ProjectionHeads heads(d_in, d_in + 1, 4, 6, 0.07 + 0.1 * rng.uniform(),
                          400 + static_cast<uint64_t>(trial));
    Tensor ei({n, d_in});
    Tensor et({n, d_in + 1});
    for (double& v : ei.data()) v = rng.normal();
    for (double& v : et.data()) v = rng.normal();
    bool use_mse = trial >= 5;
    track(finite_diff_max_rel_err(
        [&] {
          Tensor zi = heads.project_idp(ei);
          Tensor zt = heads.project_traj(et);
          return use_mse ? mse_from_projections(zi, zt)
                         : infonce_from_projections(zi, zt, heads.tau());
        },
        heads.params().tensors()));
  }

  // fusion BCE + L1 across modes
  const char* modes[] = {"idp_only", "concat", "xattn", "traj_only", "xattn"};
  for (int trial = 0; trial < 5; ++trial) {
    IdpEncoderConfig ec;
    ec.organ_dims = {2, 3};
    ec.d = 6;
    ec.d_e = 2;
    ec.n_layers = 1;
    ec.n_heads = 2;
    ec.mlp_hidden = 8;
    FusionConfig fc;
    fc.mode = fusion_mode_from_string(modes[trial]);
    fc.n_heads = 2;
    fc.n_diseases = 2;
    fc.d_traj = 5;
    fc.lambda_mae = trial == 0 ? 0.0 : 1.0;
    FusionModel model(fc, fc.mode == FusionMode::TrajOnly ? nullptr : &ec,
                      500 + static_cast<uint64_t>(trial));
    DownstreamDataset ds;
    ds.disease_ids = {1, 2};
    int n = 5;
    for (int i = 0; i < n; ++i) {
      ds.subject_ids.push_back(i + 1);
      IdpRecord rec;
      rec.subject_id = i + 1;
      for (int d_o : ec.organ_dims) {
        std::vector<double> x(static_cast<size_t>(d_o));
        for (double& v : x) v = rng.normal();
        rec.organs.push_back(std::move(x));
      }
      ds.records.push_back(std::move(rec));
      std::vector<double> emb(5);
      for (double& v : emb) v = rng.normal();
      ds.traj.append(i + 1, emb);
      for (int d = 0; d < 2; ++d) {
        bool case_flag = rng.uniform() < 0.4;
        bool prevalent = !case_flag && rng.uniform() < 0.2;
        ds.is_case.push_back(case_flag ? 1 : 0);
        ds.prevalent.push_back(prevalent ? 1 : 0);
        ds.gap_years.push_back(case_flag ? rng.uniform(0.5, 5.0) : 0.0);
      }
    }
    ds.validate();
    std::vector<size_t> idx = {0, 1, 2, 3, 4};
    track(finite_diff_max_rel_err(
        [&] { return downstream_loss(model, predict_batch(model, ds, idx), ds, idx); },
        model.all_params().tensors()));
  }

  bool pass = configs >= 20 && worst < 1e-4 && timer.seconds() < 60.0;
  record(1, "gradient-correctness", pass,
         std::to_string(configs) + " configs, max rel err " + fmt(worst), timer.seconds());
}

// ---------------------------------------------------------------------------
// criterion 2: infonce at random unit embeddings concentrates at ln N

void criterion_infonce_baseline() {
  Timer timer;
  Rng rng(202);
  const int64_t n = 64, d = 4096;
  double mean = 0.0;
  for (int b = 0; b < 100; ++b) {
    Tensor zi({n, d}), zt({n, d});
    for (Tensor* t : {&zi, &zt}) {
      for (int64_t r = 0; r < n; ++r) {
        double norm = 0.0;
        for (int64_t c = 0; c < d; ++c) {
          double v = rng.normal();
          t->data()[r * d + c] = v;
          norm += v * v;
        }
        norm = std::sqrt(norm);
        for (int64_t c = 0; c < d; ++c) t->data()[r * d + c] /= norm;
      }
    }
    NoGradGuard ng;
    mean += infonce_from_projections(zi, zt, 0.07).value();
  }
  mean /= 100.0;
  double target = std::log(64.0);
  bool pass = std::fabs(mean - target) < 0.15 && timer.seconds() < 10.0;
  record(2, "infonce-random-baseline", pass,
         "mean " + fmt(mean) + " vs ln64 " + fmt(target), timer.seconds());
}

// ---------------------------------------------------------------------------
// criterion 3: exact causality and padding invariance over randomized trials

void criterion_causality_padding() {
  Timer timer;
  TrajModelConfig mc;
  mc.vocab_size = 18;
  mc.d_model = 32;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.max_seq_len = 24;
  mc.age_basis_dim = 16;
  mc.mlp_hidden = 64;
  TrajectoryModel model(mc, 303);
  Rng rng(304);
  for (double& v : model.params().find("traj.head.w")->data()) v = rng.normal(0.0, 0.2);

  auto random_traj = [&](int64_t id, int min_len, int max_len) {
    Trajectory t;
    t.subject_id = id;
    int len = min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
    double age = rng.uniform(8000.0, 12000.0);
    for (int e = 0; e < len; ++e) {
      t.codes.push_back(kFirstDiseaseToken +
                        static_cast<int>(rng.below(mc.vocab_size - kFirstDiseaseToken)));
      t.ages_days.push_back(age);
      age += rng.uniform(5.0, 1500.0);
    }
    return t;
  };

  NoGradGuard ng;
  int causal_bad = 0, pad_bad = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    // causality: edit one future token, past logits must be bit-identical
    std::vector<Trajectory> trajs = {random_traj(0, 3, 12), random_traj(1, 3, 12)};
    TokenBatch batch = make_token_batch(trajs, mc.max_seq_len);
    auto base = model.forward(batch);
    TokenBatch edited = batch;
    int64_t b = static_cast<int64_t>(rng.below(2));
    int64_t pos = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(batch.t - 1)));
    edited.tokens[b * batch.t + pos] =
        kFirstDiseaseToken + static_cast<int>(rng.below(mc.vocab_size - kFirstDiseaseToken));
    auto after = model.forward(edited);
    for (int64_t j = 0; j < pos && !causal_bad; ++j) {
      for (int64_t c = 0; c < mc.vocab_size; ++c) {
        double x = base.logits.data()[(b * batch.t + j) * mc.vocab_size + c];
        double y = after.logits.data()[(b * batch.t + j) * mc.vocab_size + c];
        if (std::memcmp(&x, &y, sizeof(double)) != 0) {
          ++causal_bad;
          break;
        }
      }
    }
  }
  for (int trial = 0; trial < trials; ++trial) {
    // padding: pooled embedding of a subject must not change when its row is
    // padded out to a longer batch
    Trajectory solo = random_traj(trial, 2, 12);
    Pooling pooling = trial % 2 == 0 ? Pooling::Mean : Pooling::Weighted;
    std::vector<double> alone = model.embed_subject(solo, 1e12, pooling);

    TokenBatch solo_batch = make_token_batch({solo}, mc.max_seq_len);
    TokenBatch padded = solo_batch;
    padded.t = solo_batch.t + 1 + static_cast<int64_t>(rng.below(6));
    padded.tokens.assign(static_cast<size_t>(padded.t), kPadToken);
    padded.ages.assign(static_cast<size_t>(padded.t), 0.0);
    std::copy(solo_batch.tokens.begin(), solo_batch.tokens.end(), padded.tokens.begin());
    std::copy(solo_batch.ages.begin(), solo_batch.ages.end(), padded.ages.begin());
    auto out = model.forward(padded);

    // pool the real positions of the padded row
    const int64_t t_real = solo_batch.t, d = mc.d_model;
    std::vector<double> pooled(static_cast<size_t>(d), 0.0);
    if (pooling == Pooling::Mean) {
      for (int64_t j = 0; j < t_real; ++j) {
        for (int64_t c = 0; c < d; ++c) pooled[static_cast<size_t>(c)] += out.hidden.data()[j * d + c];
      }
      for (double& v : pooled) v /= static_cast<double>(t_real);
    } else {
      const auto& q = model.params().find("traj.pool_query")->data();
      std::vector<double> scores(static_cast<size_t>(t_real));
      double mx = -1e300;
      for (int64_t j = 0; j < t_real; ++j) {
        double s = 0.0;
        for (int64_t c = 0; c < d; ++c) s += out.hidden.data()[j * d + c] * q[static_cast<size_t>(c)];
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        denom += s;
      }
      for (int64_t j = 0; j < t_real; ++j) {
        for (int64_t c = 0; c < d; ++c) {
          pooled[static_cast<size_t>(c)] += scores[static_cast<size_t>(j)] / denom * out.hidden.data()[j * d + c];
        }
      }
    }
    if (std::memcmp(pooled.data(), alone.data(), pooled.size() * sizeof(double)) != 0) ++pad_bad;
  }

  bool pass = causal_bad == 0 && pad_bad == 0 && timer.seconds() < 60.0;
  record(3, "causality-and-padding", pass,
         std::to_string(trials) + "+" + std::to_string(trials) + " trials, " +
             std::to_string(causal_bad) + " causal / " + std::to_string(pad_bad) +
             " padding violations",
         timer.seconds());
}

// ---------------------------------------------------------------------------
// shared pipeline artifacts for criteria 4-6

const char* kSharedDir = "acceptance_work/shared";
const char* kNullDir = "acceptance_work/nullctl";

RunConfig shared_config() {
  nlohmann::json j;
  j["out"] = kSharedDir;
  j["seed"] = 2024;
  j["teacher"] = {{"epochs", 8}};
  j["distill"] = {{"objectives", nlohmann::json::array({"infonce"})}};
  nlohmann::json variants = nlohmann::json::array();
  for (int s = 0; s < 5; ++s) {
    variants.push_back({{"name", "idp_scratch_s" + std::to_string(s)},
                        {"mode", "idp_only"},
                        {"init", "scratch"}});
    variants.push_back({{"name", "idp_distilled_s" + std::to_string(s)},
                        {"mode", "idp_only"},
                        {"init", "distilled"},
                        {"objective", "infonce"}});
    variants.push_back({{"name", "xattn_distilled_s" + std::to_string(s)},
                        {"mode", "xattn"},
                        {"init", "distilled"},
                        {"objective", "infonce"}});
  }
  j["finetune"] = {{"variants", variants}};
  j["geometry"] = {{"n_perm", 999}};
  return RunConfig::from_json(j);
}

bool g_shared_ready = false;
double g_teacher_seconds = 0.0;
double g_teacher_ce = 0.0, g_teacher_unigram = 0.0;

void criterion_teacher_quality() {
  Timer timer;
  try {
    fs::remove_all("acceptance_work");
    RunConfig cfg = shared_config();
    run_gen_data(cfg);
    Timer teacher_timer;
    run_pretrain_traj(cfg);
    g_teacher_seconds = teacher_timer.seconds();
    auto report = read_json_file(std::string(kSharedDir) + "/teacher/report.json");
    g_teacher_ce = report.at("final_val_ce").get<double>();
    g_teacher_unigram = report.at("unigram_ce").get<double>();
    bool pass = g_teacher_ce <= 0.95 * g_teacher_unigram && g_teacher_seconds < 600.0;
    g_shared_ready = pass || g_teacher_ce < g_teacher_unigram;
    record(4, "teacher-beats-unigram", pass,
           "val CE " + fmt(g_teacher_ce) + " vs unigram " + fmt(g_teacher_unigram) + " (" +
               fmt(100.0 * (1.0 - g_teacher_ce / g_teacher_unigram), 3) + "% better, teacher " +
               fmt(g_teacher_seconds, 3) + "s)",
           timer.seconds());
  } catch (const std::exception& e) {
    record(4, "teacher-beats-unigram", false, std::string("exception: ") + e.what(),
           timer.seconds());
  }
}

void criterion_downstream_gain() {
  Timer timer;
  try {
    if (!g_shared_ready) throw std::runtime_error("shared pipeline unavailable");
    RunConfig cfg = shared_config();
    run_embed(cfg);
    run_distill(cfg);
    run_finetune(cfg);
    run_evaluate(cfg);

    auto metrics_of = [&](const std::string& variant) {
      return read_json_file(std::string(kSharedDir) + "/eval/" + variant + "/metrics.json");
    };
    std::vector<double> deltas;  // per disease x seed
    double scratch_sum = 0.0, distilled_sum = 0.0, xattn_sum = 0.0;
    int n_means = 0;
    int n_diseases = 0;
    for (int s = 0; s < 5; ++s) {
      auto scratch = metrics_of("idp_scratch_s" + std::to_string(s));
      auto distilled = metrics_of("idp_distilled_s" + std::to_string(s));
      auto xattn = metrics_of("xattn_distilled_s" + std::to_string(s));
      n_diseases = static_cast<int>(scratch["diseases"].size());
      for (auto& [key, dj] : scratch["diseases"].items()) {
        if (!dj.contains("auc") || !distilled["diseases"][key].contains("auc")) continue;
        deltas.push_back(distilled["diseases"][key]["auc"].get<double>() -
                         dj["auc"].get<double>());
      }
      scratch_sum += scratch["aggregate"]["mean_auc"].get<double>();
      distilled_sum += distilled["aggregate"]["mean_auc"].get<double>();
      xattn_sum += xattn["aggregate"]["mean_auc"].get<double>();
      ++n_means;
    }
    double mean_delta = 0.0;
    for (double d : deltas) mean_delta += d;
    mean_delta /= static_cast<double>(deltas.size());
    double p = wilcoxon_signed_rank(deltas);
    double scratch_auc = scratch_sum / n_means;
    double distilled_auc = distilled_sum / n_means;
    double xattn_auc = xattn_sum / n_means;
    bool pass = n_diseases == 12 && mean_delta > 0.0 && p < 0.05 &&
                xattn_auc >= distilled_auc && timer.seconds() < 900.0;
    record(5, "distillation-gain-directional", pass,
           "mean dAUC " + fmt(mean_delta) + " over " + std::to_string(deltas.size()) +
               " disease-seed pairs, wilcoxon p " + fmt(p) + "; scratch " + fmt(scratch_auc) +
               " distilled " + fmt(distilled_auc) + " xattn " + fmt(xattn_auc),
           timer.seconds());
  } catch (const std::exception& e) {
    record(5, "distillation-gain-directional", false, std::string("exception: ") + e.what(),
           timer.seconds());
  }
}

void criterion_geometry() {
  Timer timer;
  try {
    if (!g_shared_ready) throw std::runtime_error("shared pipeline unavailable");
    RunConfig cfg = shared_config();
    run_geometry(cfg);
    auto report = read_json_file(std::string(kSharedDir) + "/geometry/report.json");
    double rho = report.at("rho").get<double>();
    double p = report.at("p_perm").get<double>();
    bool shared_ok = rho > 0.1 && p < 0.05;

    // negative control: disjoint latent supports, small cohort, one teacher,
    // five distill+geometry repetitions
    RunConfig null_cfg = shared_config();
    null_cfg.out = kNullDir;
    null_cfg.seed = 3030;
    null_cfg.cohort.shared_structure = false;
    null_cfg.cohort.n_pretrain = 3000;
    null_cfg.cohort.n_distill = 800;
    null_cfg.cohort.n_down_train = 200;
    null_cfg.cohort.n_down_val = 150;
    null_cfg.cohort.n_down_test = 600;
    null_cfg.teacher_epochs = 2;
    run_gen_data(null_cfg);
    run_pretrain_traj(null_cfg);
    run_embed(null_cfg);

    auto [registry, imaging_ages] = read_registry_csv(std::string(kNullDir) + "/cohort/registry.csv");
    RawIdpCohort idps = read_idp_csv(std::string(kNullDir) + "/cohort/idps.csv");
    EmbeddingMatrix teacher_emb = read_embeddings_csv(std::string(kNullDir) + "/teacher/embeddings.csv");
    IdpSchema schema = fit_idp_schema(idps, registry.subjects_in(Stage::DownTrain), 0.2);
    std::vector<IdpRecord> records = apply_idp_schema(idps, schema);
    std::vector<IdpRecord> distill_records;
    for (const IdpRecord& r : records) {
      if (registry.stage_of(r.subject_id) == Stage::Distill) distill_records.push_back(r);
    }
    std::vector<IdpRecord> test_records;
    for (const IdpRecord& r : records) {
      if (registry.stage_of(r.subject_id) == Stage::DownTest) test_records.push_back(r);
    }

    IdpEncoderConfig ec;
    ec.organ_dims = schema.organ_dims;
    int null_insignificant = 0;
    std::vector<double> null_ps;
    for (int s = 0; s < 5; ++s) {
      IdpEncoder student(ec, 7000 + static_cast<uint64_t>(s));
      ProjectionHeads heads(ec.d, teacher_emb.dim, 32, 32, 0.07, 7100 + static_cast<uint64_t>(s));
      DistillConfig dc;
      dc.epochs = cfg.distill_epochs;
      dc.batch_size = cfg.distill_batch_size;
      dc.seed = 7200 + static_cast<uint64_t>(s);
      distill_pretrain(student, heads, distill_records, teacher_emb, dc,
                       registry.downstream_subjects());

      EmbeddingMatrix student_emb;
      NoGradGuard ng;
      for (size_t start = 0; start < test_records.size(); start += 256) {
        size_t end = std::min(test_records.size(), start + 256);
        std::vector<size_t> idx;
        for (size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor cls = student.forward(organ_batch(test_records, idx)).cls;
        for (size_t i = start; i < end; ++i) {
          const double* row = cls.data().data() + static_cast<int64_t>(i - start) * ec.d;
          student_emb.append(test_records[i].subject_id, std::vector<double>(row, row + ec.d));
        }
      }
      auto null_report = geometry_alignment(student_emb, teacher_emb, cfg.geometry_n_pairs,
                                            cfg.geometry_n_bins, 999, 200,
                                            7300 + static_cast<uint64_t>(s));
      null_ps.push_back(null_report.p_perm);
      if (null_report.p_perm > 0.05) ++null_insignificant;
    }

    bool pass = shared_ok && null_insignificant >= 4;
    std::string null_str;
    for (double np : null_ps) null_str += fmt(np, 3) + " ";
    record(6, "geometry-alignment-directional", pass,
           "shared rho " + fmt(rho) + " p " + fmt(p) + "; null p values [" + null_str +
               "] insignificant " + std::to_string(null_insignificant) + "/5",
           timer.seconds());
  } catch (const std::exception& e) {
    record(6, "geometry-alignment-directional", false, std::string("exception: ") + e.what(),
           timer.seconds());
  }
}

// ---------------------------------------------------------------------------
// criterion 7: statistical oracles

double wilcoxon_oracle(const std::vector<double>& deltas) {
  std::vector<double> nz;
  for (double d : deltas) {
    if (d != 0.0) nz.push_back(d);
  }
  if (nz.empty()) return 1.0;
  std::vector<double> av(nz.size());
  for (size_t i = 0; i < nz.size(); ++i) av[i] = std::fabs(nz[i]);
  std::vector<double> ranks = average_ranks(av);
  double w_plus = 0.0, total = 0.0;
  for (size_t i = 0; i < nz.size(); ++i) {
    total += ranks[i];
    if (nz[i] > 0.0) w_plus += ranks[i];
  }
  double lo = std::min(w_plus, total - w_plus), hi = std::max(w_plus, total - w_plus);
  std::vector<double> sums = {0.0};
  for (double r : ranks) {
    std::vector<double> next;
    next.reserve(sums.size() * 2);
    for (double s : sums) {
      next.push_back(s);
      next.push_back(s + r);
    }
    sums = std::move(next);
  }
  int64_t count = 0;
  for (double s : sums) {
    if (s <= lo || s >= hi) ++count;
  }
  return std::min(1.0, static_cast<double>(count) / static_cast<double>(sums.size()));
}

void criterion_stat_oracles() {
  Timer timer;
  Rng rng(707);
  bool wilcoxon_ok = true;
  for (int trial = 0; trial < 80; ++trial) {
    size_t n = 1 + rng.below(12);
    std::vector<double> deltas(n);
    for (double& d : deltas) d = (static_cast<double>(rng.below(9)) - 4.0) / 2.0;
    if (std::fabs(wilcoxon_signed_rank(deltas) - wilcoxon_oracle(deltas)) > 1e-12) {
      wilcoxon_ok = false;
    }
  }

  bool auc_ok = true;
  int auc_checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    size_t n = 5 + rng.below(50);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(12)) / 11.0;
      labels[i] = rng.uniform() < 0.4 ? 1 : 0;
      pos |= labels[i] == 1;
      neg |= labels[i] == 0;
    }
    if (!pos || !neg) continue;
    ++auc_checked;
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] != 1) continue;
      for (size_t j = 0; j < n; ++j) {
        if (labels[j] != 0) continue;
        ++pairs;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    }
    if (*auc(scores, labels) != wins / static_cast<double>(pairs)) auc_ok = false;
  }

  int null_in_range = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng r2(9000 + static_cast<uint64_t>(seed));
    std::vector<double> x(50), y(50);
    for (double& v : x) v = r2.normal();
    for (double& v : y) v = r2.normal();
    auto sp = spearman_perm(x, y, 199, 9500 + static_cast<uint64_t>(seed));
    if (sp && sp->p >= 0.01 && sp->p <= 0.99) ++null_in_range;
  }

  bool pass = wilcoxon_ok && auc_ok && auc_checked >= 90 && null_in_range >= 93;
  record(7, "statistical-oracles", pass,
         std::string("wilcoxon exact ") + (wilcoxon_ok ? "ok" : "BAD") + ", auc exact on " +
             std::to_string(auc_checked) + " instances " + (auc_ok ? "ok" : "BAD") +
             ", null perm p in [0.01,0.99] " + std::to_string(null_in_range) + "/100",
         timer.seconds());
}

// ---------------------------------------------------------------------------
// criterion 8: risk sets vs brute-force eligibility scan

void criterion_risk_sets() {
  Timer timer;
  Rng rng(808);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    int n = 10 + static_cast<int>(rng.below(60));
    std::vector<OutcomeLabel> labels;
    std::unordered_map<int64_t, double> imaging;
    for (int s = 1; s <= n; ++s) {
      imaging[s] = rng.uniform(40 * 365.0, 70 * 365.0);
      bool onset = rng.uniform() < 0.5;
      labels.push_back({s, 9, onset, onset ? rng.uniform(35 * 365.0, 85 * 365.0) : 0.0});
    }
    auto sets = build_risk_sets(labels, imaging, 9, n + 5, static_cast<uint64_t>(trial));

    std::vector<std::pair<int64_t, std::set<int64_t>>> expected;
    for (const auto& c : labels) {
      if (!c.onset || c.onset_age_days <= imaging[c.subject_id]) continue;
      std::set<int64_t> elig;
      for (const auto& o : labels) {
        if (o.subject_id == c.subject_id) continue;
        if (o.onset && o.onset_age_days <= imaging[o.subject_id]) continue;
        if (!(imaging[o.subject_id] < c.onset_age_days)) continue;
        if (o.onset && o.onset_age_days <= c.onset_age_days) continue;
        elig.insert(o.subject_id);
      }
      if (!elig.empty()) expected.emplace_back(c.subject_id, std::move(elig));
    }
    if (sets.size() != expected.size()) {
      ++bad;
      continue;
    }
    for (size_t i = 0; i < sets.size(); ++i) {
      std::set<int64_t> got(sets[i].control_ids.begin(), sets[i].control_ids.end());
      if (sets[i].case_id != expected[i].first || got != expected[i].second) {
        ++bad;
        break;
      }
    }
  }
  record(8, "risk-set-brute-force", bad == 0,
         "50 random label configurations, " + std::to_string(bad) + " mismatches",
         timer.seconds());
}

// ---------------------------------------------------------------------------
// criterion 9: byte-identical reruns

void criterion_reproducibility() {
  Timer timer;
  try {
    auto make_cfg = [](const std::string& out) {
      nlohmann::json j;
      j["out"] = out;
      j["seed"] = 99;
      j["cohort"] = {{"n_pretrain", 150}, {"n_distill", 100}, {"n_down_train", 70},
                     {"n_down_val", 50},  {"n_down_test", 90}, {"n_eval_diseases", 6},
                     {"vocab_diseases", 24}};
      j["teacher"] = {{"epochs", 1}, {"d_model", 32}, {"mlp_hidden", 64}, {"age_basis_dim", 16}};
      j["distill"] = {{"epochs", 2}, {"batch_size", 64}};
      j["finetune"] = {{"epochs", 2},
                       {"variants", nlohmann::json::array(
                                        {{{"name", "idp_scratch"}, {"mode", "idp_only"},
                                          {"init", "scratch"}},
                                         {{"name", "xattn_infonce"},
                                          {"mode", "xattn"},
                                          {"init", "distilled"},
                                          {"objective", "infonce"}}})}};
      j["eval"] = {{"min_cases", 2}, {"controls_per_case", 3}};
      j["geometry"] = {{"n_pairs", 400}, {"n_perm", 99}, {"n_boot", 50}};
      return RunConfig::from_json(j);
    };
    fs::remove_all("acceptance_work/repro_a");
    fs::remove_all("acceptance_work/repro_b");
    run_all(make_cfg("acceptance_work/repro_a"));
    run_all(make_cfg("acceptance_work/repro_b"));

    std::vector<std::string> rels = {"/teacher/teacher.ckpt",
                                     "/teacher/embeddings.csv",
                                     "/distill/infonce/student.ckpt",
                                     "/finetune/idp_scratch/model.ckpt",
                                     "/finetune/xattn_infonce/model.ckpt",
                                     "/eval/idp_scratch/metrics.json",
                                     "/eval/xattn_infonce/metrics.json",
                                     "/eval/summary.json",
                                     "/geometry/report.json",
                                     "/manifest.json"};
    int mismatches = 0;
    for (const std::string& rel : rels) {
      if (sha256_file("acceptance_work/repro_a" + rel) !=
          sha256_file("acceptance_work/repro_b" + rel)) {
        ++mismatches;
      }
    }
    record(9, "byte-identical-reruns", mismatches == 0,
           std::to_string(rels.size()) + " artifacts compared, " + std::to_string(mismatches) +
               " mismatches",
           timer.seconds());
  } catch (const std::exception& e) {
    record(9, "byte-identical-reruns", false, std::string("exception: ") + e.what(),
           timer.seconds());
  }
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_infonce_baseline();
  criterion_causality_padding();
  criterion_teacher_quality();
  criterion_downstream_gain();
  criterion_geometry();
  criterion_stat_oracles();
  criterion_risk_sets();
  criterion_reproducibility();

  int failed = 0;
  for (const Outcome& o : g_outcomes) failed += o.pass ? 0 : 1;
  std::printf("%d/%d criteria passed\n", static_cast<int>(g_outcomes.size()) - failed,
              static_cast<int>(g_outcomes.size()));
  return failed == 0 ? 0 : 1;
}
