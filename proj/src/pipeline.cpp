#include "trajphen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "trajphen/checkpoint.hpp"
#include "trajphen/errors.hpp"
#include "trajphen/geometry.hpp"
#include "trajphen/io.hpp"
#include "trajphen/risk_sets.hpp"
#include "trajphen/stats.hpp"

namespace trajphen {

namespace fs = std::filesystem;

uint64_t derive_seed(uint64_t global, const std::string& tag) {
  uint64_t h = 1469598103934665603ULL ^ global;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDULL;
  h ^= h >> 33;
  return h;
}

void apply_override(nlohmann::json& config, const std::string& dotted) {
  auto eq = dotted.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + dotted + "' is not of the form path.to.key=value");
  }
  std::string path = dotted.substr(0, eq);
  std::string value = dotted.substr(eq + 1);
  nlohmann::json* node = &config;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override '" + dotted + "' has an empty path segment");
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

TrajModelConfig RunConfig::teacher_model_config() const {
  TrajModelConfig mc;
  mc.vocab_size = cohort.vocab_diseases + kFirstDiseaseToken;
  mc.d_model = teacher_d_model;
  mc.n_layers = teacher_n_layers;
  mc.n_heads = teacher_n_heads;
  mc.max_seq_len = cohort.max_events + 1;
  mc.age_basis_dim = teacher_age_basis_dim;
  mc.mlp_hidden = teacher_mlp_hidden;
  mc.lambda_time = teacher_lambda_time;
  return mc;
}

std::vector<VariantConfig> RunConfig::default_variants() {
  return {
      {"idp_scratch", "idp_only", "scratch", ""},
      {"idp_infonce", "idp_only", "distilled", "infonce"},
      {"idp_mse", "idp_only", "distilled", "mse"},
      {"traj_only", "traj_only", "scratch", ""},
      {"concat_infonce", "concat", "distilled", "infonce"},
      {"xattn_scratch", "xattn", "scratch", ""},
      {"xattn_infonce", "xattn", "distilled", "infonce"},
  };
}

void RunConfig::validate() const {
  cohort.validate();
  teacher_model_config().validate();
  if (out.empty()) throw ConfigError("config: 'out' must not be empty");
  if (embed_pooling != "mean" && embed_pooling != "weighted") {
    throw ConfigError("config: embed_pooling must be 'mean' or 'weighted'");
  }
  std::set<std::string> names;
  for (const VariantConfig& v : variants) {
    if (!names.insert(v.name).second) {
      throw ConfigError("config: duplicate variant name '" + v.name + "'");
    }
    fusion_mode_from_string(v.mode);
    if (v.init != "scratch" && v.init != "distilled") {
      throw ConfigError("config: variant '" + v.name + "' init must be scratch or distilled");
    }
    if (v.init == "distilled" &&
        std::find(distill_objectives.begin(), distill_objectives.end(), v.objective) ==
            distill_objectives.end()) {
      throw ConfigError("config: variant '" + v.name + "' wants objective '" + v.objective +
                        "' which is not scheduled for distillation");
    }
  }
  for (const std::string& obj : distill_objectives) {
    if (obj != "infonce" && obj != "mse") {
      throw ConfigError("config: distill objective must be infonce or mse, got '" + obj + "'");
    }
  }
  stage_from_string(geometry_subjects);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["out"] = out;
  j["seed"] = seed;
  j["cohort"] = cohort.to_json();
  j["teacher"] = {{"d_model", teacher_d_model},
                  {"n_layers", teacher_n_layers},
                  {"n_heads", teacher_n_heads},
                  {"age_basis_dim", teacher_age_basis_dim},
                  {"mlp_hidden", teacher_mlp_hidden},
                  {"lambda_time", teacher_lambda_time},
                  {"epochs", teacher_epochs},
                  {"batch_size", teacher_batch_size},
                  {"lr", teacher_lr},
                  {"val_fraction", teacher_val_fraction}};
  j["embed"] = {{"pooling", embed_pooling}};
  j["encoder"] = {{"d", encoder_d},
                  {"d_e", encoder_d_e},
                  {"n_layers", encoder_n_layers},
                  {"n_heads", encoder_n_heads},
                  {"mlp_hidden", encoder_mlp_hidden},
                  {"single_organ", encoder_single_organ},
                  {"max_missing_rate", max_missing_rate}};
  j["distill"] = {{"objectives", distill_objectives},
                  {"tau", distill_tau},
                  {"d_align", distill_d_align},
                  {"hidden", distill_hidden},
                  {"epochs", distill_epochs},
                  {"batch_size", distill_batch_size},
                  {"lr", distill_lr},
                  {"val_fraction", distill_val_fraction},
                  {"symmetric", distill_symmetric}};
  nlohmann::json vars = nlohmann::json::array();
  for (const VariantConfig& v : variants) {
    vars.push_back(
        {{"name", v.name}, {"mode", v.mode}, {"init", v.init}, {"objective", v.objective}});
  }
  j["finetune"] = {{"variants", vars},
                   {"epochs", finetune_epochs},
                   {"batch_size", finetune_batch_size},
                   {"lr", finetune_lr},
                   {"patience", finetune_patience},
                   {"lambda_mae", finetune_lambda_mae},
                   {"n_heads", fusion_n_heads}};
  j["eval"] = {{"controls_per_case", eval_controls_per_case}, {"min_cases", eval_min_cases}};
  j["geometry"] = {{"objective", geometry_objective},
                   {"subjects", geometry_subjects},
                   {"n_pairs", geometry_n_pairs},
                   {"n_bins", geometry_n_bins},
                   {"n_perm", geometry_n_perm},
                   {"n_boot", geometry_n_boot}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.out = j.value("out", c.out);
    c.seed = j.value("seed", c.seed);
    if (j.contains("cohort")) c.cohort = CohortConfig::from_json(j.at("cohort"));
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      c.teacher_d_model = t.value("d_model", c.teacher_d_model);
      c.teacher_n_layers = t.value("n_layers", c.teacher_n_layers);
      c.teacher_n_heads = t.value("n_heads", c.teacher_n_heads);
      c.teacher_age_basis_dim = t.value("age_basis_dim", c.teacher_age_basis_dim);
      c.teacher_mlp_hidden = t.value("mlp_hidden", c.teacher_mlp_hidden);
      c.teacher_lambda_time = t.value("lambda_time", c.teacher_lambda_time);
      c.teacher_epochs = t.value("epochs", c.teacher_epochs);
      c.teacher_batch_size = t.value("batch_size", c.teacher_batch_size);
      c.teacher_lr = t.value("lr", c.teacher_lr);
      c.teacher_val_fraction = t.value("val_fraction", c.teacher_val_fraction);
    }
    if (j.contains("embed")) c.embed_pooling = j.at("embed").value("pooling", c.embed_pooling);
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder_d = e.value("d", c.encoder_d);
      c.encoder_d_e = e.value("d_e", c.encoder_d_e);
      c.encoder_n_layers = e.value("n_layers", c.encoder_n_layers);
      c.encoder_n_heads = e.value("n_heads", c.encoder_n_heads);
      c.encoder_mlp_hidden = e.value("mlp_hidden", c.encoder_mlp_hidden);
      c.encoder_single_organ = e.value("single_organ", c.encoder_single_organ);
      c.max_missing_rate = e.value("max_missing_rate", c.max_missing_rate);
    }
    if (j.contains("distill")) {
      const auto& d = j.at("distill");
      c.distill_objectives = d.value("objectives", c.distill_objectives);
      c.distill_tau = d.value("tau", c.distill_tau);
      c.distill_d_align = d.value("d_align", c.distill_d_align);
      c.distill_hidden = d.value("hidden", c.distill_hidden);
      c.distill_epochs = d.value("epochs", c.distill_epochs);
      c.distill_batch_size = d.value("batch_size", c.distill_batch_size);
      c.distill_lr = d.value("lr", c.distill_lr);
      c.distill_val_fraction = d.value("val_fraction", c.distill_val_fraction);
      c.distill_symmetric = d.value("symmetric", c.distill_symmetric);
    }
    c.variants = default_variants();
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      if (f.contains("variants")) {
        c.variants.clear();
        for (const auto& vj : f.at("variants")) {
          VariantConfig v;
          v.name = vj.at("name").get<std::string>();
          v.mode = vj.value("mode", v.mode);
          v.init = vj.value("init", v.init);
          v.objective = vj.value("objective", v.objective);
          c.variants.push_back(std::move(v));
        }
      }
      c.finetune_epochs = f.value("epochs", c.finetune_epochs);
      c.finetune_batch_size = f.value("batch_size", c.finetune_batch_size);
      c.finetune_lr = f.value("lr", c.finetune_lr);
      c.finetune_patience = f.value("patience", c.finetune_patience);
      c.finetune_lambda_mae = f.value("lambda_mae", c.finetune_lambda_mae);
      c.fusion_n_heads = f.value("n_heads", c.fusion_n_heads);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval_controls_per_case = e.value("controls_per_case", c.eval_controls_per_case);
      c.eval_min_cases = e.value("min_cases", c.eval_min_cases);
    }
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      c.geometry_objective = g.value("objective", c.geometry_objective);
      c.geometry_subjects = g.value("subjects", c.geometry_subjects);
      c.geometry_n_pairs = g.value("n_pairs", c.geometry_n_pairs);
      c.geometry_n_bins = g.value("n_bins", c.geometry_n_bins);
      c.geometry_n_perm = g.value("n_perm", c.geometry_n_perm);
      c.geometry_n_boot = g.value("n_boot", c.geometry_n_boot);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// run-directory layout and manifests

namespace {

struct Paths {
  std::string root;
  explicit Paths(const std::string& out) : root(out) {}

  std::string dir(const std::string& stage) const { return root + "/" + stage; }
  std::string trajectories() const { return root + "/cohort/trajectories.jsonl"; }
  std::string idps() const { return root + "/cohort/idps.csv"; }
  std::string labels() const { return root + "/cohort/labels.csv"; }
  std::string registry() const { return root + "/cohort/registry.csv"; }
  std::string truth() const { return root + "/cohort/truth.json"; }
  std::string teacher_ckpt() const { return root + "/teacher/teacher.ckpt"; }
  std::string teacher_report() const { return root + "/teacher/report.json"; }
  std::string embeddings() const { return root + "/teacher/embeddings.csv"; }
  std::string schema() const { return root + "/distill/schema.json"; }
  std::string student_ckpt(const std::string& obj) const {
    return root + "/distill/" + obj + "/student.ckpt";
  }
  std::string distill_report(const std::string& obj) const {
    return root + "/distill/" + obj + "/report.json";
  }
  std::string finetune_ckpt(const std::string& variant) const {
    return root + "/finetune/" + variant + "/model.ckpt";
  }
  std::string finetune_report(const std::string& variant) const {
    return root + "/finetune/" + variant + "/report.json";
  }
  std::string metrics(const std::string& variant) const {
    return root + "/eval/" + variant + "/metrics.json";
  }
  std::string predictions(const std::string& variant) const {
    return root + "/eval/" + variant + "/predictions.csv";
  }
  std::string eval_summary() const { return root + "/eval/summary.json"; }
  std::string geometry_pairs() const { return root + "/geometry/pairs.csv"; }
  std::string geometry_bins() const { return root + "/geometry/bins.csv"; }
  std::string geometry_report() const { return root + "/geometry/report.json"; }
};

void require_artifact(const std::string& path, const std::string& produced_by) {
  if (!file_exists(path)) {
    throw MissingArtifact("missing artifact '" + path + "'; run '" + produced_by + "' first");
  }
}

std::string rel_to(const std::string& root, const std::string& path) {
  return fs::relative(path, root).string();
}

void write_stage_manifest(const Paths& paths, const std::string& stage,
                          const std::string& manifest_path, uint64_t seed,
                          const nlohmann::json& config_snapshot,
                          const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["stage"] = stage;
  m["seed"] = seed;
  m["config"] = config_snapshot;
  nlohmann::json in = nlohmann::json::object();
  for (const std::string& p : inputs) in[rel_to(paths.root, p)] = sha256_file(p);
  nlohmann::json out = nlohmann::json::object();
  for (const std::string& p : outputs) out[rel_to(paths.root, p)] = sha256_file(p);
  m["inputs"] = in;
  m["outputs"] = out;
  write_json_file(manifest_path, m);

  std::string top = paths.root + "/manifest.json";
  nlohmann::json agg = file_exists(top) ? read_json_file(top) : nlohmann::json::object();
  agg["stages"][stage] = m;
  write_json_file(top, agg);
}

// stage-tag filter helpers
std::vector<Trajectory> trajectories_for_stage(const std::vector<Trajectory>& all,
                                               const SplitRegistry& registry, Stage stage) {
  std::vector<Trajectory> out;
  for (const Trajectory& t : all) {
    if (!registry.contains(t.subject_id)) {
      throw GuardViolation("subject " + std::to_string(t.subject_id) +
                           " appears in trajectories but not in the split registry");
    }
    if (registry.stage_of(t.subject_id) == stage) out.push_back(t);
  }
  return out;
}

IdpEncoderConfig build_encoder_config(const RunConfig& cfg, const IdpSchema& schema) {
  IdpEncoderConfig ec;
  if (cfg.encoder_single_organ) {
    int total = 0;
    for (int d : schema.organ_dims) total += d;
    ec.organ_dims = {total};
  } else {
    ec.organ_dims = schema.organ_dims;
  }
  ec.d = cfg.encoder_d;
  ec.d_e = cfg.encoder_d_e;
  ec.n_layers = cfg.encoder_n_layers;
  ec.n_heads = cfg.encoder_n_heads;
  ec.mlp_hidden = cfg.encoder_mlp_hidden;
  return ec;
}

std::vector<IdpRecord> prepare_records(const RunConfig& cfg, const RawIdpCohort& cohort,
                                       const IdpSchema& schema) {
  std::vector<IdpRecord> records = apply_idp_schema(cohort, schema);
  if (cfg.encoder_single_organ) {
    for (IdpRecord& r : records) {
      std::vector<double> flat;
      for (const auto& organ : r.organs) flat.insert(flat.end(), organ.begin(), organ.end());
      r.organs = {std::move(flat)};
    }
  }
  return records;
}

std::map<int64_t, const IdpRecord*> index_records(const std::vector<IdpRecord>& records) {
  std::map<int64_t, const IdpRecord*> idx;
  for (const IdpRecord& r : records) idx[r.subject_id] = &r;
  return idx;
}

// labels keyed (subject, disease) -> onset age (absent = no onset observed)
std::map<std::pair<int64_t, int>, double> onset_index(const std::vector<OutcomeLabel>& labels) {
  std::map<std::pair<int64_t, int>, double> idx;
  for (const OutcomeLabel& l : labels) {
    if (l.onset) idx[{l.subject_id, l.disease_id}] = l.onset_age_days;
  }
  return idx;
}

std::vector<int> panel_disease_ids(const std::vector<OutcomeLabel>& labels) {
  std::set<int> ids;
  for (const OutcomeLabel& l : labels) ids.insert(l.disease_id);
  return std::vector<int>(ids.begin(), ids.end());
}

DownstreamDataset build_downstream_dataset(Stage stage, const SplitRegistry& registry,
                                           const std::unordered_map<int64_t, double>& imaging_ages,
                                           const std::vector<IdpRecord>& records,
                                           const EmbeddingMatrix& teacher,
                                           const std::vector<OutcomeLabel>& labels,
                                           const std::vector<int>& disease_ids) {
  auto rec_index = index_records(records);
  auto onsets = onset_index(labels);
  DownstreamDataset ds;
  ds.disease_ids = disease_ids;
  for (int64_t id : registry.subjects_in(stage)) {
    auto rec_it = rec_index.find(id);
    if (rec_it == rec_index.end()) {
      throw MissingArtifact("subject " + std::to_string(id) + " has no imaging record");
    }
    if (!teacher.contains(id)) {
      throw MissingArtifact("subject " + std::to_string(id) + " has no teacher embedding");
    }
    auto age_it = imaging_ages.find(id);
    if (age_it == imaging_ages.end()) {
      throw MissingArtifact("subject " + std::to_string(id) + " has no imaging age");
    }
    const double baseline = age_it->second;
    ds.subject_ids.push_back(id);
    ds.records.push_back(*rec_it->second);
    {
      const double* row = teacher.row(id);
      ds.traj.append(id, std::vector<double>(row, row + teacher.dim));
    }
    for (int disease : disease_ids) {
      auto o = onsets.find({id, disease});
      bool has_onset = o != onsets.end();
      bool prevalent = has_onset && o->second <= baseline;
      bool is_case = has_onset && o->second > baseline;
      ds.prevalent.push_back(prevalent ? 1 : 0);
      ds.is_case.push_back(is_case ? 1 : 0);
      ds.gap_years.push_back(is_case ? (o->second - baseline) / 365.0 : 0.0);
    }
  }
  ds.validate();
  return ds;
}

FusionConfig build_fusion_config(const RunConfig& cfg, const VariantConfig& variant,
                                 int n_diseases, int d_traj) {
  FusionConfig fc;
  fc.mode = fusion_mode_from_string(variant.mode);
  fc.n_heads = cfg.fusion_n_heads;
  fc.n_diseases = n_diseases;
  fc.d_traj = d_traj;
  fc.lambda_mae = cfg.finetune_lambda_mae;
  return fc;
}

}  // namespace

// ---------------------------------------------------------------------------
// stages

void run_gen_data(const RunConfig& cfg) {
  Paths paths(cfg.out);
  fs::create_directories(paths.dir("cohort"));

  CohortConfig cc = cfg.cohort;
  cc.seed = derive_seed(cfg.seed, "cohort");
  GeneratedCohort cohort = generate_cohort(cc);

  write_trajectories_jsonl(paths.trajectories(), cohort.trajectories);
  write_idp_csv(paths.idps(), cohort.idps);
  write_labels_csv(paths.labels(), cohort.labels);

  std::unordered_map<int64_t, double> imaging_ages;
  for (const LatentSubject& s : cohort.subjects) {
    if (cohort.registry.stage_of(s.subject_id) != Stage::Pretrain) {
      imaging_ages[s.subject_id] = s.imaging_age_days;
    }
  }
  write_registry_csv(paths.registry(), cohort.registry, imaging_ages);

  nlohmann::json truth = cohort.truth.to_json();
  nlohmann::json subjects = nlohmann::json::array();
  for (const LatentSubject& s : cohort.subjects) {
    subjects.push_back({{"subject_id", s.subject_id},
                        {"u", s.u},
                        {"imaging_age_days", s.imaging_age_days}});
  }
  truth["subjects"] = subjects;
  truth["config"] = cc.to_json();
  write_json_file(paths.truth(), truth);

  write_stage_manifest(paths, "cohort", paths.dir("cohort") + "/manifest.json", cc.seed,
                       cc.to_json(), {},
                       {paths.trajectories(), paths.idps(), paths.labels(), paths.registry(),
                        paths.truth()});
  log_kv({{"stage", "gen-data"},
          {"out", cfg.out},
          {"subjects", std::to_string(cohort.subjects.size())},
          {"seed", std::to_string(cc.seed)}});
}

void run_pretrain_traj(const RunConfig& cfg) {
  Paths paths(cfg.out);
  require_artifact(paths.trajectories(), "gen-data");
  require_artifact(paths.registry(), "gen-data");
  fs::create_directories(paths.dir("teacher"));

  auto [registry, imaging_ages] = read_registry_csv(paths.registry());
  auto all_trajs = read_trajectories_jsonl(paths.trajectories());
  auto pretrain = trajectories_for_stage(all_trajs, registry, Stage::Pretrain);
  if (pretrain.empty()) throw ConfigError("pretrain-traj: no pretrain-stage subjects");

  const uint64_t seed = derive_seed(cfg.seed, "teacher");
  Rng split_rng(derive_seed(cfg.seed, "teacher-split"));
  std::vector<size_t> order(pretrain.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  split_rng.shuffle(order);
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(cfg.teacher_val_fraction *
                                                         static_cast<double>(order.size())));
  std::vector<Trajectory> val, train;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).push_back(pretrain[order[i]]);
  }

  TrajModelConfig mc = cfg.teacher_model_config();
  TrajectoryModel model(mc, seed);
  TeacherTrainConfig tc;
  tc.epochs = cfg.teacher_epochs;
  tc.batch_size = cfg.teacher_batch_size;
  tc.lr = cfg.teacher_lr;
  tc.seed = derive_seed(cfg.seed, "teacher-train");
  TeacherTrainReport report = pretrain_trajectory_model(model, train, val, tc);

  double model_ce = model.next_event_ce(val, tc.batch_size);
  double unigram_ce = unigram_next_event_ce(train, val, mc.vocab_size);

  nlohmann::json meta;
  meta["model"] = {{"vocab_size", mc.vocab_size},
                   {"d_model", mc.d_model},
                   {"n_layers", mc.n_layers},
                   {"n_heads", mc.n_heads},
                   {"max_seq_len", mc.max_seq_len},
                   {"age_basis_dim", mc.age_basis_dim},
                   {"mlp_hidden", mc.mlp_hidden},
                   {"lambda_time", mc.lambda_time}};
  meta["seed"] = seed;
  meta["epochs"] = tc.epochs;
  meta["val_ce"] = model_ce;
  meta["unigram_ce"] = unigram_ce;
  save_checkpoint(paths.teacher_ckpt(), model.params(), meta);

  nlohmann::json rj;
  rj["train_loss"] = report.train_loss;
  rj["val_ce"] = report.val_ce;
  rj["final_val_ce"] = model_ce;
  rj["unigram_ce"] = unigram_ce;
  write_json_file(paths.teacher_report(), rj);

  write_stage_manifest(paths, "teacher", paths.dir("teacher") + "/manifest.json", seed, meta,
                       {paths.trajectories(), paths.registry()},
                       {paths.teacher_ckpt(), paths.teacher_report()});
  log_kv({{"stage", "pretrain-traj"},
          {"val_ce", format_double(model_ce)},
          {"unigram_ce", format_double(unigram_ce)}});
}

namespace {

TrajectoryModel load_teacher(const Paths& paths) {
  require_artifact(paths.teacher_ckpt(), "pretrain-traj");
  LoadedCheckpoint raw = load_checkpoint_raw(paths.teacher_ckpt());
  const auto& m = raw.meta.at("model");
  TrajModelConfig mc;
  mc.vocab_size = m.at("vocab_size").get<int>();
  mc.d_model = m.at("d_model").get<int>();
  mc.n_layers = m.at("n_layers").get<int>();
  mc.n_heads = m.at("n_heads").get<int>();
  mc.max_seq_len = m.at("max_seq_len").get<int>();
  mc.age_basis_dim = m.at("age_basis_dim").get<int>();
  mc.mlp_hidden = m.at("mlp_hidden").get<int>();
  mc.lambda_time = m.at("lambda_time").get<double>();
  TrajectoryModel model(mc, raw.meta.value("seed", uint64_t{0}));
  load_checkpoint(paths.teacher_ckpt(), model.params());
  return model;
}

}  // namespace

void run_embed(const RunConfig& cfg) {
  Paths paths(cfg.out);
  require_artifact(paths.trajectories(), "gen-data");
  require_artifact(paths.registry(), "gen-data");
  TrajectoryModel teacher = load_teacher(paths);

  auto [registry, imaging_ages] = read_registry_csv(paths.registry());
  auto all_trajs = read_trajectories_jsonl(paths.trajectories());
  std::map<int64_t, const Trajectory*> by_id;
  for (const Trajectory& t : all_trajs) by_id[t.subject_id] = &t;

  Pooling pooling = pooling_from_string(cfg.embed_pooling);
  EmbeddingMatrix emb;
  for (const auto& [id, stage] : registry.entries()) {
    if (stage == Stage::Pretrain) continue;
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw MissingArtifact("subject " + std::to_string(id) + " has no trajectory record");
    }
    auto age_it = imaging_ages.find(id);
    if (age_it == imaging_ages.end()) {
      throw MissingArtifact("subject " + std::to_string(id) + " has no imaging age");
    }
    const double cutoff = age_it->second;
    // temporal guard: no event at or past the imaging baseline may enter
    Trajectory hist = teacher.history_before(*it->second, cutoff);
    for (double age : hist.ages_days) {
      if (!(age < cutoff)) {
        throw GuardViolation("subject " + std::to_string(id) + ": event at age " +
                             format_double(age) + " is not strictly before baseline " +
                             format_double(cutoff));
      }
    }
    std::vector<double> row = teacher.embed_subject(hist, cutoff, pooling);
    emb.append(id, row);
  }
  write_embeddings_csv(paths.embeddings(), emb);

  write_stage_manifest(paths, "embed", paths.dir("teacher") + "/embed_manifest.json", cfg.seed,
                       {{"pooling", cfg.embed_pooling}},
                       {paths.teacher_ckpt(), paths.trajectories(), paths.registry()},
                       {paths.embeddings()});
  log_kv({{"stage", "embed"}, {"subjects", std::to_string(emb.n())}, {"dim", std::to_string(emb.dim)}});
}

void run_distill(const RunConfig& cfg) {
  Paths paths(cfg.out);
  require_artifact(paths.idps(), "gen-data");
  require_artifact(paths.registry(), "gen-data");
  require_artifact(paths.embeddings(), "embed");
  fs::create_directories(paths.dir("distill"));

  auto [registry, imaging_ages] = read_registry_csv(paths.registry());
  RawIdpCohort idps = read_idp_csv(paths.idps());
  EmbeddingMatrix teacher_emb = read_embeddings_csv(paths.embeddings());

  // imputation and standardization statistics come from the downstream train
  // split only
  IdpSchema schema =
      fit_idp_schema(idps, registry.subjects_in(Stage::DownTrain), cfg.max_missing_rate);
  write_json_file(paths.schema(), schema.to_json());

  std::vector<IdpRecord> records = prepare_records(cfg, idps, schema);
  std::vector<IdpRecord> distill_records;
  for (const IdpRecord& r : records) {
    if (registry.stage_of(r.subject_id) == Stage::Distill) distill_records.push_back(r);
  }
  std::vector<int64_t> forbidden = registry.downstream_subjects();

  IdpEncoderConfig ec = build_encoder_config(cfg, schema);
  std::vector<std::string> outputs = {paths.schema()};
  for (const std::string& objective : cfg.distill_objectives) {
    fs::create_directories(paths.dir("distill") + "/" + objective);
    IdpEncoder student(ec, derive_seed(cfg.seed, "student"));
    ProjectionHeads heads(ec.d, teacher_emb.dim, cfg.distill_d_align, cfg.distill_hidden,
                          cfg.distill_tau, derive_seed(cfg.seed, "heads"));
    DistillConfig dc;
    dc.objective = objective;
    dc.tau = cfg.distill_tau;
    dc.d_align = cfg.distill_d_align;
    dc.hidden = cfg.distill_hidden;
    dc.epochs = cfg.distill_epochs;
    dc.batch_size = cfg.distill_batch_size;
    dc.lr = cfg.distill_lr;
    dc.val_fraction = cfg.distill_val_fraction;
    dc.symmetric = cfg.distill_symmetric;
    dc.seed = derive_seed(cfg.seed, "distill:" + objective);
    DistillReport report =
        distill_pretrain(student, heads, distill_records, teacher_emb, dc, forbidden);

    nlohmann::json meta;
    meta["objective"] = objective;
    meta["encoder"] = ec.to_json();
    meta["teacher_dim"] = teacher_emb.dim;
    meta["d_align"] = cfg.distill_d_align;
    meta["hidden"] = cfg.distill_hidden;
    meta["tau"] = cfg.distill_tau;
    meta["seed"] = dc.seed;
    meta["best_epoch"] = report.best_epoch;
    ParamRegistry merged = merged_registry({&student.params(), &heads.params()});
    save_checkpoint(paths.student_ckpt(objective), merged, meta);
    write_json_file(paths.distill_report(objective), report.to_json());
    outputs.push_back(paths.student_ckpt(objective));
    outputs.push_back(paths.distill_report(objective));
    log_kv({{"stage", "distill"},
            {"objective", objective},
            {"final_train_loss",
             format_double(report.train_loss.empty() ? 0.0 : report.train_loss.back())},
            {"best_epoch", std::to_string(report.best_epoch)}});
  }

  write_stage_manifest(paths, "distill", paths.dir("distill") + "/manifest.json", cfg.seed,
                       {{"objectives", cfg.distill_objectives},
                        {"epochs", cfg.distill_epochs},
                        {"tau", cfg.distill_tau}},
                       {paths.idps(), paths.registry(), paths.embeddings()}, outputs);
}

namespace {

struct DownstreamContext {
  IdpSchema schema;
  IdpEncoderConfig encoder_cfg;
  std::vector<IdpRecord> records;
  EmbeddingMatrix teacher_emb;
  std::vector<OutcomeLabel> labels;
  std::vector<int> disease_ids;
  SplitRegistry registry;
  std::unordered_map<int64_t, double> imaging_ages;
};

DownstreamContext load_downstream_context(const RunConfig& cfg, const Paths& paths) {
  require_artifact(paths.idps(), "gen-data");
  require_artifact(paths.labels(), "gen-data");
  require_artifact(paths.registry(), "gen-data");
  require_artifact(paths.embeddings(), "embed");
  require_artifact(paths.schema(), "distill");
  DownstreamContext ctx;
  ctx.schema = IdpSchema::from_json(read_json_file(paths.schema()));
  ctx.encoder_cfg = build_encoder_config(cfg, ctx.schema);
  RawIdpCohort idps = read_idp_csv(paths.idps());
  ctx.records = prepare_records(cfg, idps, ctx.schema);
  ctx.teacher_emb = read_embeddings_csv(paths.embeddings());
  ctx.labels = read_labels_csv(paths.labels());
  ctx.disease_ids = panel_disease_ids(ctx.labels);
  auto [registry, ages] = read_registry_csv(paths.registry());
  ctx.registry = std::move(registry);
  ctx.imaging_ages = std::move(ages);
  return ctx;
}

FusionModel build_variant_model(const RunConfig& cfg, const Paths& paths,
                                const DownstreamContext& ctx, const VariantConfig& variant,
                                uint64_t seed) {
  FusionConfig fc = build_fusion_config(cfg, variant, static_cast<int>(ctx.disease_ids.size()),
                                        static_cast<int>(ctx.teacher_emb.dim));
  const bool needs_encoder = fc.mode != FusionMode::TrajOnly;
  FusionModel model(fc, needs_encoder ? &ctx.encoder_cfg : nullptr, seed);
  if (variant.init == "distilled") {
    if (!needs_encoder) {
      throw ConfigError("variant '" + variant.name + "': traj_only cannot use a distilled init");
    }
    require_artifact(paths.student_ckpt(variant.objective), "distill");
    load_checkpoint(paths.student_ckpt(variant.objective), model.encoder()->params());
  }
  return model;
}

}  // namespace

void run_finetune(const RunConfig& cfg) {
  Paths paths(cfg.out);
  DownstreamContext ctx = load_downstream_context(cfg, paths);
  fs::create_directories(paths.dir("finetune"));

  DownstreamDataset train =
      build_downstream_dataset(Stage::DownTrain, ctx.registry, ctx.imaging_ages, ctx.records,
                               ctx.teacher_emb, ctx.labels, ctx.disease_ids);
  DownstreamDataset val =
      build_downstream_dataset(Stage::DownVal, ctx.registry, ctx.imaging_ages, ctx.records,
                               ctx.teacher_emb, ctx.labels, ctx.disease_ids);

  std::vector<std::string> outputs;
  std::vector<std::string> inputs = {paths.idps(),       paths.labels(), paths.registry(),
                                     paths.embeddings(), paths.schema()};
  for (const VariantConfig& variant : cfg.variants) {
    fs::create_directories(paths.dir("finetune") + "/" + variant.name);
    const uint64_t seed = derive_seed(cfg.seed, "finetune:" + variant.name);
    FusionModel model = build_variant_model(cfg, paths, ctx, variant, seed);
    FinetuneConfig fc;
    fc.epochs = cfg.finetune_epochs;
    fc.batch_size = cfg.finetune_batch_size;
    fc.lr = cfg.finetune_lr;
    fc.patience = cfg.finetune_patience;
    fc.seed = derive_seed(cfg.seed, "finetune-train:" + variant.name);
    FinetuneReport report = finetune(model, train, val, fc);

    nlohmann::json meta;
    meta["variant"] = {{"name", variant.name},
                       {"mode", variant.mode},
                       {"init", variant.init},
                       {"objective", variant.objective}};
    meta["seed"] = seed;
    meta["best_epoch"] = report.best_epoch;
    meta["n_diseases"] = ctx.disease_ids.size();
    meta["disease_ids"] = ctx.disease_ids;
    ParamRegistry all = model.all_params();
    save_checkpoint(paths.finetune_ckpt(variant.name), all, meta);
    write_json_file(paths.finetune_report(variant.name), report.to_json());
    outputs.push_back(paths.finetune_ckpt(variant.name));
    outputs.push_back(paths.finetune_report(variant.name));
    log_kv({{"stage", "finetune"},
            {"variant", variant.name},
            {"best_epoch", std::to_string(report.best_epoch)},
            {"best_val_auc", format_double(report.val_mean_auc.empty()
                                               ? 0.5
                                               : *std::max_element(report.val_mean_auc.begin(),
                                                                   report.val_mean_auc.end()))}});
  }
  nlohmann::json snap;
  snap["epochs"] = cfg.finetune_epochs;
  snap["variants"] = nlohmann::json::array();
  for (const VariantConfig& v : cfg.variants) snap["variants"].push_back(v.name);
  write_stage_manifest(paths, "finetune", paths.dir("finetune") + "/manifest.json", cfg.seed,
                       snap, inputs, outputs);
}

void run_evaluate(const RunConfig& cfg) {
  Paths paths(cfg.out);
  DownstreamContext ctx = load_downstream_context(cfg, paths);
  fs::create_directories(paths.dir("eval"));

  DownstreamDataset test =
      build_downstream_dataset(Stage::DownTest, ctx.registry, ctx.imaging_ages, ctx.records,
                               ctx.teacher_emb, ctx.labels, ctx.disease_ids);

  // test-subject-only labels drive the panel and the risk sets
  std::set<int64_t> test_ids(test.subject_ids.begin(), test.subject_ids.end());
  std::vector<OutcomeLabel> test_labels;
  for (const OutcomeLabel& l : ctx.labels) {
    if (test_ids.count(l.subject_id)) test_labels.push_back(l);
  }
  std::unordered_map<int64_t, double> test_ages;
  for (int64_t id : test.subject_ids) test_ages[id] = ctx.imaging_ages.at(id);

  DiseasePanel panel = build_disease_panel(test_labels, test_ages, cfg.eval_min_cases);
  if (panel.disease_ids.empty()) {
    throw ConfigError("evaluate: no disease reaches min_cases=" +
                      std::to_string(cfg.eval_min_cases));
  }
  std::map<int, std::vector<RiskSetInstance>> risk_sets;
  std::vector<std::string> risk_log;
  for (int disease : panel.disease_ids) {
    risk_sets[disease] =
        build_risk_sets(test_labels, test_ages, disease, cfg.eval_controls_per_case,
                        derive_seed(cfg.seed, "risksets:" + std::to_string(disease)), &risk_log);
  }

  std::map<int64_t, size_t> row_of;
  for (size_t i = 0; i < test.subject_ids.size(); ++i) row_of[test.subject_ids[i]] = i;
  const int64_t nd = test.n_diseases();
  std::map<int, int64_t> disease_col;
  for (int64_t c = 0; c < nd; ++c) disease_col[test.disease_ids[static_cast<size_t>(c)]] = c;

  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::vector<std::string> inputs = {paths.idps(),       paths.labels(), paths.registry(),
                                     paths.embeddings(), paths.schema()};
  for (const VariantConfig& variant : cfg.variants) {
    require_artifact(paths.finetune_ckpt(variant.name), "finetune");
    fs::create_directories(paths.dir("eval") + "/" + variant.name);
    inputs.push_back(paths.finetune_ckpt(variant.name));
    FusionModel model = build_variant_model(cfg, paths, ctx, variant,
                                            derive_seed(cfg.seed, "finetune:" + variant.name));
    {
      ParamRegistry all = model.all_params();
      load_checkpoint(paths.finetune_ckpt(variant.name), all);
    }
    NoGradGuard ng;
    std::vector<size_t> idx(static_cast<size_t>(test.n()));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto out = predict_batch(model, test, idx);

    auto risk_prob = [&](int64_t subject, int disease) {
      size_t r = row_of.at(subject);
      double logit =
          out.risk_logits.data()[static_cast<int64_t>(r) * nd + disease_col.at(disease)];
      return 1.0 / (1.0 + std::exp(-logit));
    };
    auto pred_years = [&](int64_t subject, int disease) {
      size_t r = row_of.at(subject);
      return out.time_years.data()[static_cast<int64_t>(r) * nd + disease_col.at(disease)];
    };

    nlohmann::json diseases = nlohmann::json::object();
    double auc_sum = 0.0, mae_sum = 0.0;
    int64_t auc_n = 0, mae_n = 0;
    std::vector<double> tertile_auc_sum(3, 0.0);
    std::vector<int> tertile_auc_n(3, 0);
    for (size_t pi = 0; pi < panel.disease_ids.size(); ++pi) {
      int disease = panel.disease_ids[pi];
      std::vector<double> scores, preds, truths;
      std::vector<int> ys;
      for (const RiskSetInstance& inst : risk_sets[disease]) {
        scores.push_back(risk_prob(inst.case_id, disease));
        ys.push_back(1);
        preds.push_back(pred_years(inst.case_id, disease));
        truths.push_back(inst.onset_gap_years);
        for (int64_t ctrl : inst.control_ids) {
          scores.push_back(risk_prob(ctrl, disease));
          ys.push_back(0);
        }
      }
      auto a = auc(scores, ys);
      auto m = mae(preds, truths);
      nlohmann::json dj;
      dj["n_cases"] = risk_sets[disease].size();
      dj["prevalence"] = panel.prevalence[pi];
      dj["tertile"] = panel.tertile[pi];
      if (a) {
        dj["auc"] = *a;
        auc_sum += *a;
        ++auc_n;
        tertile_auc_sum[static_cast<size_t>(panel.tertile[pi])] += *a;
        tertile_auc_n[static_cast<size_t>(panel.tertile[pi])] += 1;
      }
      if (m) {
        dj["mae"] = *m;
        mae_sum += *m;
        ++mae_n;
      }
      diseases[std::to_string(disease)] = dj;
    }
    nlohmann::json aggregate;
    aggregate["mean_auc"] = auc_n ? auc_sum / static_cast<double>(auc_n) : 0.5;
    aggregate["mean_mae"] = mae_n ? mae_sum / static_cast<double>(mae_n) : 0.0;
    aggregate["n_diseases"] = auc_n;
    nlohmann::json tertiles = nlohmann::json::array();
    for (int t = 0; t < 3; ++t) {
      tertiles.push_back(tertile_auc_n[static_cast<size_t>(t)]
                             ? tertile_auc_sum[static_cast<size_t>(t)] /
                                   static_cast<double>(tertile_auc_n[static_cast<size_t>(t)])
                             : 0.5);
    }
    aggregate["tertile_mean_auc"] = tertiles;

    nlohmann::json metrics;
    metrics["variant"] = variant.name;
    metrics["diseases"] = diseases;
    metrics["aggregate"] = aggregate;
    metrics["dropped_cases"] = risk_log.size();
    write_json_file(paths.metrics(variant.name), metrics);

    // per-subject predictions over the evaluated panel
    std::string pred_csv = "subject_id,disease_id,risk_prob,pred_years,label,true_years\n";
    for (int64_t i = 0; i < test.n(); ++i) {
      int64_t subject = test.subject_ids[static_cast<size_t>(i)];
      for (int disease : panel.disease_ids) {
        int64_t col = disease_col.at(disease);
        size_t flat = static_cast<size_t>(i * nd + col);
        if (test.prevalent[flat]) continue;
        pred_csv += std::to_string(subject);
        pred_csv += ',';
        pred_csv += std::to_string(disease);
        pred_csv += ',';
        pred_csv += format_double(risk_prob(subject, disease));
        pred_csv += ',';
        pred_csv += format_double(pred_years(subject, disease));
        pred_csv += ',';
        pred_csv += test.is_case[flat] ? '1' : '0';
        pred_csv += ',';
        if (test.is_case[flat]) pred_csv += format_double(test.gap_years[flat]);
        pred_csv += '\n';
      }
    }
    write_text_file(paths.predictions(variant.name), pred_csv);
    outputs.push_back(paths.metrics(variant.name));
    outputs.push_back(paths.predictions(variant.name));
    summary[variant.name] = aggregate;
    log_kv({{"stage", "evaluate"},
            {"variant", variant.name},
            {"mean_auc", format_double(aggregate["mean_auc"].get<double>())},
            {"mean_mae", format_double(aggregate["mean_mae"].get<double>())}});
  }
  write_json_file(paths.eval_summary(), summary);
  outputs.push_back(paths.eval_summary());
  write_stage_manifest(paths, "eval", paths.dir("eval") + "/manifest.json", cfg.seed,
                       {{"controls_per_case", cfg.eval_controls_per_case},
                        {"min_cases", cfg.eval_min_cases}},
                       inputs, outputs);
}

void run_geometry(const RunConfig& cfg) {
  Paths paths(cfg.out);
  DownstreamContext ctx = load_downstream_context(cfg, paths);
  require_artifact(paths.student_ckpt(cfg.geometry_objective), "distill");
  fs::create_directories(paths.dir("geometry"));

  IdpEncoder student(ctx.encoder_cfg, derive_seed(cfg.seed, "student"));
  load_checkpoint(paths.student_ckpt(cfg.geometry_objective), student.params());

  Stage stage = stage_from_string(cfg.geometry_subjects);
  std::set<int64_t> wanted;
  for (int64_t id : ctx.registry.subjects_in(stage)) wanted.insert(id);
  std::vector<IdpRecord> subset;
  for (const IdpRecord& r : ctx.records) {
    if (wanted.count(r.subject_id)) subset.push_back(r);
  }
  if (subset.size() < 2) throw ConfigError("geometry: fewer than 2 subjects in stage subset");

  EmbeddingMatrix student_emb;
  NoGradGuard ng;
  const size_t chunk = 256;
  for (size_t start = 0; start < subset.size(); start += chunk) {
    size_t end = std::min(subset.size(), start + chunk);
    std::vector<size_t> idx;
    for (size_t i = start; i < end; ++i) idx.push_back(i);
    Tensor cls = student.forward(organ_batch(subset, idx)).cls;
    for (size_t i = start; i < end; ++i) {
      const double* row = cls.data().data() + static_cast<int64_t>(i - start) * ctx.encoder_cfg.d;
      student_emb.append(subset[i].subject_id,
                         std::vector<double>(row, row + ctx.encoder_cfg.d));
    }
  }

  GeometryReport report = geometry_alignment(
      student_emb, ctx.teacher_emb, cfg.geometry_n_pairs, cfg.geometry_n_bins, cfg.geometry_n_perm,
      cfg.geometry_n_boot, derive_seed(cfg.seed, "geometry"));
  write_geometry_pairs_csv(paths.geometry_pairs(), report);
  write_geometry_bins_csv(paths.geometry_bins(), report);
  write_json_file(paths.geometry_report(), report.summary_json());

  write_stage_manifest(paths, "geometry", paths.dir("geometry") + "/manifest.json", cfg.seed,
                       {{"objective", cfg.geometry_objective},
                        {"subjects", cfg.geometry_subjects},
                        {"n_pairs", cfg.geometry_n_pairs}},
                       {paths.student_ckpt(cfg.geometry_objective), paths.embeddings()},
                       {paths.geometry_pairs(), paths.geometry_bins(), paths.geometry_report()});
  log_kv({{"stage", "geometry"},
          {"rho", format_double(report.rho)},
          {"p_perm", format_double(report.p_perm)},
          {"n_pairs", std::to_string(report.n_pairs)}});
}

void run_all(const RunConfig& cfg) {
  run_gen_data(cfg);
  run_pretrain_traj(cfg);
  run_embed(cfg);
  run_distill(cfg);
  run_finetune(cfg);
  run_evaluate(cfg);
  run_geometry(cfg);
}

void run_stage(const RunConfig& cfg, const std::string& stage) {
  if (stage == "gen-data") run_gen_data(cfg);
  else if (stage == "pretrain-traj") run_pretrain_traj(cfg);
  else if (stage == "embed") run_embed(cfg);
  else if (stage == "distill") run_distill(cfg);
  else if (stage == "finetune") run_finetune(cfg);
  else if (stage == "evaluate") run_evaluate(cfg);
  else if (stage == "geometry") run_geometry(cfg);
  else if (stage == "all") run_all(cfg);
  else throw ConfigError("unknown stage '" + stage + "'");
}

nlohmann::json compare_runs(const std::string& metrics_path_a, const std::string& metrics_path_b,
                            uint64_t seed) {
  if (!file_exists(metrics_path_a)) throw MissingArtifact("missing metrics '" + metrics_path_a + "'");
  if (!file_exists(metrics_path_b)) throw MissingArtifact("missing metrics '" + metrics_path_b + "'");
  nlohmann::json a = read_json_file(metrics_path_a);
  nlohmann::json b = read_json_file(metrics_path_b);
  const auto& da = a.at("diseases");
  const auto& db = b.at("diseases");
  std::vector<std::string> panel_a, panel_b;
  for (auto it = da.begin(); it != da.end(); ++it) panel_a.push_back(it.key());
  for (auto it = db.begin(); it != db.end(); ++it) panel_b.push_back(it.key());
  if (panel_a != panel_b) {
    throw ConfigError("compare: disease panels differ between '" + metrics_path_a + "' and '" +
                      metrics_path_b + "'");
  }

  nlohmann::json per_disease = nlohmann::json::object();
  std::vector<double> delta_auc, delta_mae, prevalence;
  std::vector<double> tertile_delta_sum(3, 0.0);
  std::vector<int> tertile_delta_n(3, 0);
  for (const std::string& key : panel_a) {
    const auto& ea = da.at(key);
    const auto& eb = db.at(key);
    if (!ea.contains("auc") || !eb.contains("auc")) continue;
    double dauc = eb.at("auc").get<double>() - ea.at("auc").get<double>();
    double dmae = eb.value("mae", 0.0) - ea.value("mae", 0.0);
    int tertile = ea.value("tertile", 0);
    per_disease[key] = {{"delta_auc", dauc}, {"delta_mae", dmae}, {"tertile", tertile}};
    delta_auc.push_back(dauc);
    delta_mae.push_back(dmae);
    prevalence.push_back(ea.value("prevalence", 0.0));
    tertile_delta_sum[static_cast<size_t>(tertile)] += dauc;
    tertile_delta_n[static_cast<size_t>(tertile)] += 1;
  }
  if (delta_auc.empty()) throw ConfigError("compare: no shared diseases with AUC values");

  nlohmann::json report;
  report["per_disease"] = per_disease;
  double mean_dauc = 0.0, mean_dmae = 0.0;
  for (double d : delta_auc) mean_dauc += d;
  for (double d : delta_mae) mean_dmae += d;
  report["mean_delta_auc"] = mean_dauc / static_cast<double>(delta_auc.size());
  report["mean_delta_mae"] = mean_dmae / static_cast<double>(delta_mae.size());
  report["wilcoxon_p_auc"] = wilcoxon_signed_rank(delta_auc);
  report["wilcoxon_p_mae"] = wilcoxon_signed_rank(delta_mae);
  nlohmann::json tertiles = nlohmann::json::array();
  for (int t = 0; t < 3; ++t) {
    nlohmann::json tj;
    tj["n"] = tertile_delta_n[static_cast<size_t>(t)];
    tj["mean_delta_auc"] = tertile_delta_n[static_cast<size_t>(t)]
                               ? tertile_delta_sum[static_cast<size_t>(t)] /
                                     static_cast<double>(tertile_delta_n[static_cast<size_t>(t)])
                               : 0.0;
    tertiles.push_back(tj);
  }
  report["tertiles"] = tertiles;
  auto sp = spearman_perm(prevalence, delta_auc, 999, derive_seed(seed, "compare"));
  if (sp) {
    report["spearman_prevalence_delta_auc"] = {{"rho", sp->rho}, {"p_perm", sp->p}};
  }
  return report;
}

RunLock::RunLock(const std::string& run_dir) {
  fs::create_directories(run_dir);
  path_ = run_dir + "/.lock";
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error("run directory '" + run_dir +
                             "' is locked by another writer; remove " + path_ +
                             " if that run is dead");
  }
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace trajphen
