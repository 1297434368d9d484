#include "trajphen/idp_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace trajphen {

namespace {

std::string organ_of(const std::string& column) {
  auto dot = column.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == column.size()) {
    throw std::invalid_argument("idp column '" + column + "' is not of the form organ.feature");
  }
  return column.substr(0, dot);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

IdpSchema fit_idp_schema(const RawIdpCohort& cohort, const std::vector<int64_t>& stat_subjects,
                         double max_missing_rate) {
  if (cohort.n_subjects() == 0 || cohort.n_columns() == 0) {
    throw std::invalid_argument("fit_idp_schema: empty cohort");
  }
  std::set<int64_t> stat_set(stat_subjects.begin(), stat_subjects.end());
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < cohort.n_subjects(); ++i) {
    if (stat_set.count(cohort.subject_ids[static_cast<size_t>(i)])) rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("fit_idp_schema: no statistics subjects in cohort");

  IdpSchema schema;
  schema.max_missing_rate = max_missing_rate;
  const int64_t nc = cohort.n_columns();
  for (int64_t c = 0; c < nc; ++c) {
    IdpFeatureStat stat;
    stat.column = cohort.columns[static_cast<size_t>(c)];
    stat.organ = organ_of(stat.column);
    std::vector<double> observed;
    for (int64_t r : rows) {
      if (cohort.present[static_cast<size_t>(r * nc + c)]) {
        observed.push_back(cohort.values[static_cast<size_t>(r * nc + c)]);
      }
    }
    stat.missing_rate =
        1.0 - static_cast<double>(observed.size()) / static_cast<double>(rows.size());
    if (observed.empty()) {
      stat.kept = false;
      schema.warnings.push_back("feature " + stat.column +
                                " has no observed values in the statistics split; dropped");
    } else if (stat.missing_rate > max_missing_rate) {
      stat.kept = false;
    } else {
      stat.kept = true;
      stat.median = median_of(observed);
      // moments of the imputed statistics-split column
      double sum = 0.0;
      for (int64_t r : rows) {
        double v = cohort.present[static_cast<size_t>(r * nc + c)]
                       ? cohort.values[static_cast<size_t>(r * nc + c)]
                       : stat.median;
        sum += v;
      }
      stat.mean = sum / static_cast<double>(rows.size());
      double ss = 0.0;
      for (int64_t r : rows) {
        double v = cohort.present[static_cast<size_t>(r * nc + c)]
                       ? cohort.values[static_cast<size_t>(r * nc + c)]
                       : stat.median;
        ss += (v - stat.mean) * (v - stat.mean);
      }
      stat.stddev = std::sqrt(ss / static_cast<double>(rows.size()));
      if (stat.stddev <= 0.0) stat.stddev = 1.0;  // constant feature, pass through centered
    }
    schema.features.push_back(std::move(stat));
  }

  for (const auto& f : schema.features) {
    if (!f.kept) continue;
    auto it = std::find(schema.organ_names.begin(), schema.organ_names.end(), f.organ);
    if (it == schema.organ_names.end()) {
      schema.organ_names.push_back(f.organ);
      schema.organ_dims.push_back(1);
    } else {
      schema.organ_dims[static_cast<size_t>(it - schema.organ_names.begin())] += 1;
    }
  }
  if (schema.organ_names.empty()) {
    throw std::invalid_argument("fit_idp_schema: every feature was dropped");
  }
  return schema;
}

std::vector<IdpRecord> apply_idp_schema(const RawIdpCohort& cohort, const IdpSchema& schema) {
  if (cohort.n_columns() != static_cast<int64_t>(schema.features.size())) {
    throw std::invalid_argument("apply_idp_schema: cohort has " +
                                std::to_string(cohort.n_columns()) + " columns, schema has " +
                                std::to_string(schema.features.size()));
  }
  // map kept columns to (organ slot, position)
  std::vector<std::pair<int, int>> placement(schema.features.size(), {-1, -1});
  std::vector<int> fill(schema.organ_names.size(), 0);
  for (size_t c = 0; c < schema.features.size(); ++c) {
    const auto& f = schema.features[c];
    if (!f.kept) continue;
    auto it = std::find(schema.organ_names.begin(), schema.organ_names.end(), f.organ);
    int organ = static_cast<int>(it - schema.organ_names.begin());
    placement[c] = {organ, fill[static_cast<size_t>(organ)]++};
  }

  const int64_t nc = cohort.n_columns();
  std::vector<IdpRecord> out;
  out.reserve(static_cast<size_t>(cohort.n_subjects()));
  for (int64_t r = 0; r < cohort.n_subjects(); ++r) {
    IdpRecord rec;
    rec.subject_id = cohort.subject_ids[static_cast<size_t>(r)];
    rec.organs.resize(schema.organ_names.size());
    for (size_t o = 0; o < schema.organ_dims.size(); ++o) {
      rec.organs[o].resize(static_cast<size_t>(schema.organ_dims[o]));
    }
    for (size_t c = 0; c < placement.size(); ++c) {
      if (placement[c].first < 0) continue;
      const auto& f = schema.features[c];
      double v = cohort.present[static_cast<size_t>(r * nc + static_cast<int64_t>(c))]
                     ? cohort.values[static_cast<size_t>(r * nc + static_cast<int64_t>(c))]
                     : f.median;
      rec.organs[static_cast<size_t>(placement[c].first)][static_cast<size_t>(placement[c].second)] =
          (v - f.mean) / f.stddev;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Tensor> organ_batch(const std::vector<IdpRecord>& records,
                                const std::vector<size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("organ_batch: empty batch");
  const size_t n_organs = records[indices[0]].organs.size();
  std::vector<Tensor> out;
  out.reserve(n_organs);
  for (size_t o = 0; o < n_organs; ++o) {
    int64_t d = static_cast<int64_t>(records[indices[0]].organs[o].size());
    Tensor t({static_cast<int64_t>(indices.size()), d});
    for (size_t i = 0; i < indices.size(); ++i) {
      const auto& src = records[indices[i]].organs[o];
      if (static_cast<int64_t>(src.size()) != d) {
        throw std::invalid_argument("organ_batch: inconsistent organ dimension across records");
      }
      std::copy(src.begin(), src.end(), t.data().begin() + static_cast<int64_t>(i) * d);
    }
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::json IdpSchema::to_json() const {
  nlohmann::json j;
  j["max_missing_rate"] = max_missing_rate;
  j["organ_names"] = organ_names;
  j["organ_dims"] = organ_dims;
  j["warnings"] = warnings;
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : features) {
    feats.push_back({{"column", f.column},
                     {"organ", f.organ},
                     {"kept", f.kept},
                     {"missing_rate", f.missing_rate},
                     {"median", f.median},
                     {"mean", f.mean},
                     {"stddev", f.stddev}});
  }
  j["features"] = feats;
  return j;
}

IdpSchema IdpSchema::from_json(const nlohmann::json& j) {
  IdpSchema s;
  s.max_missing_rate = j.at("max_missing_rate").get<double>();
  s.organ_names = j.at("organ_names").get<std::vector<std::string>>();
  s.organ_dims = j.at("organ_dims").get<std::vector<int>>();
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const auto& fj : j.at("features")) {
    IdpFeatureStat f;
    f.column = fj.at("column").get<std::string>();
    f.organ = fj.at("organ").get<std::string>();
    f.kept = fj.at("kept").get<bool>();
    f.missing_rate = fj.at("missing_rate").get<double>();
    f.median = fj.at("median").get<double>();
    f.mean = fj.at("mean").get<double>();
    f.stddev = fj.at("stddev").get<double>();
    s.features.push_back(std::move(f));
  }
  return s;
}

void IdpEncoderConfig::validate() const {
  if (organ_dims.empty()) throw std::invalid_argument("IdpEncoderConfig: need at least one organ");
  for (int d_o : organ_dims) {
    if (d_o <= 0) throw std::invalid_argument("IdpEncoderConfig: organ dims must be positive");
  }
  if (d <= 0 || d_e <= 0 || n_layers < 0 || n_heads <= 0 || mlp_hidden <= 0) {
    throw std::invalid_argument("IdpEncoderConfig: dimensions must be positive");
  }
  if (d % n_heads != 0) {
    throw std::invalid_argument("IdpEncoderConfig: d must be divisible by n_heads");
  }
}

nlohmann::json IdpEncoderConfig::to_json() const {
  return {{"organ_dims", organ_dims}, {"d", d},       {"d_e", d_e},
          {"n_layers", n_layers},     {"n_heads", n_heads}, {"mlp_hidden", mlp_hidden}};
}

IdpEncoderConfig IdpEncoderConfig::from_json(const nlohmann::json& j) {
  IdpEncoderConfig c;
  c.organ_dims = j.at("organ_dims").get<std::vector<int>>();
  c.d = j.at("d").get<int>();
  c.d_e = j.at("d_e").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  return c;
}

IdpEncoder::IdpEncoder(IdpEncoderConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int n_organs = static_cast<int>(cfg_.organ_dims.size());
  for (int o = 0; o < n_organs; ++o) {
    organ_proj_.emplace_back(params_, "idp.organ" + std::to_string(o) + ".proj",
                             cfg_.organ_dims[static_cast<size_t>(o)], cfg_.d, rng);
    organ_emb_.push_back(params_.create_normal("idp.organ" + std::to_string(o) + ".emb",
                                               {cfg_.d_e}, 1.0, rng));
  }
  shared_mlp_ = Mlp(params_, "idp.shared_mlp", cfg_.d + cfg_.d_e, cfg_.mlp_hidden, cfg_.d, rng);
  cls_ = params_.create_normal("idp.cls", {cfg_.d}, 1.0, rng);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    blocks_.emplace_back(params_, "idp.block" + std::to_string(l), cfg_.d, cfg_.n_heads,
                         cfg_.mlp_hidden, rng);
  }
  if (cfg_.n_layers > 0) ln_f_ = LayerNorm(params_, "idp.ln_f", cfg_.d);
}

IdpEncoder::ForwardOut IdpEncoder::forward(const std::vector<Tensor>& organs) const {
  const size_t n_organs = cfg_.organ_dims.size();
  if (organs.size() != n_organs) {
    throw std::invalid_argument("IdpEncoder::forward: expected " + std::to_string(n_organs) +
                                " organ matrices, got " + std::to_string(organs.size()));
  }
  const int64_t n = organs[0].dim(0);
  std::vector<Tensor> tokens;
  tokens.reserve(n_organs + 1);
  tokens.push_back(reshape(expand_leading(cls_, n), {n, 1, cfg_.d}));
  for (size_t o = 0; o < n_organs; ++o) {
    if (organs[o].rank() != 2 || organs[o].dim(1) != cfg_.organ_dims[o] || organs[o].dim(0) != n) {
      throw std::invalid_argument("IdpEncoder::forward: organ " + std::to_string(o) +
                                  " has shape " + shape_str(organs[o].shape()) + ", expected [" +
                                  std::to_string(n) + "," + std::to_string(cfg_.organ_dims[o]) + "]");
    }
    Tensor h = organ_proj_[o].forward(organs[o]);                       // [N,d]
    Tensor cat = concat({h, expand_leading(organ_emb_[o], n)}, 1);      // [N,d+d_e]
    tokens.push_back(reshape(shared_mlp_.forward(cat), {n, 1, cfg_.d}));
  }
  Tensor x = concat(tokens, 1);  // [N, O+1, d]

  ForwardOut out;
  if (cfg_.n_layers == 0) {
    Tensor organ_states = slice_axis(x, 1, 1, static_cast<int64_t>(n_organs));
    out.cls = mean_axis(organ_states, 1);
    out.organ_tokens = organ_states;
    return out;
  }
  for (const TransformerBlock& block : blocks_) x = block.forward(x, nullptr);
  x = ln_f_.forward(x);
  out.cls = reshape(slice_axis(x, 1, 0, 1), {n, cfg_.d});
  out.organ_tokens = slice_axis(x, 1, 1, static_cast<int64_t>(n_organs));
  return out;
}

std::vector<double> IdpEncoder::project_organ(const std::vector<double>& x, int organ_index) const {
  if (organ_index < 0 || organ_index >= static_cast<int>(cfg_.organ_dims.size())) {
    throw std::invalid_argument("project_organ: organ index out of range");
  }
  int64_t d_o = cfg_.organ_dims[static_cast<size_t>(organ_index)];
  if (static_cast<int64_t>(x.size()) != d_o) {
    throw std::invalid_argument("project_organ: input has " + std::to_string(x.size()) +
                                " features, organ schema expects " + std::to_string(d_o));
  }
  NoGradGuard ng;
  Tensor in = Tensor::from_data({1, d_o}, x);
  Tensor h = organ_proj_[static_cast<size_t>(organ_index)].forward(in);
  Tensor cat = concat({h, expand_leading(organ_emb_[static_cast<size_t>(organ_index)], 1)}, 1);
  Tensor z = shared_mlp_.forward(cat);
  return z.data();
}

}  // namespace trajphen
