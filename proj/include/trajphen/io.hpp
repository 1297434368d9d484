#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajphen/cohort.hpp"
#include "trajphen/embedding.hpp"
#include "trajphen/geometry.hpp"
#include "trajphen/idp_encoder.hpp"
#include "trajphen/risk_sets.hpp"
#include "trajphen/trajectory_model.hpp"

namespace trajphen {

// Shortest round-trip decimal representation; identical bytes for identical
// doubles, exact value recovery on read.
std::string format_double(double v);
double parse_double(const std::string& s);

bool file_exists(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

// One subject per line: {"subject_id": int, "codes": [int], "ages_days": [num]}
void write_trajectories_jsonl(const std::string& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories_jsonl(const std::string& path);

// Header subject_id,<organ>.<feature>,...; empty cell = missing value.
void write_idp_csv(const std::string& path, const RawIdpCohort& cohort);
RawIdpCohort read_idp_csv(const std::string& path);

// subject_id,disease_id,onset_flag,onset_age_days (age empty when no onset)
void write_labels_csv(const std::string& path, const std::vector<OutcomeLabel>& labels);
std::vector<OutcomeLabel> read_labels_csv(const std::string& path);

// subject_id,stage,imaging_age_days
void write_registry_csv(const std::string& path, const SplitRegistry& registry,
                        const std::unordered_map<int64_t, double>& imaging_age_days);
std::pair<SplitRegistry, std::unordered_map<int64_t, double>> read_registry_csv(
    const std::string& path);

// subject_id,e0,...,e{d-1}
void write_embeddings_csv(const std::string& path, const EmbeddingMatrix& emb);
EmbeddingMatrix read_embeddings_csv(const std::string& path);

// Plot-ready geometry exports.
void write_geometry_pairs_csv(const std::string& path, const GeometryReport& report);
void write_geometry_bins_csv(const std::string& path, const GeometryReport& report);

// Line-oriented machine-parseable progress log: key=value pairs.
void log_kv(const std::vector<std::pair<std::string, std::string>>& fields);

}  // namespace trajphen
