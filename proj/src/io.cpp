#include "trajphen/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace trajphen {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("parse_double: bad number '" + s + "'");
  }
  return v;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::string& path) {
  return nlohmann::json::parse(read_text_file(path));
}

void write_trajectories_jsonl(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::string out;
  for (const Trajectory& t : trajs) {
    nlohmann::json j;
    j["subject_id"] = t.subject_id;
    j["codes"] = t.codes;
    j["ages_days"] = t.ages_days;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<Trajectory> read_trajectories_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Trajectory t;
    t.subject_id = j.at("subject_id").get<int64_t>();
    t.codes = j.at("codes").get<std::vector<int>>();
    t.ages_days = j.at("ages_days").get<std::vector<double>>();
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_idp_csv(const std::string& path, const RawIdpCohort& cohort) {
  std::string out = "subject_id";
  for (const std::string& c : cohort.columns) {
    out += ',';
    out += c;
  }
  out += '\n';
  const int64_t nc = cohort.n_columns();
  for (int64_t r = 0; r < cohort.n_subjects(); ++r) {
    out += std::to_string(cohort.subject_ids[static_cast<size_t>(r)]);
    for (int64_t c = 0; c < nc; ++c) {
      out += ',';
      if (cohort.present[static_cast<size_t>(r * nc + c)]) {
        out += format_double(cohort.values[static_cast<size_t>(r * nc + c)]);
      }
    }
    out += '\n';
  }
  write_text_file(path, out);
}

RawIdpCohort read_idp_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  RawIdpCohort cohort;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("'" + path + "' is empty");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "subject_id") {
    throw std::runtime_error("'" + path + "': first column must be subject_id");
  }
  cohort.columns.assign(header.begin() + 1, header.end());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("'" + path + "': row width mismatch");
    }
    cohort.subject_ids.push_back(static_cast<int64_t>(std::stoll(cells[0])));
    for (size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        cohort.values.push_back(0.0);
        cohort.present.push_back(0);
      } else {
        cohort.values.push_back(parse_double(cells[c]));
        cohort.present.push_back(1);
      }
    }
  }
  return cohort;
}

void write_labels_csv(const std::string& path, const std::vector<OutcomeLabel>& labels) {
  std::string out = "subject_id,disease_id,onset_flag,onset_age_days\n";
  for (const OutcomeLabel& l : labels) {
    out += std::to_string(l.subject_id);
    out += ',';
    out += std::to_string(l.disease_id);
    out += ',';
    out += l.onset ? '1' : '0';
    out += ',';
    if (l.onset) out += format_double(l.onset_age_days);
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<OutcomeLabel> read_labels_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<OutcomeLabel> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 4) throw std::runtime_error("'" + path + "': bad label row");
    OutcomeLabel l;
    l.subject_id = static_cast<int64_t>(std::stoll(cells[0]));
    l.disease_id = std::stoi(cells[1]);
    l.onset = cells[2] == "1";
    l.onset_age_days = cells[3].empty() ? 0.0 : parse_double(cells[3]);
    out.push_back(l);
  }
  return out;
}

void write_registry_csv(const std::string& path, const SplitRegistry& registry,
                        const std::unordered_map<int64_t, double>& imaging_age_days) {
  std::string out = "subject_id,stage,imaging_age_days\n";
  for (const auto& [id, stage] : registry.entries()) {
    out += std::to_string(id);
    out += ',';
    out += stage_to_string(stage);
    out += ',';
    auto it = imaging_age_days.find(id);
    if (it != imaging_age_days.end()) out += format_double(it->second);
    out += '\n';
  }
  write_text_file(path, out);
}

std::pair<SplitRegistry, std::unordered_map<int64_t, double>> read_registry_csv(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  SplitRegistry registry;
  std::unordered_map<int64_t, double> ages;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 3) throw std::runtime_error("'" + path + "': bad registry row");
    int64_t id = static_cast<int64_t>(std::stoll(cells[0]));
    registry.assign(id, stage_from_string(cells[1]));
    if (!cells[2].empty()) ages[id] = parse_double(cells[2]);
  }
  return {std::move(registry), std::move(ages)};
}

void write_embeddings_csv(const std::string& path, const EmbeddingMatrix& emb) {
  std::string out = "subject_id";
  for (int64_t i = 0; i < emb.dim; ++i) {
    out += ",e";
    out += std::to_string(i);
  }
  out += '\n';
  for (int64_t r = 0; r < emb.n(); ++r) {
    out += std::to_string(emb.subject_ids[static_cast<size_t>(r)]);
    for (int64_t c = 0; c < emb.dim; ++c) {
      out += ',';
      out += format_double(emb.data[static_cast<size_t>(r * emb.dim + c)]);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

EmbeddingMatrix read_embeddings_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  EmbeddingMatrix emb;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 2) throw std::runtime_error("'" + path + "': bad embedding row");
    std::vector<double> row;
    row.reserve(cells.size() - 1);
    for (size_t c = 1; c < cells.size(); ++c) row.push_back(parse_double(cells[c]));
    emb.append(static_cast<int64_t>(std::stoll(cells[0])), row);
  }
  return emb;
}

void write_geometry_pairs_csv(const std::string& path, const GeometryReport& report) {
  std::string out = "sim_traj,sim_idp\n";
  for (size_t i = 0; i < report.sim_traj.size(); ++i) {
    out += format_double(report.sim_traj[i]);
    out += ',';
    out += format_double(report.sim_idp[i]);
    out += '\n';
  }
  write_text_file(path, out);
}

void write_geometry_bins_csv(const std::string& path, const GeometryReport& report) {
  std::string out = "bin_lo,bin_hi,mean,ci_lo,ci_hi\n";
  for (const GeometryBin& b : report.bins) {
    out += format_double(b.lo);
    out += ',';
    out += format_double(b.hi);
    out += ',';
    out += format_double(b.mean_idp);
    out += ',';
    out += format_double(b.ci_lo);
    out += ',';
    out += format_double(b.ci_hi);
    out += '\n';
  }
  write_text_file(path, out);
}

void log_kv(const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string line;
  for (const auto& [k, v] : fields) {
    if (!line.empty()) line += ' ';
    line += k;
    line += '=';
    line += v;
  }
  std::cout << line << '\n' << std::flush;
}

}  // namespace trajphen
