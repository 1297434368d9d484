#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajphen {

// N x d matrix of per-subject embeddings with id lookup.
struct EmbeddingMatrix {
  std::vector<int64_t> subject_ids;
  int64_t dim = 0;
  std::vector<double> data;  // [n, dim] row-major

  int64_t n() const { return static_cast<int64_t>(subject_ids.size()); }

  void append(int64_t subject_id, const std::vector<double>& row) {
    if (dim == 0) dim = static_cast<int64_t>(row.size());
    if (static_cast<int64_t>(row.size()) != dim) {
      throw std::invalid_argument("EmbeddingMatrix: inconsistent row width");
    }
    index_[subject_id] = subject_ids.size();
    subject_ids.push_back(subject_id);
    data.insert(data.end(), row.begin(), row.end());
  }

  bool contains(int64_t subject_id) const { return index_.count(subject_id) > 0; }

  const double* row(int64_t subject_id) const {
    auto it = index_.find(subject_id);
    if (it == index_.end()) {
      throw std::invalid_argument("EmbeddingMatrix: no embedding for subject " +
                                  std::to_string(subject_id));
    }
    return data.data() + static_cast<int64_t>(it->second) * dim;
  }

  void rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < subject_ids.size(); ++i) index_[subject_ids[i]] = i;
  }

 private:
  std::unordered_map<int64_t, size_t> index_;
};

}  // namespace trajphen
