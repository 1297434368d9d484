#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "trajphen/rng.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered collection of named learnable tensors. Name paths double as
// checkpoint keys, so they must be unique and stable across runs.
class ParamRegistry {
 public:
  Tensor create_zeros(const std::string& name, Shape shape) {
    Tensor t(std::move(shape), 0.0, true);
    insert(name, t);
    return t;
  }

  Tensor create_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape), 0.0, true);
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    insert(name, t);
    return t;
  }

  // Normal init with std 1/sqrt(fan_in), the default for linear weights here.
  Tensor create_fanin(const std::string& name, Shape shape, Rng& rng) {
    if (shape.empty()) throw std::invalid_argument("create_fanin: scalar shape");
    double fan_in = static_cast<double>(shape[0]);
    return create_normal(name, shape, 1.0 / std::sqrt(fan_in), rng);
  }

  void insert(const std::string& name, Tensor t, bool trainable = true) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParamRegistry: duplicate parameter name '" + name + "'");
    }
    index_[name] = items_.size();
    items_.push_back(NamedParam{name, std::move(t), trainable});
  }

  const std::vector<NamedParam>& items() const { return items_; }

  Tensor* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].tensor;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }

  std::vector<Tensor> trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : items_) {
      if (p.trainable) out.push_back(p.tensor);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  size_t size() const { return items_.size(); }

  // Deep copy of all parameter values (for best-checkpoint snapshots).
  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> s;
    s.reserve(items_.size());
    for (const auto& p : items_) s.push_back(p.tensor.data());
    return s;
  }

  void restore(const std::vector<std::vector<double>>& s) {
    if (s.size() != items_.size()) throw std::invalid_argument("ParamRegistry::restore: size mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i].size() != items_[i].tensor.data().size()) {
        throw std::invalid_argument("ParamRegistry::restore: shape mismatch at '" + items_[i].name + "'");
      }
      items_[i].tensor.data() = s[i];
    }
  }

 private:
  std::vector<NamedParam> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace trajphen
