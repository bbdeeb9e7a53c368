#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "freqformer/error.hpp"
#include "freqformer/tensor.hpp"

namespace fqf {

/// Ordered, uniquely-named view of a model's trainable tensors. Handles are
/// shallow, so updates through the list are visible to the owning modules.
template <class T>
class ParamList {
 public:
  using Item = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(tensor));
  }

  void append(const ParamList& other) {
    for (const auto& [name, t] : other) add(name, t);
  }

  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }

  /// Total number of scalar parameters.
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() const {
    for (const auto& item : items_) {
      Tensor<T> t = item.second;
      t.zero_grad();
    }
  }

  /// Only the entries whose name starts with `prefix`.
  ParamList filter(const std::string& prefix) const {
    ParamList out;
    for (const auto& [name, t] : items_) {
      if (name.rfind(prefix, 0) == 0) out.add(name, t);
    }
    return out;
  }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Makes a fresh leaf that requires grad.
template <class T>
Tensor<T> make_parameter(Tensor<T> t) {
  t.set_requires_grad(true);
  return t;
}

/// Overwrites every parameter with N(0, stddev^2) noise. Used by gradient
/// checks so that zero-initialized branches carry non-trivial gradients.
template <class T>
void randomize_parameters(const ParamList<T>& params, Rng& rng, double stddev) {
  for (const auto& item : params) {
    Tensor<T> t = item.second;
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal() * stddev);
  }
}

}  // namespace fqf
