#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctld/error.hpp"
#include "ctld/tensor.hpp"

namespace ctld {

template <typename Scalar>
struct ParamEntry {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // accumulator, always same shape as value
  bool trainable = true;
};

/// Named parameter collection. Entries keep insertion order and stable
/// addresses, so graphs may bind to them for the lifetime of the store.
template <typename Scalar>
class ParamStore {
 public:
  ParamEntry<Scalar>& add(const std::string& name, Tensor<Scalar> value, bool trainable = true) {
    if (index_.count(name)) throw UsageError("duplicate parameter: " + name);
    index_[name] = entries_.size();
    names_.push_back(name);
    ParamEntry<Scalar> e;
    e.grad = Tensor<Scalar>(value.shape());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ParamEntry<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }
  const ParamEntry<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }

  std::size_t count() const { return entries_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  ParamEntry<Scalar>& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry<Scalar>& entry(std::size_t i) const { return entries_[i]; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.set_zero();
  }

  void set_trainable_all(bool t) {
    for (auto& e : entries_) e.trainable = t;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::deque<ParamEntry<Scalar>> entries_;  // deque: stable element addresses
};

}  // namespace ctld
