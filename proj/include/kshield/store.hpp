#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "kshield/io.hpp"
#include "kshield/model.hpp"

namespace kshield {

struct StoreNotFoundError : std::runtime_error {
  explicit StoreNotFoundError(uint64_t id)
      : std::runtime_error("prediction store: no entry for id " + std::to_string(id)) {}
};

// Key-value map from database image id to its precomputed softmax vector.
// Entries keep insertion order so serialization is deterministic.
class PredictionStore {
 public:
  explicit PredictionStore(int classes = 0) : classes_(classes) {}

  int classes() const { return classes_; }
  size_t size() const { return entries_.size(); }

  void put(uint64_t id, std::vector<float> softmax) {
    if (classes_ == 0) classes_ = static_cast<int>(softmax.size());
    if (static_cast<int>(softmax.size()) != classes_) {
      throw std::invalid_argument("store_put: softmax length " + std::to_string(softmax.size()) +
                                  " does not match class count " + std::to_string(classes_));
    }
    double sum = 0.0;
    for (float v : softmax) {
      if (v < 0.0f) throw std::invalid_argument("store_put: negative softmax entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) {
      throw std::invalid_argument("store_put: softmax sums to " + std::to_string(sum) + ", not 1");
    }
    auto it = lookup_.find(id);
    if (it != lookup_.end()) {
      entries_[it->second].second = std::move(softmax);
      return;
    }
    lookup_.emplace(id, entries_.size());
    entries_.emplace_back(id, std::move(softmax));
  }

  bool contains(uint64_t id) const { return lookup_.count(id) != 0; }

  const std::vector<float>& get(uint64_t id) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw StoreNotFoundError(id);
    return entries_[it->second].second;
  }

  // Hard label: argmax with lowest-index tie-break.
  int hard_label(uint64_t id) const { return argmax_lowest(get(id)); }

  const std::vector<std::pair<uint64_t, std::vector<float>>>& entries() const { return entries_; }

 private:
  int classes_;
  std::vector<std::pair<uint64_t, std::vector<float>>> entries_;
  std::unordered_map<uint64_t, size_t> lookup_;
};

inline constexpr const char* kStoreMagic = "KSKV0001";

inline void store_save(const PredictionStore& store, const std::string& path) {
  BinaryWriter w(path);
  w.magic(kStoreMagic);
  w.u32(static_cast<uint32_t>(store.classes()));
  w.u64(store.size());
  for (const auto& [id, softmax] : store.entries()) {
    w.u64(id);
    w.f32_array(softmax.data(), softmax.size());
  }
  w.close();
}

inline PredictionStore store_load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kStoreMagic);
  const int classes = static_cast<int>(r.u32());
  const uint64_t count = r.u64();
  if (classes < 2) throw std::runtime_error(path + ": implausible class count");
  PredictionStore store(classes);
  std::vector<float> softmax(static_cast<size_t>(classes));
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t id = r.u64();
    r.f32_array(softmax.data(), softmax.size());
    store.put(id, softmax);
  }
  return store;
}

}  // namespace kshield
