#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/features.hpp"
#include "kshield/index.hpp"
#include "kshield/model.hpp"
#include "kshield/store.hpp"
#include "kshield/tensor.hpp"

namespace kshield {

// Nearest-neighbor defense: retrieve K neighbors of the query descriptor,
// weight their stored predictions, and combine into a final class. Inputs
// are classified through their retrieved neighbors, never directly.

enum class Weighting : uint8_t { kUniform, kCbwEntropy, kCbwDiversity };
enum class Combination : uint8_t { kSoft, kHard };

inline const char* weighting_name(Weighting w) {
  switch (w) {
    case Weighting::kUniform: return "uw";
    case Weighting::kCbwEntropy: return "cbw-e";
    case Weighting::kCbwDiversity: return "cbw-d";
  }
  return "?";
}

inline const char* combination_name(Combination c) {
  return c == Combination::kSoft ? "soft" : "hard";
}

inline Weighting parse_weighting(const std::string& s) {
  if (s == "uw") return Weighting::kUniform;
  if (s == "cbw-e") return Weighting::kCbwEntropy;
  if (s == "cbw-d") return Weighting::kCbwDiversity;
  throw std::invalid_argument("unknown weighting '" + s + "' (expected uw, cbw-e, cbw-d)");
}

inline Combination parse_combination(const std::string& s) {
  if (s == "soft") return Combination::kSoft;
  if (s == "hard") return Combination::kHard;
  throw std::invalid_argument("unknown combination '" + s + "' (expected soft, hard)");
}

struct DefenseConfig {
  int k = 50;
  Weighting weighting = Weighting::kCbwDiversity;
  Combination combination = Combination::kSoft;
  int m = 20;  // CBW-D gap count, effective value min(m, classes - 1)
  int p = 3;   // CBW-D gap exponent

  void validate() const {
    if (k < 1) throw std::invalid_argument("defense config: K must be >= 1");
    if (m < 1) throw std::invalid_argument("defense config: M must be >= 1");
    if (p < 1) throw std::invalid_argument("defense config: P must be >= 1");
  }
};

inline std::vector<float> weight_uniform(int k) {
  if (k < 1) throw std::invalid_argument("weight_uniform: K must be >= 1");
  return std::vector<float>(static_cast<size_t>(k), 1.0f / static_cast<float>(k));
}

namespace detail {
inline void check_softmax(const std::vector<float>& s) {
  if (s.size() < 2) throw std::invalid_argument("weighting: softmax must have >= 2 entries");
  double sum = 0.0;
  for (float v : s) {
    if (v < 0.0f) throw std::invalid_argument("weighting: negative softmax entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-4) {
    throw std::invalid_argument("weighting: softmax sums to " + std::to_string(sum) + ", not 1");
  }
}
}  // namespace detail

// Entropy gap |log C + sum_c s_c log s_c|, natural log, 0*log(0) = 0.
// Zero for a uniform prediction, log C for a one-hot prediction.
inline float weight_cbw_e(const std::vector<float>& softmax) {
  detail::check_softmax(softmax);
  const double c = static_cast<double>(softmax.size());
  double acc = std::log(c);
  for (float v : softmax) {
    if (v > 0.0f) acc += static_cast<double>(v) * std::log(static_cast<double>(v));
  }
  return static_cast<float>(std::abs(acc));
}

// Diversity of the top of the softmax: sum over the next M_eff values of
// (s_hat_1 - s_hat_m)^P on the descending-sorted vector.
inline float weight_cbw_d(const std::vector<float>& softmax, int m, int p) {
  detail::check_softmax(softmax);
  if (m < 1 || p < 1) throw std::invalid_argument("weight_cbw_d: M and P must be >= 1");
  std::vector<float> sorted(softmax);
  std::sort(sorted.begin(), sorted.end(), std::greater<float>());
  const int m_eff = std::min<int>(m, static_cast<int>(softmax.size()) - 1);
  double acc = 0.0;
  for (int i = 1; i <= m_eff; ++i) {
    acc += std::pow(static_cast<double>(sorted[0]) - sorted[static_cast<size_t>(i)], p);
  }
  return static_cast<float>(acc);
}

namespace detail {
// Weights normalized to sum 1; an all-zero vector (every neighbor exactly
// uniform under CBW) falls back to uniform weights.
inline std::vector<float> normalize_weights(const std::vector<float>& weights) {
  if (weights.empty()) throw std::invalid_argument("combine: no weights");
  double sum = 0.0;
  for (float w : weights) {
    if (w < 0.0f) throw std::invalid_argument("combine: negative weight");
    sum += w;
  }
  std::vector<float> out(weights.size());
  if (sum <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0f / static_cast<float>(weights.size()));
    return out;
  }
  for (size_t i = 0; i < weights.size(); ++i) out[i] = static_cast<float>(weights[i] / sum);
  return out;
}
}  // namespace detail

struct SoftCombineResult {
  int predicted = 0;
  std::vector<float> combined;
};

inline SoftCombineResult combine_soft(const std::vector<std::vector<float>>& softmaxes,
                                      const std::vector<float>& weights) {
  if (softmaxes.empty() || softmaxes.size() != weights.size()) {
    throw std::invalid_argument("combine_soft: need equal nonzero softmax/weight counts");
  }
  const size_t c = softmaxes[0].size();
  std::vector<float> norm = detail::normalize_weights(weights);
  std::vector<double> acc(c, 0.0);
  for (size_t i = 0; i < softmaxes.size(); ++i) {
    if (softmaxes[i].size() != c) throw std::invalid_argument("combine_soft: ragged softmax vectors");
    for (size_t j = 0; j < c; ++j) acc[j] += static_cast<double>(norm[i]) * softmaxes[i][j];
  }
  SoftCombineResult res;
  res.combined.resize(c);
  for (size_t j = 0; j < c; ++j) res.combined[j] = static_cast<float>(acc[j]);
  res.predicted = argmax_lowest(res.combined);
  return res;
}

inline int combine_hard(const std::vector<int>& labels, const std::vector<float>& weights,
                        int classes) {
  if (labels.empty() || labels.size() != weights.size()) {
    throw std::invalid_argument("combine_hard: need equal nonzero label/weight counts");
  }
  std::vector<float> norm = detail::normalize_weights(weights);
  std::vector<float> tally(static_cast<size_t>(classes), 0.0f);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw std::invalid_argument("combine_hard: label out of range");
    tally[static_cast<size_t>(labels[i])] += norm[i];
  }
  return argmax_lowest(tally);
}

struct DefensePrediction {
  int predicted = 0;
  std::vector<float> combined;  // soft: probability vector; hard: weight tally
  NeighborSet neighbors;
  std::vector<float> weights;  // pre-normalization, as assigned per neighbor
};

struct DefenseArtifacts {
  IndexHandle index;
  PredictionStore store;
  FeaturePipeline pipeline;
};

inline DefensePrediction classify_descriptor(const FeatureVector& descriptor,
                                             const DefenseArtifacts& artifacts,
                                             const DefenseConfig& config) {
  config.validate();
  if (artifacts.index.count() == 0) throw std::invalid_argument("defend: empty index");
  DefensePrediction pred;
  pred.neighbors = artifacts.index.search(descriptor, config.k);

  std::vector<std::vector<float>> softmaxes;
  softmaxes.reserve(pred.neighbors.size());
  for (const Neighbor& nb : pred.neighbors) softmaxes.push_back(artifacts.store.get(nb.id));

  pred.weights.resize(pred.neighbors.size());
  for (size_t i = 0; i < softmaxes.size(); ++i) {
    switch (config.weighting) {
      case Weighting::kUniform:
        pred.weights[i] = 1.0f / static_cast<float>(pred.neighbors.size());
        break;
      case Weighting::kCbwEntropy:
        pred.weights[i] = weight_cbw_e(softmaxes[i]);
        break;
      case Weighting::kCbwDiversity:
        pred.weights[i] = weight_cbw_d(softmaxes[i], config.m, config.p);
        break;
    }
  }

  if (config.combination == Combination::kSoft) {
    SoftCombineResult res = combine_soft(softmaxes, pred.weights);
    pred.predicted = res.predicted;
    pred.combined = std::move(res.combined);
  } else {
    std::vector<int> labels(softmaxes.size());
    for (size_t i = 0; i < softmaxes.size(); ++i) labels[i] = argmax_lowest(softmaxes[i]);
    std::vector<float> norm = detail::normalize_weights(pred.weights);
    std::vector<float> tally(static_cast<size_t>(artifacts.store.classes()), 0.0f);
    for (size_t i = 0; i < labels.size(); ++i) tally[static_cast<size_t>(labels[i])] += norm[i];
    pred.predicted = argmax_lowest(tally);
    pred.combined = std::move(tally);
  }
  return pred;
}

// Full defense: descriptor -> K-NN retrieval -> weighted prediction combine.
inline DefensePrediction defend_classify(const Checkpoint& model, const Tensor& image,
                                         const DefenseArtifacts& artifacts, const DefenseConfig& config) {
  FeatureVector descriptor = extract_descriptor(model, artifacts.pipeline, image);
  return classify_descriptor(descriptor, artifacts, config);
}

}  // namespace kshield
