#include "kshield/defense.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "kshield/dataset.hpp"
#include "test_util.hpp"

using namespace kshield;

namespace {

// Direct-formula oracle values, computed independently:
//   entropy gap of (0.5, 0.5, 0, 0) over C=4: |ln 4 + (0.5 ln 0.5)*2| = ln 2
//   top-gap diversity of (0.6, 0.3, 0.1), M_eff=2, P=3: 0.3^3 + 0.5^3 = 0.152
constexpr double kLn2 = 0.6931471805599453;
constexpr double kLn10 = 2.302585092994046;

std::vector<float> uniform_softmax(int c) {
  return std::vector<float>(static_cast<size_t>(c), 1.0f / static_cast<float>(c));
}

std::vector<float> one_hot(int c, int idx) {
  std::vector<float> v(static_cast<size_t>(c), 0.0f);
  v[static_cast<size_t>(idx)] = 1.0f;
  return v;
}

}  // namespace

TEST(WeightUniform, Values) {
  EXPECT_EQ(weight_uniform(1), std::vector<float>{1.0f});
  EXPECT_EQ(weight_uniform(4), (std::vector<float>(4, 0.25f)));
  for (int k : {1, 2, 4, 8, 64}) {
    double sum = 0.0;
    for (float w : weight_uniform(k)) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-9);  // dyadic K: 1/K is exact in float
  }
  for (int k : {3, 7, 50, 173}) {
    double sum = 0.0;
    for (float w : weight_uniform(k)) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-6);  // float32 rounding of 1/K
  }
  EXPECT_THROW(weight_uniform(0), std::invalid_argument);
}

TEST(WeightCbwE, UniformGivesZero) {
  for (int c : {2, 4, 10, 33}) EXPECT_NEAR(weight_cbw_e(uniform_softmax(c)), 0.0f, 1e-6f);
}

TEST(WeightCbwE, OneHotGivesLogC) {
  EXPECT_NEAR(weight_cbw_e(one_hot(10, 3)), kLn10, 1e-6);
  EXPECT_NEAR(weight_cbw_e(one_hot(2, 0)), kLn2, 1e-6);
}

TEST(WeightCbwE, HalfHalfOverFourClasses) {
  EXPECT_NEAR(weight_cbw_e({0.5f, 0.5f, 0.0f, 0.0f}), kLn2, 1e-6);
}

TEST(WeightCbwE, RejectsUnnormalized) {
  EXPECT_THROW(weight_cbw_e({0.7f, 0.7f}), std::invalid_argument);
}

TEST(WeightCbwD, UniformGivesZero) {
  for (int c : {2, 4, 10}) EXPECT_NEAR(weight_cbw_d(uniform_softmax(c), 20, 3), 0.0f, 1e-7f);
}

TEST(WeightCbwD, OneHotGivesEffectiveM) {
  // Every gap is exactly 1, so the sum is min(M, C-1).
  EXPECT_FLOAT_EQ(weight_cbw_d(one_hot(4, 2), 3, 3), 3.0f);
  EXPECT_FLOAT_EQ(weight_cbw_d(one_hot(10, 0), 20, 3), 9.0f);
}

TEST(WeightCbwD, WorkedExample) {
  EXPECT_NEAR(weight_cbw_d({0.6f, 0.3f, 0.1f}, 2, 3), 0.152, 1e-6);
}

TEST(WeightCbwD, SortsBeforeGapping) {
  // Unsorted input must give the same value as its sorted version.
  EXPECT_NEAR(weight_cbw_d({0.1f, 0.6f, 0.3f}, 2, 3), 0.152, 1e-6);
}

TEST(WeightRanges, BoundsHoldOnRandomSoftmaxes) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(9));
    std::vector<float> s(static_cast<size_t>(c));
    double sum = 0.0;
    for (float& v : s) {
      v = rng.uniform(0.0f, 1.0f);
      sum += v;
    }
    for (float& v : s) v = static_cast<float>(v / sum);
    const float e = weight_cbw_e(s);
    const float d = weight_cbw_d(s, 20, 3);
    EXPECT_GE(e, 0.0f);
    EXPECT_LE(e, std::log(static_cast<float>(c)) + 1e-5f);
    EXPECT_GE(d, 0.0f);
    EXPECT_LE(d, static_cast<float>(std::min(20, c - 1)) + 1e-5f);
  }
}

TEST(CombineSoft, SymmetricPairTiesToLowestIndex) {
  SoftCombineResult res = combine_soft({{0.8f, 0.2f}, {0.2f, 0.8f}}, {0.5f, 0.5f});
  EXPECT_EQ(res.predicted, 0);
  EXPECT_NEAR(res.combined[0], 0.5f, 1e-7f);
  EXPECT_NEAR(res.combined[1], 0.5f, 1e-7f);
}

TEST(CombineSoft, SingleNeighborPassesThrough) {
  SoftCombineResult res = combine_soft({{0.1f, 0.7f, 0.2f}}, {3.5f});
  EXPECT_EQ(res.predicted, 1);
  EXPECT_NEAR(res.combined[1], 0.7f, 1e-6f);
}

TEST(CombineSoft, WeightScaleInvariance) {
  std::vector<std::vector<float>> softmaxes = {{0.6f, 0.4f}, {0.3f, 0.7f}, {0.5f, 0.5f}};
  std::vector<float> w = {0.2f, 0.5f, 0.3f};
  std::vector<float> w7 = {1.4f, 3.5f, 2.1f};
  SoftCombineResult a = combine_soft(softmaxes, w);
  SoftCombineResult b = combine_soft(softmaxes, w7);
  EXPECT_EQ(a.predicted, b.predicted);
  for (size_t i = 0; i < a.combined.size(); ++i) EXPECT_NEAR(a.combined[i], b.combined[i], 1e-6f);
}

TEST(CombineSoft, OutputIsProbabilityVector) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(5));
    const int k = 1 + static_cast<int>(rng.uniform_index(8));
    std::vector<std::vector<float>> softmaxes;
    std::vector<float> weights;
    for (int i = 0; i < k; ++i) {
      std::vector<float> s(static_cast<size_t>(c));
      double sum = 0.0;
      for (float& v : s) {
        v = rng.uniform(0.0f, 1.0f);
        sum += v;
      }
      for (float& v : s) v = static_cast<float>(v / sum);
      softmaxes.push_back(std::move(s));
      weights.push_back(rng.uniform(0.0f, 2.0f));
    }
    SoftCombineResult res = combine_soft(softmaxes, weights);
    double sum = 0.0;
    for (float v : res.combined) {
      EXPECT_GE(v, 0.0f);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(CombineSoft, AllZeroWeightsFallBackToUniform) {
  SoftCombineResult res = combine_soft({{0.9f, 0.1f}, {0.1f, 0.9f}}, {0.0f, 0.0f});
  EXPECT_NEAR(res.combined[0], 0.5f, 1e-6f);
  EXPECT_EQ(res.predicted, 0);
}

TEST(CombineHard, WeightedVotes) {
  EXPECT_EQ(combine_hard({2, 2, 7}, {0.2f, 0.2f, 0.5f}, 8), 7);
  EXPECT_EQ(combine_hard({1, 1, 3}, {1.0f, 1.0f, 1.0f}, 4), 1);
}

TEST(CombineHard, TieBreaksLowestClass) {
  EXPECT_EQ(combine_hard({4, 0}, {0.5f, 0.5f}, 5), 0);
}

TEST(DefendClassify, SelfRetrievalWithKOne) {
  // Query image present in the database with K=1 returns that image's own
  // stored prediction.
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.channels = {4, 8};
  cfg.classes = 3;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.in_c = 2;
  Checkpoint ck = init_model(cfg, 41);
  Dataset ds = generate_synthetic(3, 6, 8, 8, 19, 2);

  DefenseArtifacts artifacts;
  artifacts.pipeline.pool = default_pool_spec(cfg, 2);
  std::vector<std::vector<float>> pooled;
  for (const Tensor& img : ds.images) pooled.push_back(pooled_vector(ck, artifacts.pipeline.pool, img));
  artifacts.pipeline.pca = pca_fit(pooled, 6);
  std::vector<std::vector<float>> descriptors;
  std::vector<uint64_t> ids;
  artifacts.store = PredictionStore(cfg.classes);
  for (size_t i = 0; i < ds.size(); ++i) {
    descriptors.push_back(extract_descriptor(ck, artifacts.pipeline, ds.images[i]));
    ids.push_back(i);
    artifacts.store.put(i, predict_softmax(ck, ds.images[i]));
  }
  artifacts.index.flat = flat_build(descriptors, ids);

  DefenseConfig config;
  config.k = 1;
  for (size_t i = 0; i < ds.size(); ++i) {
    DefensePrediction pred = defend_classify(ck, ds.images[i], artifacts, config);
    ASSERT_EQ(pred.neighbors.size(), 1u);
    EXPECT_EQ(pred.neighbors[0].id, i);
    EXPECT_EQ(pred.neighbors[0].dist, 0.0f);
    EXPECT_EQ(pred.predicted, artifacts.store.hard_label(i));
  }

  // K larger than the database uses every stored neighbor.
  config.k = 1000;
  DefensePrediction pred = defend_classify(ck, ds.images[0], artifacts, config);
  EXPECT_EQ(pred.neighbors.size(), ds.size());

  // With K=1 every scheme and combination agrees.
  config.k = 1;
  int expected = -1;
  for (Weighting w : {Weighting::kUniform, Weighting::kCbwEntropy, Weighting::kCbwDiversity}) {
    for (Combination c : {Combination::kSoft, Combination::kHard}) {
      config.weighting = w;
      config.combination = c;
      DefensePrediction p = defend_classify(ck, ds.images[2], artifacts, config);
      if (expected < 0) expected = p.predicted;
      EXPECT_EQ(p.predicted, expected);
    }
  }

  // Deterministic given identical inputs.
  DefensePrediction p1 = defend_classify(ck, ds.images[3], artifacts, config);
  DefensePrediction p2 = defend_classify(ck, ds.images[3], artifacts, config);
  EXPECT_EQ(p1.predicted, p2.predicted);
  EXPECT_EQ(p1.combined, p2.combined);

  // Empty index rejected.
  DefenseArtifacts empty;
  empty.pipeline = artifacts.pipeline;
  empty.store = artifacts.store;
  EXPECT_THROW(defend_classify(ck, ds.images[0], empty, config), std::invalid_argument);

  // A store miss is a hard failure: rebuild the store without one id.
  DefenseArtifacts gappy;
  gappy.pipeline = artifacts.pipeline;
  gappy.index = artifacts.index;
  gappy.store = PredictionStore(cfg.classes);
  for (size_t i = 1; i < ds.size(); ++i) gappy.store.put(i, predict_softmax(ck, ds.images[i]));
  config.k = static_cast<int>(ds.size());
  EXPECT_THROW(defend_classify(ck, ds.images[0], gappy, config), StoreNotFoundError);
}
