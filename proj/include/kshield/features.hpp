#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/io.hpp"
#include "kshield/linalg.hpp"
#include "kshield/model.hpp"
#include "kshield/tensor.hpp"

namespace kshield {

// Descriptor construction: tapped activation map -> spatial average pooling
// -> flatten -> PCA projection. The same path runs at database build time and
// query time, so stored vectors and query descriptors match bit-exactly.

using FeatureVector = std::vector<float>;

struct PoolSpec {
  int layer = 0;  // 1-based block id the map comes from
  int target_h = 1;
  int target_w = 1;
};

// Deeper taps pool to coarser targets, down to 1x1 at the deepest block.
// Suggested target is min(4, 2^(blocks-layer)), reduced to the largest
// divisor of the tap extent when it does not divide evenly.
inline PoolSpec default_pool_spec(const ModelConfig& cfg, int layer) {
  Shape tap = cfg.tap_shape(layer);
  auto pick = [](int extent, int suggestion) {
    int t = std::min(extent, suggestion);
    while (t > 1 && extent % t != 0) --t;
    return t;
  };
  const int depth_from_deepest = cfg.blocks - layer;
  const int suggestion = depth_from_deepest >= 2 ? 4 : (1 << depth_from_deepest);
  return PoolSpec{layer, pick(tap[1], suggestion), pick(tap[2], suggestion)};
}

inline Tensor spatial_pool(const Tensor& map, const PoolSpec& spec) {
  if (map.rank() != 3) {
    throw std::invalid_argument("spatial_pool: expected CxHxW map, got " + shape_str(map.shape));
  }
  const int c = map.shape[0], h = map.shape[1], w = map.shape[2];
  if (spec.target_h < 1 || spec.target_w < 1) throw std::invalid_argument("spatial_pool: bad target");
  if (h % spec.target_h != 0 || w % spec.target_w != 0) {
    throw std::invalid_argument("spatial_pool: target " + std::to_string(spec.target_h) + "x" +
                                std::to_string(spec.target_w) + " does not divide map " + shape_str(map.shape));
  }
  const int ch = h / spec.target_h, cw = w / spec.target_w;
  Tensor out = Tensor::zeros({c, spec.target_h, spec.target_w});
  const float inv = 1.0f / static_cast<float>(ch * cw);
  for (int ic = 0; ic < c; ++ic) {
    const float* src = map.data.data() + static_cast<size_t>(ic) * h * w;
    float* dst = out.data.data() + static_cast<size_t>(ic) * spec.target_h * spec.target_w;
    for (int ty = 0; ty < spec.target_h; ++ty) {
      for (int tx = 0; tx < spec.target_w; ++tx) {
        float acc = 0.0f;
        for (int y = 0; y < ch; ++y) {
          const float* row = src + static_cast<size_t>(ty * ch + y) * w + tx * cw;
          for (int x = 0; x < cw; ++x) acc += row[x];
        }
        dst[static_cast<size_t>(ty) * spec.target_w + tx] = acc * inv;
      }
    }
  }
  return out;
}

struct PCAModel {
  int d_in = 0;
  int d_out = 0;
  std::vector<float> mean;        // d_in
  std::vector<float> components;  // d_out x d_in row-major, orthonormal rows
  std::vector<float> variances;   // d_out, non-increasing
};

// Exact covariance eigendecomposition. Sign convention: the first nonzero
// coefficient of every component is positive, so fitted models serialize
// identically across runs.
inline PCAModel pca_fit(const std::vector<std::vector<float>>& samples, int d_out) {
  if (samples.empty()) throw std::invalid_argument("pca_fit: no samples");
  const int d_in = static_cast<int>(samples[0].size());
  if (d_out < 1 || d_out > d_in) {
    throw std::invalid_argument("pca_fit: d_out " + std::to_string(d_out) + " out of range for d_in " +
                                std::to_string(d_in));
  }
  if (static_cast<int>(samples.size()) < d_out) {
    throw std::invalid_argument("pca_fit: need at least d_out samples, got " +
                                std::to_string(samples.size()));
  }
  const size_t n = samples.size();
  std::vector<double> mean(static_cast<size_t>(d_in), 0.0);
  for (const auto& s : samples) {
    if (static_cast<int>(s.size()) != d_in) throw std::invalid_argument("pca_fit: ragged samples");
    for (int i = 0; i < d_in; ++i) mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(static_cast<size_t>(d_in) * d_in, 0.0);
  std::vector<double> centered(static_cast<size_t>(d_in));
  for (const auto& s : samples) {
    for (int i = 0; i < d_in; ++i) centered[static_cast<size_t>(i)] = s[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
    for (int i = 0; i < d_in; ++i) {
      const double ci = centered[static_cast<size_t>(i)];
      if (ci == 0.0) continue;
      double* row = cov.data() + static_cast<size_t>(i) * d_in;
      for (int j = i; j < d_in; ++j) row[j] += ci * centered[static_cast<size_t>(j)];
    }
  }
  const double norm = 1.0 / static_cast<double>(std::max<size_t>(1, n - 1));
  for (int i = 0; i < d_in; ++i) {
    for (int j = i; j < d_in; ++j) {
      const double v = cov[static_cast<size_t>(i) * d_in + j] * norm;
      cov[static_cast<size_t>(i) * d_in + j] = v;
      cov[static_cast<size_t>(j) * d_in + i] = v;
    }
  }

  SymEigen eig = jacobi_eigen_symmetric(std::move(cov), d_in);

  PCAModel model;
  model.d_in = d_in;
  model.d_out = d_out;
  model.mean.resize(static_cast<size_t>(d_in));
  for (int i = 0; i < d_in; ++i) model.mean[static_cast<size_t>(i)] = static_cast<float>(mean[static_cast<size_t>(i)]);
  model.components.resize(static_cast<size_t>(d_out) * d_in);
  model.variances.resize(static_cast<size_t>(d_out));
  for (int k = 0; k < d_out; ++k) {
    double* row = eig.vectors.data() + static_cast<size_t>(k) * d_in;
    double flip = 1.0;
    for (int i = 0; i < d_in; ++i) {
      if (std::abs(row[i]) > 1e-12) {
        flip = row[i] < 0.0 ? -1.0 : 1.0;
        break;
      }
    }
    for (int i = 0; i < d_in; ++i) {
      model.components[static_cast<size_t>(k) * d_in + i] = static_cast<float>(flip * row[i]);
    }
    model.variances[static_cast<size_t>(k)] = static_cast<float>(std::max(0.0, eig.values[static_cast<size_t>(k)]));
  }
  return model;
}

inline FeatureVector pca_transform(const PCAModel& model, const std::vector<float>& v) {
  if (static_cast<int>(v.size()) != model.d_in) {
    throw std::invalid_argument("pca_transform: input length " + std::to_string(v.size()) +
                                " does not match d_in " + std::to_string(model.d_in));
  }
  FeatureVector out(static_cast<size_t>(model.d_out));
  for (int k = 0; k < model.d_out; ++k) {
    const float* row = model.components.data() + static_cast<size_t>(k) * model.d_in;
    double acc = 0.0;
    for (int i = 0; i < model.d_in; ++i) {
      acc += static_cast<double>(row[i]) * (v[static_cast<size_t>(i)] - model.mean[static_cast<size_t>(i)]);
    }
    out[static_cast<size_t>(k)] = static_cast<float>(acc);
  }
  return out;
}

struct FeaturePipeline {
  PoolSpec pool;
  PCAModel pca;
};

inline std::vector<float> flatten_map(const Tensor& map) { return map.data; }

inline FeatureVector extract_descriptor(const Checkpoint& ck, const FeaturePipeline& pipe,
                                        const Tensor& image) {
  Tensor tap;
  try {
    tap = feature_tap(ck, image, pipe.pool.layer);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("feature tap: ") + e.what());
  }
  Tensor pooled;
  try {
    pooled = spatial_pool(tap, pipe.pool);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("spatial pool: ") + e.what());
  }
  try {
    return pca_transform(pipe.pca, flatten_map(pooled));
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("pca transform: ") + e.what());
  }
}

// Pooled (pre-PCA) flat vector, the PCA training representation.
inline std::vector<float> pooled_vector(const Checkpoint& ck, const PoolSpec& pool, const Tensor& image) {
  return flatten_map(spatial_pool(feature_tap(ck, image, pool.layer), pool));
}

inline constexpr const char* kPcaMagic = "KSPCA001";

inline void save_pca(const PCAModel& m, const std::string& path) {
  BinaryWriter w(path);
  w.magic(kPcaMagic);
  w.u32(static_cast<uint32_t>(m.d_in));
  w.u32(static_cast<uint32_t>(m.d_out));
  w.f32_array(m.mean.data(), m.mean.size());
  w.f32_array(m.components.data(), m.components.size());
  w.f32_array(m.variances.data(), m.variances.size());
  w.close();
}

inline PCAModel load_pca(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kPcaMagic);
  PCAModel m;
  m.d_in = static_cast<int>(r.u32());
  m.d_out = static_cast<int>(r.u32());
  if (m.d_in < 1 || m.d_out < 1 || m.d_out > m.d_in) {
    throw std::runtime_error(path + ": inconsistent PCA dimensions");
  }
  m.mean.resize(static_cast<size_t>(m.d_in));
  m.components.resize(static_cast<size_t>(m.d_out) * m.d_in);
  m.variances.resize(static_cast<size_t>(m.d_out));
  r.f32_array(m.mean.data(), m.mean.size());
  r.f32_array(m.components.data(), m.components.size());
  r.f32_array(m.variances.data(), m.variances.size());
  return m;
}

}  // namespace kshield
