#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "kshield/io.hpp"
#include "kshield/rng.hpp"

namespace kshield {

// Nearest-neighbor indices over float32 descriptors. Distances are squared
// L2 (order-equivalent to Euclidean, cheaper). All result sets are sorted by
// (distance, id) ascending: ties break toward the lower id so independent
// implementations order identically.

struct Neighbor {
  uint64_t id = 0;
  float dist = 0.0f;  // squared L2
};

using NeighborSet = std::vector<Neighbor>;

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.dist != b.dist) return a.dist < b.dist;
  return a.id < b.id;
}

struct FlatIndex {
  int dim = 0;
  std::vector<uint64_t> ids;
  std::vector<float> vectors;  // count x dim row-major

  size_t count() const { return ids.size(); }
};

inline FlatIndex flat_build(const std::vector<std::vector<float>>& vectors,
                            const std::vector<uint64_t>& ids) {
  if (vectors.size() != ids.size()) throw std::invalid_argument("flat_build: vector/id count mismatch");
  FlatIndex index;
  index.dim = vectors.empty() ? 0 : static_cast<int>(vectors[0].size());
  std::unordered_set<uint64_t> seen;
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (static_cast<int>(vectors[i].size()) != index.dim) {
      throw std::invalid_argument("flat_build: ragged vector at position " + std::to_string(i));
    }
    if (!seen.insert(ids[i]).second) {
      throw std::invalid_argument("flat_build: duplicate id " + std::to_string(ids[i]));
    }
    index.ids.push_back(ids[i]);
    index.vectors.insert(index.vectors.end(), vectors[i].begin(), vectors[i].end());
  }
  return index;
}

inline float squared_l2(const float* a, const float* b, int dim) {
  float acc = 0.0f;
  for (int i = 0; i < dim; ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline NeighborSet flat_search(const FlatIndex& index, const std::vector<float>& query, int k) {
  if (k < 1) throw std::invalid_argument("flat_search: k must be >= 1");
  if (index.count() == 0) return {};
  if (static_cast<int>(query.size()) != index.dim) {
    throw std::invalid_argument("flat_search: query dim " + std::to_string(query.size()) +
                                " does not match index dim " + std::to_string(index.dim));
  }
  NeighborSet all(index.count());
  for (size_t i = 0; i < index.count(); ++i) {
    all[i].id = index.ids[i];
    all[i].dist = squared_l2(query.data(), index.vectors.data() + i * static_cast<size_t>(index.dim), index.dim);
  }
  const size_t kk = std::min<size_t>(static_cast<size_t>(k), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end(), neighbor_less);
  all.resize(kk);
  return all;
}

struct KMeansResult {
  std::vector<float> centroids;  // k x dim
  std::vector<int> assignment;   // per input point
};

// Lloyd iterations with seeded farthest-first init. Empty clusters reseed
// from the point farthest from its assigned centroid.
inline KMeansResult kmeans(const std::vector<float>& data, size_t n, int dim, int k, int iters, Rng& rng) {
  if (n < static_cast<size_t>(k)) throw std::invalid_argument("kmeans: fewer points than clusters");
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  KMeansResult res;
  res.centroids.assign(static_cast<size_t>(k) * dim, 0.0f);
  res.assignment.assign(n, 0);

  std::vector<float> best_dist(n, std::numeric_limits<float>::max());
  size_t first = rng.uniform_index(n);
  std::copy_n(data.data() + first * static_cast<size_t>(dim), dim, res.centroids.data());
  for (int c = 1; c < k; ++c) {
    size_t far = 0;
    float far_dist = -1.0f;
    for (size_t i = 0; i < n; ++i) {
      const float d = squared_l2(data.data() + i * static_cast<size_t>(dim),
                                 res.centroids.data() + static_cast<size_t>(c - 1) * dim, dim);
      if (d < best_dist[i]) best_dist[i] = d;
      if (best_dist[i] > far_dist) {
        far_dist = best_dist[i];
        far = i;
      }
    }
    std::copy_n(data.data() + far * static_cast<size_t>(dim), dim,
                res.centroids.data() + static_cast<size_t>(c) * dim);
  }

  std::vector<double> sums(static_cast<size_t>(k) * dim);
  std::vector<size_t> counts(static_cast<size_t>(k));
  std::vector<float> point_dist(n);
  for (int it = 0; it < iters; ++it) {
    for (size_t i = 0; i < n; ++i) {
      const float* p = data.data() + i * static_cast<size_t>(dim);
      int best = 0;
      float bd = squared_l2(p, res.centroids.data(), dim);
      for (int c = 1; c < k; ++c) {
        const float d = squared_l2(p, res.centroids.data() + static_cast<size_t>(c) * dim, dim);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      res.assignment[i] = best;
      point_dist[i] = bd;
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      const float* p = data.data() + i * static_cast<size_t>(dim);
      double* s = sums.data() + static_cast<size_t>(res.assignment[i]) * dim;
      for (int d = 0; d < dim; ++d) s[d] += p[d];
      ++counts[static_cast<size_t>(res.assignment[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) {
        size_t far = 0;
        float far_dist = -1.0f;
        for (size_t i = 0; i < n; ++i) {
          if (point_dist[i] > far_dist) {
            far_dist = point_dist[i];
            far = i;
          }
        }
        std::copy_n(data.data() + far * static_cast<size_t>(dim), dim,
                    res.centroids.data() + static_cast<size_t>(c) * dim);
        res.assignment[far] = c;
        point_dist[far] = 0.0f;
        continue;
      }
      const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
      for (int d = 0; d < dim; ++d) {
        res.centroids[static_cast<size_t>(c) * dim + d] =
            static_cast<float>(sums[static_cast<size_t>(c) * dim + d] * inv);
      }
    }
  }
  return res;
}

inline constexpr int kKMeansIters = 25;

// Inverted-file index with product-quantized residuals and asymmetric
// distance computation at query time.
struct IvfPqIndex {
  int dim = 0;
  int nlist = 0;
  int m = 0;     // subquantizer count; dim % m == 0
  int bits = 0;  // log2 codewords per subquantizer
  std::vector<float> centroids;  // nlist x dim
  std::vector<float> codebooks;  // m x ksub x dsub
  struct InvertedList {
    std::vector<uint64_t> ids;
    std::vector<uint8_t> codes;  // entry-major, m bytes per entry
  };
  std::vector<InvertedList> lists;

  int ksub() const { return 1 << bits; }
  int dsub() const { return dim / m; }
  size_t count() const {
    size_t n = 0;
    for (const auto& l : lists) n += l.ids.size();
    return n;
  }
};

inline IvfPqIndex ivfpq_train(const std::vector<std::vector<float>>& samples, int dim, int nlist, int m,
                              int bits, uint64_t seed) {
  if (nlist < 1 || m < 1 || bits < 1 || bits > 8) throw std::invalid_argument("ivfpq_train: bad parameters");
  if (dim % m != 0) {
    throw std::invalid_argument("ivfpq_train: dim " + std::to_string(dim) + " not divisible by m " +
                                std::to_string(m));
  }
  const int ksub = 1 << bits;
  if (samples.size() < static_cast<size_t>(nlist)) {
    throw std::invalid_argument("ivfpq_train: need at least nlist samples, got " +
                                std::to_string(samples.size()));
  }
  const size_t n = samples.size();
  std::vector<float> flat(n * static_cast<size_t>(dim));
  for (size_t i = 0; i < n; ++i) {
    if (static_cast<int>(samples[i].size()) != dim) throw std::invalid_argument("ivfpq_train: ragged samples");
    std::copy(samples[i].begin(), samples[i].end(), flat.begin() + i * static_cast<size_t>(dim));
  }

  IvfPqIndex index;
  index.dim = dim;
  index.nlist = nlist;
  index.m = m;
  index.bits = bits;
  index.lists.resize(static_cast<size_t>(nlist));

  Rng coarse_rng(mix_seed(seed, 0xc0a5));
  KMeansResult coarse = kmeans(flat, n, dim, nlist, kKMeansIters, coarse_rng);
  index.centroids = std::move(coarse.centroids);

  // Residuals relative to the assigned coarse centroid.
  std::vector<float> residuals(n * static_cast<size_t>(dim));
  for (size_t i = 0; i < n; ++i) {
    const float* p = flat.data() + i * static_cast<size_t>(dim);
    const float* c = index.centroids.data() + static_cast<size_t>(coarse.assignment[i]) * dim;
    float* r = residuals.data() + i * static_cast<size_t>(dim);
    for (int d = 0; d < dim; ++d) r[d] = p[d] - c[d];
  }

  // With fewer samples than codewords (the degenerate-exactness regime),
  // train only as many codewords as there are samples and fill the unused
  // slots with copies of the first codeword; ties resolve to the lower code
  // at encode time, so the duplicates are never selected.
  const int dsub = dim / m;
  const int ksub_eff = static_cast<int>(std::min<size_t>(static_cast<size_t>(ksub), n));
  index.codebooks.assign(static_cast<size_t>(m) * ksub * dsub, 0.0f);
  std::vector<float> sub(n * static_cast<size_t>(dsub));
  for (int j = 0; j < m; ++j) {
    for (size_t i = 0; i < n; ++i) {
      std::copy_n(residuals.data() + i * static_cast<size_t>(dim) + static_cast<size_t>(j) * dsub, dsub,
                  sub.data() + i * static_cast<size_t>(dsub));
    }
    Rng sub_rng(mix_seed(seed, 0x5b00 + static_cast<uint64_t>(j)));
    KMeansResult book = kmeans(sub, n, dsub, ksub_eff, kKMeansIters, sub_rng);
    float* dst = index.codebooks.data() + static_cast<size_t>(j) * ksub * dsub;
    std::copy(book.centroids.begin(), book.centroids.end(), dst);
    for (int kk = ksub_eff; kk < ksub; ++kk) {
      std::copy_n(dst, dsub, dst + static_cast<size_t>(kk) * dsub);
    }
  }
  return index;
}

inline int nearest_centroid(const IvfPqIndex& index, const float* v) {
  int best = 0;
  float bd = squared_l2(v, index.centroids.data(), index.dim);
  for (int c = 1; c < index.nlist; ++c) {
    const float d = squared_l2(v, index.centroids.data() + static_cast<size_t>(c) * index.dim, index.dim);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

inline void ivfpq_add(IvfPqIndex& index, const std::vector<std::vector<float>>& vectors,
                      const std::vector<uint64_t>& ids) {
  if (vectors.size() != ids.size()) throw std::invalid_argument("ivfpq_add: vector/id count mismatch");
  std::unordered_set<uint64_t> seen;
  for (const auto& l : index.lists) {
    for (uint64_t id : l.ids) seen.insert(id);
  }
  const int dsub = index.dsub(), ksub = index.ksub();
  std::vector<float> residual(static_cast<size_t>(index.dim));
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (static_cast<int>(vectors[i].size()) != index.dim) {
      throw std::invalid_argument("ivfpq_add: vector dim mismatch at position " + std::to_string(i));
    }
    if (!seen.insert(ids[i]).second) {
      throw std::invalid_argument("ivfpq_add: duplicate id " + std::to_string(ids[i]));
    }
    const float* v = vectors[i].data();
    const int list = nearest_centroid(index, v);
    const float* c = index.centroids.data() + static_cast<size_t>(list) * index.dim;
    for (int d = 0; d < index.dim; ++d) residual[static_cast<size_t>(d)] = v[d] - c[d];
    auto& il = index.lists[static_cast<size_t>(list)];
    il.ids.push_back(ids[i]);
    for (int j = 0; j < index.m; ++j) {
      const float* r = residual.data() + static_cast<size_t>(j) * dsub;
      const float* book = index.codebooks.data() + static_cast<size_t>(j) * ksub * dsub;
      int best = 0;
      float bd = squared_l2(r, book, dsub);
      for (int kk = 1; kk < ksub; ++kk) {
        const float d = squared_l2(r, book + static_cast<size_t>(kk) * dsub, dsub);
        if (d < bd) {
          bd = d;
          best = kk;
        }
      }
      il.codes.push_back(static_cast<uint8_t>(best));
    }
  }
}

// ADC search: per probed list, build the m x ksub lookup table of squared
// distances between query sub-vectors and (centroid + codeword), then sum
// table entries per stored code.
inline NeighborSet ivfpq_search(const IvfPqIndex& index, const std::vector<float>& query, int k,
                                int nprobe) {
  if (k < 1) throw std::invalid_argument("ivfpq_search: k must be >= 1");
  if (nprobe < 1 || nprobe > index.nlist) {
    throw std::invalid_argument("ivfpq_search: nprobe " + std::to_string(nprobe) + " out of range [1, " +
                                std::to_string(index.nlist) + "]");
  }
  if (index.count() == 0) return {};
  if (static_cast<int>(query.size()) != index.dim) {
    throw std::invalid_argument("ivfpq_search: query dim mismatch");
  }

  std::vector<Neighbor> probes(static_cast<size_t>(index.nlist));
  for (int c = 0; c < index.nlist; ++c) {
    probes[static_cast<size_t>(c)].id = static_cast<uint64_t>(c);
    probes[static_cast<size_t>(c)].dist =
        squared_l2(query.data(), index.centroids.data() + static_cast<size_t>(c) * index.dim, index.dim);
  }
  std::partial_sort(probes.begin(), probes.begin() + nprobe, probes.end(), neighbor_less);

  const int dsub = index.dsub(), ksub = index.ksub();
  std::vector<float> table(static_cast<size_t>(index.m) * ksub);
  NeighborSet all;
  for (int p = 0; p < nprobe; ++p) {
    const int list = static_cast<int>(probes[static_cast<size_t>(p)].id);
    const auto& il = index.lists[static_cast<size_t>(list)];
    if (il.ids.empty()) continue;
    const float* c = index.centroids.data() + static_cast<size_t>(list) * index.dim;
    for (int j = 0; j < index.m; ++j) {
      const float* q = query.data() + static_cast<size_t>(j) * dsub;
      const float* csub = c + static_cast<size_t>(j) * dsub;
      const float* book = index.codebooks.data() + static_cast<size_t>(j) * ksub * dsub;
      for (int kk = 0; kk < ksub; ++kk) {
        const float* code = book + static_cast<size_t>(kk) * dsub;
        float acc = 0.0f;
        for (int d = 0; d < dsub; ++d) {
          const float diff = q[d] - (csub[d] + code[d]);
          acc += diff * diff;
        }
        table[static_cast<size_t>(j) * ksub + kk] = acc;
      }
    }
    for (size_t e = 0; e < il.ids.size(); ++e) {
      const uint8_t* code = il.codes.data() + e * static_cast<size_t>(index.m);
      float acc = 0.0f;
      for (int j = 0; j < index.m; ++j) acc += table[static_cast<size_t>(j) * ksub + code[j]];
      all.push_back({il.ids[e], acc});
    }
  }
  const size_t kk2 = std::min<size_t>(static_cast<size_t>(k), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk2), all.end(), neighbor_less);
  all.resize(kk2);
  return all;
}

// Either index kind behind one search surface, plus the nprobe operating
// point for the approximate path.
struct IndexHandle {
  enum class Kind : uint8_t { kFlat = 0, kIvfPq = 1 };
  Kind kind = Kind::kFlat;
  FlatIndex flat;
  IvfPqIndex ivfpq;
  int nprobe = 16;

  size_t count() const { return kind == Kind::kFlat ? flat.count() : ivfpq.count(); }
  int dim() const { return kind == Kind::kFlat ? flat.dim : ivfpq.dim; }

  NeighborSet search(const std::vector<float>& query, int k) const {
    if (kind == Kind::kFlat) return flat_search(flat, query, k);
    return ivfpq_search(ivfpq, query, k, std::min(nprobe, ivfpq.nlist));
  }
};

inline constexpr const char* kIndexMagic = "KSIDX001";

inline void index_save(const IndexHandle& handle, const std::string& path) {
  BinaryWriter w(path);
  w.magic(kIndexMagic);
  w.u8(static_cast<uint8_t>(handle.kind));
  w.u32(static_cast<uint32_t>(handle.dim()));
  w.u64(handle.count());
  if (handle.kind == IndexHandle::Kind::kFlat) {
    w.u64_array(handle.flat.ids.data(), handle.flat.ids.size());
    w.f32_array(handle.flat.vectors.data(), handle.flat.vectors.size());
  } else {
    const IvfPqIndex& ix = handle.ivfpq;
    w.u32(static_cast<uint32_t>(ix.nlist));
    w.u8(static_cast<uint8_t>(ix.m));
    w.u8(static_cast<uint8_t>(ix.bits));
    w.f32_array(ix.centroids.data(), ix.centroids.size());
    w.f32_array(ix.codebooks.data(), ix.codebooks.size());
    for (const auto& l : ix.lists) {
      w.u32(static_cast<uint32_t>(l.ids.size()));
      w.u64_array(l.ids.data(), l.ids.size());
      w.bytes(l.codes.data(), l.codes.size());
    }
  }
  w.close();
}

inline IndexHandle index_load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kIndexMagic);
  IndexHandle handle;
  const uint8_t kind = r.u8();
  if (kind > 1) throw std::runtime_error(path + ": unknown index type " + std::to_string(kind));
  handle.kind = static_cast<IndexHandle::Kind>(kind);
  const int dim = static_cast<int>(r.u32());
  const uint64_t count = r.u64();
  if (handle.kind == IndexHandle::Kind::kFlat) {
    handle.flat.dim = dim;
    handle.flat.ids.resize(count);
    handle.flat.vectors.resize(count * static_cast<size_t>(dim));
    r.u64_array(handle.flat.ids.data(), handle.flat.ids.size());
    r.f32_array(handle.flat.vectors.data(), handle.flat.vectors.size());
  } else {
    IvfPqIndex& ix = handle.ivfpq;
    ix.dim = dim;
    ix.nlist = static_cast<int>(r.u32());
    ix.m = r.u8();
    ix.bits = r.u8();
    if (ix.nlist < 1 || ix.m < 1 || ix.dim % ix.m != 0 || ix.bits < 1 || ix.bits > 8) {
      throw std::runtime_error(path + ": inconsistent ivfpq header");
    }
    ix.centroids.resize(static_cast<size_t>(ix.nlist) * dim);
    ix.codebooks.resize(static_cast<size_t>(ix.m) * ix.ksub() * ix.dsub());
    r.f32_array(ix.centroids.data(), ix.centroids.size());
    r.f32_array(ix.codebooks.data(), ix.codebooks.size());
    ix.lists.resize(static_cast<size_t>(ix.nlist));
    uint64_t total = 0;
    for (auto& l : ix.lists) {
      const uint32_t len = r.u32();
      l.ids.resize(len);
      l.codes.resize(static_cast<size_t>(len) * ix.m);
      r.u64_array(l.ids.data(), l.ids.size());
      r.bytes(l.codes.data(), l.codes.size());
      total += len;
    }
    if (total != count) throw std::runtime_error(path + ": list totals do not match header count");
  }
  return handle;
}

}  // namespace kshield
