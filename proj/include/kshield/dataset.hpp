#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/io.hpp"
#include "kshield/rng.hpp"
#include "kshield/tensor.hpp"

namespace kshield {

// Image sets: task splits carry labels < classes; distractor images carry
// out-of-task labels >= classes.
struct Dataset {
  int classes = 0;  // task class count
  int h = 0, w = 0, channels = 0;
  std::vector<Tensor> images;  // CHW, pixels in [0, 1]
  std::vector<int> labels;
  std::string split;

  size_t size() const { return images.size(); }

  void validate_task_labels() const {
    for (int y : labels) {
      if (y < 0 || y >= classes) {
        throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range for " +
                                    std::to_string(classes) + " task classes");
      }
    }
  }
};

enum class DatasetFormat : uint8_t { kCifar10Binary, kContainer };

inline DatasetFormat parse_dataset_format(const std::string& s) {
  if (s == "cifar10-binary" || s == "cifar10") return DatasetFormat::kCifar10Binary;
  if (s == "kshield-container" || s == "container") return DatasetFormat::kContainer;
  throw std::invalid_argument("unknown dataset format '" + s + "'");
}

// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes (32x32, three
// channel planes). Bytes scale to [0, 1] as v / 255.
inline Dataset load_cifar10_binary(const std::string& path) {
  constexpr size_t kRecord = 3073;
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat " + path);
  if (file_size % kRecord != 0) {
    throw std::runtime_error(path + ": malformed record at byte offset " +
                             std::to_string(file_size - (file_size % kRecord)));
  }
  BinaryReader r(path);
  Dataset ds;
  ds.classes = 10;
  ds.h = 32;
  ds.w = 32;
  ds.channels = 3;
  ds.split = "train";
  const size_t count = file_size / kRecord;
  std::vector<uint8_t> pixels(3072);
  for (size_t i = 0; i < count; ++i) {
    const uint8_t label = r.u8();
    if (label > 9) throw std::runtime_error(path + ": label byte > 9 at record " + std::to_string(i));
    r.bytes(pixels.data(), pixels.size());
    Tensor img = Tensor::zeros({3, 32, 32});
    for (size_t p = 0; p < 3072; ++p) img[p] = static_cast<float>(pixels[p]) / 255.0f;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

inline constexpr const char* kDatasetMagic = "KSDATA01";

inline void save_container(const Dataset& ds, const std::string& path) {
  BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.u64(ds.size());
  w.u32(static_cast<uint32_t>(ds.classes));
  w.u32(static_cast<uint32_t>(ds.h));
  w.u32(static_cast<uint32_t>(ds.w));
  w.u8(static_cast<uint8_t>(ds.channels));
  for (size_t i = 0; i < ds.size(); ++i) {
    w.u32(static_cast<uint32_t>(ds.labels[i]));
    w.f32_array(ds.images[i].data.data(), ds.images[i].numel());
  }
  w.close();
}

inline Dataset load_container(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic);
  Dataset ds;
  const uint64_t count = r.u64();
  ds.classes = static_cast<int>(r.u32());
  ds.h = static_cast<int>(r.u32());
  ds.w = static_cast<int>(r.u32());
  ds.channels = static_cast<int>(r.u8());
  if (ds.h < 1 || ds.w < 1 || ds.channels < 1) throw std::runtime_error(path + ": bad image extents");
  const size_t numel = static_cast<size_t>(ds.h) * ds.w * ds.channels;
  for (uint64_t i = 0; i < count; ++i) {
    ds.labels.push_back(static_cast<int>(r.u32()));
    Tensor img = Tensor::zeros({ds.channels, ds.h, ds.w});
    r.f32_array(img.data.data(), numel);
    ds.images.push_back(std::move(img));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, DatasetFormat format) {
  return format == DatasetFormat::kCifar10Binary ? load_cifar10_binary(path) : load_container(path);
}

namespace detail {

// Per-class pattern parameters. Orientation and frequency are the local
// texture cues; the quadrant amplitude layout is a global cue that only
// larger receptive fields integrate.
struct ClassPattern {
  float theta;
  float freq;
  int quad_bits;  // quadrants with full amplitude
};

inline ClassPattern class_pattern(int c, int classes) {
  static constexpr int kQuadPatterns[8] = {0b0011, 0b0101, 0b1010, 0b1100, 0b0110, 0b1001, 0b0001, 0b0111};
  ClassPattern p;
  p.theta = 3.14159265358979323846f * static_cast<float>(c) / static_cast<float>(classes);
  p.freq = 2.0f + static_cast<float>(c % 3);
  p.quad_bits = kQuadPatterns[c % 8];
  return p;
}

}  // namespace detail

// Class-conditional oriented gratings with a per-class quadrant amplitude
// layout, plus phase jitter, amplitude jitter, and pixel noise. Three image
// kinds per class mirror a web-crawled corpus: clearly patterned images, a
// boundary band of two-class mixtures still labeled by the dominant pattern,
// and a patternless pure-noise tail the model cannot fit. The band populates
// feature space between clusters; the tail supplies spurious neighbors with
// uncertain stored predictions.
inline Dataset generate_synthetic(int classes, int per_class, int h, int w, uint64_t seed,
                                  int channels = 3, float hard_fraction = 0.12f,
                                  float band_fraction = 0.25f) {
  if (classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
  if (per_class < 0) throw std::invalid_argument("generate_synthetic: per_class must be >= 0");
  if (h < 2 || w < 2 || channels < 1) throw std::invalid_argument("generate_synthetic: bad extents");
  Dataset ds;
  ds.classes = classes;
  ds.h = h;
  ds.w = w;
  ds.channels = channels;
  ds.split = "train";
  const float scale = static_cast<float>(std::max(h, w));
  size_t index = 0;
  for (int c = 0; c < classes; ++c) {
    const detail::ClassPattern pat = detail::class_pattern(c, classes);
    for (int i = 0; i < per_class; ++i, ++index) {
      Rng rng(mix_seed(seed, index));
      const float phase = rng.uniform(-0.9f, 0.9f);
      const float kind = rng.uniform();
      const bool hard = kind < hard_fraction;
      const bool band = !hard && kind < hard_fraction + band_fraction;
      const float amp = hard ? 0.0f : rng.uniform(0.75f, 1.25f);
      const float brightness = rng.uniform(-0.05f, 0.05f);
      // Mixture partner for band images; weight stays below 0.5 so the
      // dominant-class label is right.
      const int partner = (c + 1 + static_cast<int>(rng.uniform_index(static_cast<size_t>(classes - 1)))) % classes;
      const float mix = band ? rng.uniform(0.2f, 0.42f) : 0.0f;
      const detail::ClassPattern pat2 = detail::class_pattern(partner, classes);
      const float ct = std::cos(pat.theta), st = std::sin(pat.theta);
      const float ct2 = std::cos(pat2.theta), st2 = std::sin(pat2.theta);
      Tensor img = Tensor::zeros({channels, h, w});
      for (int ch = 0; ch < channels; ++ch) {
        const float chphase = phase + 0.6f * static_cast<float>(ch);
        float* plane = img.data.data() + static_cast<size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const int quad = (y * 2 >= h ? 2 : 0) + (x * 2 >= w ? 1 : 0);
            const float u = ct * static_cast<float>(x) + st * static_cast<float>(y);
            const float qa = (pat.quad_bits >> quad) & 1 ? 1.0f : 0.35f;
            float tex = (1.0f - mix) * qa * std::sin(6.2831853f * pat.freq * u / scale + chphase);
            if (band) {
              const float u2 = ct2 * static_cast<float>(x) + st2 * static_cast<float>(y);
              const float qa2 = (pat2.quad_bits >> quad) & 1 ? 1.0f : 0.35f;
              tex += mix * qa2 * std::sin(6.2831853f * pat2.freq * u2 / scale + chphase);
            }
            float v = 0.5f + brightness + 0.10f * amp * tex + 0.032f * rng.normal();
            plane[static_cast<size_t>(y) * w + x] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
          }
        }
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// Disjoint pattern family (radial rings) with out-of-task labels, emulating
// untargeted database images.
inline Dataset generate_distractors(int task_classes, int count, int h, int w, uint64_t seed,
                                    int channels = 3) {
  if (count < 0) throw std::invalid_argument("generate_distractors: count must be >= 0");
  Dataset ds;
  ds.classes = task_classes;
  ds.h = h;
  ds.w = w;
  ds.channels = channels;
  ds.split = "distractor";
  const float cx = static_cast<float>(w - 1) / 2.0f;
  const float cy = static_cast<float>(h - 1) / 2.0f;
  const float scale = static_cast<float>(std::max(h, w));
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed ^ 0xd157, static_cast<uint64_t>(i)));
    const float freq = 2.0f + static_cast<float>(i % 3);
    const float phase = rng.uniform(0.0f, 6.2831853f);
    Tensor img = Tensor::zeros({channels, h, w});
    for (int ch = 0; ch < channels; ++ch) {
      float* plane = img.data.data() + static_cast<size_t>(ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float dx = static_cast<float>(x) - cx;
          const float dy = static_cast<float>(y) - cy;
          const float r = std::sqrt(dx * dx + dy * dy);
          float v = 0.5f + 0.22f * std::sin(6.2831853f * freq * r / scale + phase + 0.5f * ch) +
                    0.06f * rng.normal();
          plane[static_cast<size_t>(y) * w + x] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(task_classes + (i % 4));
  }
  return ds;
}

}  // namespace kshield
