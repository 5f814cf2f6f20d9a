#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kshield/autodiff.hpp"
#include "kshield/io.hpp"
#include "kshield/rng.hpp"
#include "kshield/tensor.hpp"

namespace kshield {

// Small trainable CNN: `blocks` stages of conv3x3 (stride 1, pad 1) with a
// pre-ReLU activation tap, then ReLU and 2x2 average pooling, followed by a
// global average pool and a single linear head. The per-block taps are the
// retrieval feature sources; block `blocks` is the deepest.

struct ModelConfig {
  int blocks = 4;
  std::vector<int> channels = {16, 32, 64, 128};
  int classes = 10;
  int in_h = 32;
  int in_w = 32;
  int in_c = 3;

  void validate() const {
    if (blocks < 2) throw std::invalid_argument("model config: need at least 2 blocks");
    if (static_cast<int>(channels.size()) != blocks) {
      throw std::invalid_argument("model config: channels list must have one entry per block");
    }
    for (int c : channels) {
      if (c < 1) throw std::invalid_argument("model config: channels must be positive");
    }
    if (classes < 2) throw std::invalid_argument("model config: need at least 2 classes");
    if (in_h < 1 || in_w < 1 || in_c < 1) throw std::invalid_argument("model config: bad input extents");
    const int div = 1 << blocks;
    if (in_h % div != 0 || in_w % div != 0) {
      throw std::invalid_argument("model config: input extents must be divisible by 2^blocks");
    }
  }

  bool operator==(const ModelConfig& o) const = default;

  // Pre-ReLU activation map shape for a 1-based block id.
  Shape tap_shape(int layer) const {
    if (layer < 1 || layer > blocks) {
      throw std::invalid_argument("invalid layer id " + std::to_string(layer) + ", model has " +
                                  std::to_string(blocks) + " blocks");
    }
    return Shape{channels[static_cast<size_t>(layer - 1)], in_h >> (layer - 1), in_w >> (layer - 1)};
  }
};

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> params;  // sorted by name: deterministic iteration
  uint64_t seed = 0;
  int epochs = 0;
};

namespace detail {

inline std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  int prev = cfg.in_c;
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string base = "block" + std::to_string(b + 1);
    out.emplace_back(base + ".weight", Shape{cfg.channels[static_cast<size_t>(b)], prev, 3, 3});
    out.emplace_back(base + ".bias", Shape{cfg.channels[static_cast<size_t>(b)]});
    prev = cfg.channels[static_cast<size_t>(b)];
  }
  out.emplace_back("head.weight", Shape{cfg.classes, prev});
  out.emplace_back("head.bias", Shape{cfg.classes});
  return out;
}

}  // namespace detail

// Fan-in-scaled uniform init (ReLU gain), biases zero. Draw order follows
// param_layout.
inline Checkpoint init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  ck.seed = seed;
  Rng rng(seed);
  for (const auto& [name, shape] : detail::param_layout(cfg)) {
    Tensor t = Tensor::zeros(shape);
    if (name.ends_with(".weight")) {
      size_t fan_in = 1;
      for (size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<size_t>(shape[i]);
      const float a = std::sqrt(6.0f / static_cast<float>(fan_in));
      for (float& v : t.data) v = rng.uniform(-a, a);
    }
    ck.params.emplace(name, std::move(t));
  }
  // Pixels average ~0.5, not 0; without centering, each first-layer filter
  // starts with a large random DC offset and whole channels die at the ReLU.
  // Center the first conv bias against that mean at init time.
  Tensor& w1 = ck.params.at("block1.weight");
  Tensor& b1 = ck.params.at("block1.bias");
  const size_t per_filter = w1.numel() / static_cast<size_t>(w1.shape[0]);
  for (int oc = 0; oc < w1.shape[0]; ++oc) {
    double s = 0.0;
    for (size_t i = 0; i < per_filter; ++i) s += w1.data[static_cast<size_t>(oc) * per_filter + i];
    b1[static_cast<size_t>(oc)] = static_cast<float>(-0.5 * s);
  }
  return ck;
}

// One forward evaluation of the network on a single CHW image. Holds the tape
// so callers can read tap values, run backward, and fetch gradients.
struct ForwardGraph {
  Tape tape;
  int image = -1;
  std::vector<int> taps;  // pre-ReLU conv outputs, taps[b] for block b+1
  int embedding = -1;     // global-pooled flat feature, -1 if stopped early
  int logits = -1;        // -1 if stopped early
  std::map<std::string, int> param_nodes;
};

// Builds the graph up to `up_to_block` taps (0 means the full network with
// head). Image and parameter gradient tracking are independent so attacks can
// differentiate w.r.t. the image with frozen weights.
inline ForwardGraph build_forward(const Checkpoint& ck, const Tensor& image, bool image_grad,
                                  bool param_grad, int up_to_block = 0) {
  const ModelConfig& cfg = ck.config;
  if (image.shape != Shape{cfg.in_c, cfg.in_h, cfg.in_w}) {
    throw std::invalid_argument("image shape " + shape_str(image.shape) + " does not match model input " +
                                shape_str(Shape{cfg.in_c, cfg.in_h, cfg.in_w}));
  }
  if (up_to_block < 0 || up_to_block > cfg.blocks) {
    throw std::invalid_argument("invalid layer id " + std::to_string(up_to_block));
  }
  ForwardGraph fg;
  fg.image = fg.tape.leaf(image, image_grad);
  auto param = [&](const std::string& name) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw std::invalid_argument("checkpoint missing parameter " + name);
    int id = fg.tape.leaf(it->second, param_grad);
    fg.param_nodes[name] = id;
    return id;
  };
  const int last = up_to_block == 0 ? cfg.blocks : up_to_block;
  int x = fg.image;
  for (int b = 1; b <= last; ++b) {
    const std::string base = "block" + std::to_string(b);
    int z = fg.tape.conv2d(x, param(base + ".weight"), param(base + ".bias"), 1, 1);
    fg.taps.push_back(z);
    x = fg.tape.avg_pool(fg.tape.relu(z), 2, 2, 2, 2);
  }
  if (up_to_block != 0) return fg;
  const Tensor& pooled = fg.tape.value(x);
  const int ph = pooled.shape[1], pw = pooled.shape[2];
  if (ph > 1 || pw > 1) x = fg.tape.avg_pool(x, ph, pw, ph, pw);
  fg.embedding = fg.tape.flatten(x);
  fg.logits = fg.tape.linear(fg.embedding, param("head.weight"), param("head.bias"));
  return fg;
}

inline Tensor logits_of(const Checkpoint& ck, const Tensor& image) {
  ForwardGraph fg = build_forward(ck, image, false, false);
  return fg.tape.value(fg.logits);
}

// Numerically stable softmax with double accumulation.
inline std::vector<float> stable_softmax(const Tensor& logits) {
  float m = logits[0];
  for (size_t i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (size_t i = 0; i < logits.numel(); ++i) sum += std::exp(static_cast<double>(logits[i]) - m);
  std::vector<float> out(logits.numel());
  for (size_t i = 0; i < logits.numel(); ++i) {
    out[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - m) / sum);
  }
  return out;
}

inline int argmax_lowest(const std::vector<float>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline int predict_class(const Checkpoint& ck, const Tensor& image) {
  Tensor z = logits_of(ck, image);
  return argmax_lowest(z.data);
}

inline std::vector<float> predict_softmax(const Checkpoint& ck, const Tensor& image) {
  return stable_softmax(logits_of(ck, image));
}

// Pre-ReLU activation map of one block, the retrieval feature source.
inline Tensor feature_tap(const Checkpoint& ck, const Tensor& image, int layer) {
  if (layer < 1 || layer > ck.config.blocks) {
    throw std::invalid_argument("invalid layer id " + std::to_string(layer) + ", model has " +
                                std::to_string(ck.config.blocks) + " blocks");
  }
  ForwardGraph fg = build_forward(ck, image, false, false, layer);
  return fg.tape.value(fg.taps[static_cast<size_t>(layer - 1)]);
}

// Multi-class logistic loss and its gradient w.r.t. the input image.
inline std::pair<float, Tensor> loss_and_input_grad(const Checkpoint& ck, const Tensor& image, int label) {
  ForwardGraph fg = build_forward(ck, image, true, false);
  int loss = fg.tape.softmax_xent(fg.logits, label);
  fg.tape.backward(loss);
  return {fg.tape.value(loss)[0], fg.tape.grad(fg.image)};
}

// Margin term max(-kappa, z[orig] - max_{k!=orig} z[k]) and its input gradient.
inline std::pair<float, Tensor> margin_and_input_grad(const Checkpoint& ck, const Tensor& image,
                                                      int orig_class, float kappa) {
  ForwardGraph fg = build_forward(ck, image, true, false);
  int margin = fg.tape.cw_margin(fg.logits, orig_class, kappa);
  fg.tape.backward(margin);
  return {fg.tape.value(margin)[0], fg.tape.grad(fg.image)};
}

struct TrainReport {
  Checkpoint checkpoint;
  float train_accuracy = 0.0f;
  std::vector<float> epoch_mean_loss;
};

// SGD with momentum over mean-gradient mini-batches, seeded shuffling, and
// a stepped learning-rate decay (halved every 10 epochs) that prevents late
// overshoot once the loss is small. Single-threaded and bit-reproducible for
// a fixed seed.
inline TrainReport train(const std::vector<Tensor>& images, const std::vector<int>& labels,
                         const ModelConfig& cfg, int epochs, float lr, float momentum, uint64_t seed,
                         int batch_size = 16) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("train: dataset is empty");
  if (images.size() != labels.size()) throw std::invalid_argument("train: image/label count mismatch");
  for (int y : labels) {
    if (y < 0 || y >= cfg.classes) {
      throw std::invalid_argument("train: label " + std::to_string(y) + " out of range for " +
                                  std::to_string(cfg.classes) + " classes");
    }
  }
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");

  TrainReport report;
  report.checkpoint = init_model(cfg, seed);
  Checkpoint& ck = report.checkpoint;
  Rng rng(mix_seed(seed, 0x7261696e));

  std::map<std::string, Tensor> velocity;
  std::map<std::string, Tensor> grad_acc;
  for (const auto& [name, t] : ck.params) {
    velocity.emplace(name, Tensor::zeros(t.shape));
    grad_acc.emplace(name, Tensor::zeros(t.shape));
  }

  std::vector<size_t> order(images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int e = 0; e < epochs; ++e) {
    const float epoch_lr = lr * std::pow(0.5f, static_cast<float>(e / 10));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
      for (auto& [name, g] : grad_acc) std::fill(g.data.begin(), g.data.end(), 0.0f);
      for (size_t b = start; b < end; ++b) {
        const size_t idx = order[b];
        ForwardGraph fg = build_forward(ck, images[idx], false, true);
        int loss = fg.tape.softmax_xent(fg.logits, labels[idx]);
        fg.tape.backward(loss);
        loss_sum += fg.tape.value(loss)[0];
        for (auto& [name, g] : grad_acc) {
          const Tensor sample_grad = fg.tape.grad(fg.param_nodes.at(name));
          for (size_t i = 0; i < g.numel(); ++i) g[i] += sample_grad[i];
        }
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      double norm2 = 0.0;
      for (const auto& [name, g] : grad_acc) {
        for (size_t i = 0; i < g.numel(); ++i) {
          const double gi = static_cast<double>(g[i]) * inv;
          norm2 += gi * gi;
        }
      }
      // Global-norm clip: one spiked batch otherwise drives every ReLU dead
      // and freezes training permanently.
      const double norm = std::sqrt(norm2);
      const float clip = norm > 1.0 ? static_cast<float>(1.0 / norm) : 1.0f;
      for (auto& [name, w] : ck.params) {
        const Tensor& g = grad_acc.at(name);
        Tensor& v = velocity.at(name);
        for (size_t i = 0; i < w.numel(); ++i) {
          v[i] = momentum * v[i] - epoch_lr * clip * (g[i] * inv);
          w[i] += v[i];
        }
      }
    }
    report.epoch_mean_loss.push_back(static_cast<float>(loss_sum / static_cast<double>(images.size())));
  }
  ck.epochs = epochs;

  size_t correct = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    if (predict_class(ck, images[i]) == labels[i]) ++correct;
  }
  report.train_accuracy = static_cast<float>(correct) / static_cast<float>(images.size());
  return report;
}

inline constexpr const char* kCheckpointMagic = "KSCKPT01";

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  ck.config.validate();
  BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.u32(static_cast<uint32_t>(ck.config.blocks));
  for (int c : ck.config.channels) w.u32(static_cast<uint32_t>(c));
  w.u32(static_cast<uint32_t>(ck.config.classes));
  w.u32(static_cast<uint32_t>(ck.config.in_h));
  w.u32(static_cast<uint32_t>(ck.config.in_w));
  w.u32(static_cast<uint32_t>(ck.config.in_c));
  for (const auto& [name, t] : ck.params) {
    w.name(name);
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int e : t.shape) w.u32(static_cast<uint32_t>(e));
    w.f32_array(t.data.data(), t.numel());
  }
  w.close();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kCheckpointMagic);
  Checkpoint ck;
  ck.config.blocks = static_cast<int>(r.u32());
  if (ck.config.blocks < 2 || ck.config.blocks > 64) {
    throw std::runtime_error(path + ": implausible block count");
  }
  ck.config.channels.resize(static_cast<size_t>(ck.config.blocks));
  for (int& c : ck.config.channels) c = static_cast<int>(r.u32());
  ck.config.classes = static_cast<int>(r.u32());
  ck.config.in_h = static_cast<int>(r.u32());
  ck.config.in_w = static_cast<int>(r.u32());
  ck.config.in_c = static_cast<int>(r.u32());
  ck.config.validate();
  while (!r.at_eof()) {
    std::string name = r.name();
    const int rank = r.u8();
    Shape shape(static_cast<size_t>(rank));
    for (int& e : shape) e = static_cast<int>(r.u32());
    Tensor t = Tensor::zeros(shape);
    r.f32_array(t.data.data(), t.numel());
    if (!ck.params.emplace(name, std::move(t)).second) {
      throw std::runtime_error(path + ": duplicate parameter " + name);
    }
  }
  const auto layout = detail::param_layout(ck.config);
  if (ck.params.size() != layout.size()) {
    throw std::runtime_error(path + ": parameter count does not match architecture");
  }
  for (const auto& [name, shape] : layout) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw std::runtime_error(path + ": missing parameter " + name);
    if (it->second.shape != shape) throw std::runtime_error(path + ": wrong shape for " + name);
  }
  return ck;
}

}  // namespace kshield
