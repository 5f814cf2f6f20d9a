#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kshield/features.hpp"
#include "kshield/index.hpp"
#include "kshield/model.hpp"
#include "kshield/rng.hpp"
#include "kshield/tensor.hpp"

namespace kshield {

// Gradient attacks. All attacks operate on abstract gradient sources so the
// same procedures run against the CNN, against test stubs with analytic
// gradients, and against the retrieval feature map.

// Normalized L2 dissimilarity, the perturbation-budget axis.
inline double normalized_l2(const Tensor& x, const Tensor& x_adv) {
  if (!x.same_shape(x_adv)) {
    throw std::invalid_argument("normalized_l2: shape mismatch " + shape_str(x.shape) + " vs " +
                                shape_str(x_adv.shape));
  }
  const double base = x.l2_norm();
  if (base <= 0.0) throw std::invalid_argument("normalized_l2: reference image has zero norm");
  return l2_distance(x, x_adv) / base;
}

// Anything a label-based attack can differentiate through.
struct LossModel {
  virtual ~LossModel() = default;
  virtual int classes() const = 0;
  virtual Tensor logits(const Tensor& x) const = 0;
  // Multi-class logistic loss and its gradient w.r.t. the input.
  virtual std::pair<float, Tensor> loss_grad(const Tensor& x, int label) const = 0;
  // max(-kappa, z[orig] - max_{k != orig} z[k]) and its input gradient.
  virtual std::pair<float, Tensor> margin_grad(const Tensor& x, int orig_class, float kappa) const = 0;

  int predict(const Tensor& x) const {
    Tensor z = logits(x);
    return argmax_lowest(z.data);
  }
};

// The trained CNN behind the LossModel surface, weights frozen.
class NetLossModel final : public LossModel {
 public:
  explicit NetLossModel(const Checkpoint& ck) : ck_(ck) {}
  int classes() const override { return ck_.config.classes; }
  Tensor logits(const Tensor& x) const override { return logits_of(ck_, x); }
  std::pair<float, Tensor> loss_grad(const Tensor& x, int label) const override {
    return loss_and_input_grad(ck_, x, label);
  }
  std::pair<float, Tensor> margin_grad(const Tensor& x, int orig_class, float kappa) const override {
    return margin_and_input_grad(ck_, x, orig_class, kappa);
  }
  const Checkpoint& checkpoint() const { return ck_; }

 private:
  const Checkpoint& ck_;
};

// A differentiable feature extractor g(x), the retrieval-space attack surface.
struct FeatureMap {
  virtual ~FeatureMap() = default;
  virtual std::vector<float> features(const Tensor& x) const = 0;
  // Value and input gradient of sum_j ||targets[j] - g(x)||^2.
  virtual std::pair<float, Tensor> pull_away_grad(const Tensor& x,
                                                  const std::vector<std::vector<float>>& targets) const = 0;
};

// tap -> spatial pool -> flatten -> PCA, differentiated end to end. The PCA
// stage is the affine map comp * (v - mean), folded into one linear node.
class PipelineFeatureMap final : public FeatureMap {
 public:
  PipelineFeatureMap(const Checkpoint& ck, const FeaturePipeline& pipe) : ck_(ck), pipe_(pipe) {
    const PCAModel& pca = pipe.pca;
    pca_weight_ = Tensor({pca.d_out, pca.d_in}, pca.components);
    pca_bias_ = Tensor::zeros({pca.d_out});
    for (int k = 0; k < pca.d_out; ++k) {
      double acc = 0.0;
      for (int i = 0; i < pca.d_in; ++i) {
        acc -= static_cast<double>(pca.components[static_cast<size_t>(k) * pca.d_in + i]) *
               pca.mean[static_cast<size_t>(i)];
      }
      pca_bias_[static_cast<size_t>(k)] = static_cast<float>(acc);
    }
  }

  std::vector<float> features(const Tensor& x) const override {
    return extract_descriptor(ck_, pipe_, x);
  }

  std::pair<float, Tensor> pull_away_grad(const Tensor& x,
                                          const std::vector<std::vector<float>>& targets) const override {
    if (targets.empty()) throw std::invalid_argument("pull_away_grad: no targets");
    ForwardGraph fg = build_forward(ck_, x, true, false, pipe_.pool.layer);
    Tape& tape = fg.tape;
    const int tap = fg.taps[static_cast<size_t>(pipe_.pool.layer - 1)];
    const Tensor& map = tape.value(tap);
    const int ch = map.shape[1] / pipe_.pool.target_h;
    const int cw = map.shape[2] / pipe_.pool.target_w;
    int pooled = tape.avg_pool(tap, ch, cw, ch, cw);
    int flat = tape.flatten(pooled);
    int w = tape.constant(pca_weight_);
    int b = tape.constant(pca_bias_);
    int feat = tape.linear(flat, w, b);
    int total = -1;
    for (const auto& t : targets) {
      if (static_cast<int>(t.size()) != pipe_.pca.d_out) {
        throw std::invalid_argument("pull_away_grad: target length mismatch");
      }
      int target = tape.constant(Tensor({pipe_.pca.d_out}, t));
      int term = tape.sum(tape.square(tape.sub(target, feat)));
      total = total < 0 ? term : tape.add(total, term);
    }
    tape.backward(total);
    return {tape.value(total)[0], tape.grad(fg.image)};
  }

 private:
  const Checkpoint& ck_;
  FeaturePipeline pipe_;
  Tensor pca_weight_;
  Tensor pca_bias_;
};

struct AttackBudget {
  double epsilon_rel = 0.06;  // normalized L2 budget
  int iters = 10;
  double alpha = 0.0;  // per-step magnitude; 0 derives 2*eps_abs/(iters*sqrt(d))
  int restarts = 1;
  uint64_t seed = 0;

  void validate() const {
    if (epsilon_rel < 0.0) throw std::invalid_argument("attack budget: epsilon must be >= 0");
    if (iters < 1) throw std::invalid_argument("attack budget: iterations must be >= 1");
    if (restarts < 1) throw std::invalid_argument("attack budget: restarts must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("attack budget: alpha must be >= 0");
  }
};

struct CWConfig {
  float kappa = 0.0f;
  float lambda_f = 1.0f;
  int steps = 100;
  float lr = 0.01f;
  double delta_cap = 0.0;  // > 0: project the result onto this normalized-L2 ball

  void validate() const {
    if (kappa < 0.0f) throw std::invalid_argument("cw config: kappa must be >= 0");
    if (lambda_f < 0.0f) throw std::invalid_argument("cw config: lambda_f must be >= 0");
    if (steps < 1) throw std::invalid_argument("cw config: steps must be >= 1");
    if (lr <= 0.0f) throw std::invalid_argument("cw config: learning rate must be > 0");
  }
};

struct AdversarialResult {
  Tensor image;
  double achieved_delta = 0.0;
  bool success = false;  // gradient-source model misclassifies w.r.t. the given label
  int iterations = 0;
};

namespace detail {

inline float sgn(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

inline void clip01(Tensor& t) {
  for (float& v : t.data) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
}

// Project x_cur onto the L2 ball of radius eps_abs around x, then the pixel
// box. Box clipping afterwards moves every pixel toward x, so both
// constraints hold on return.
inline void project_ball(Tensor& x_cur, const Tensor& x, double eps_abs) {
  double norm2 = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x_cur[i]) - x[i];
    norm2 += d * d;
  }
  const double norm = std::sqrt(norm2);
  if (norm > eps_abs && norm > 0.0) {
    const double scale = eps_abs / norm;
    for (size_t i = 0; i < x.numel(); ++i) {
      x_cur[i] = x[i] + static_cast<float>((static_cast<double>(x_cur[i]) - x[i]) * scale);
    }
  }
  clip01(x_cur);
}

// PGD skeleton shared by the plain, prediction-aware, and feature-space
// variants. `grad_fn(x) -> (objective, ascent gradient)`; the restart whose
// final iterate scores highest under `score_fn` wins. The first restart
// starts exactly at x; later restarts add per-pixel uniform noise inside the
// epsilon ball. Restart r draws from mix_seed(seed, r).
template <typename GradFn, typename ScoreFn>
AdversarialResult pgd_core(const Tensor& x, const AttackBudget& budget, GradFn&& grad_fn,
                           ScoreFn&& score_fn) {
  budget.validate();
  const double eps_abs = budget.epsilon_rel * x.l2_norm();
  if (eps_abs == 0.0) {
    AdversarialResult res;
    res.image = x;
    res.achieved_delta = 0.0;
    res.iterations = 0;
    return res;
  }
  const double dims = static_cast<double>(x.numel());
  const double alpha = budget.alpha > 0.0 ? budget.alpha
                                          : 2.0 * eps_abs / (static_cast<double>(budget.iters) * std::sqrt(dims));

  Tensor best;
  float best_score = 0.0f;
  bool have_best = false;
  for (int r = 0; r < budget.restarts; ++r) {
    Tensor x_cur = x;
    if (r > 0) {
      Rng rng(mix_seed(budget.seed, static_cast<uint64_t>(r)));
      const float lim = static_cast<float>(eps_abs / std::sqrt(dims));
      for (float& v : x_cur.data) v += rng.uniform(-lim, lim);
      project_ball(x_cur, x, eps_abs);
    }
    for (int m = 0; m < budget.iters; ++m) {
      auto [obj, grad] = grad_fn(x_cur);
      (void)obj;
      for (size_t i = 0; i < x_cur.numel(); ++i) {
        x_cur[i] += static_cast<float>(alpha) * sgn(grad[i]);
      }
      project_ball(x_cur, x, eps_abs);
    }
    const float score = score_fn(x_cur);
    if (!have_best || score > best_score) {
      best = std::move(x_cur);
      best_score = score;
      have_best = true;
    }
  }

  AdversarialResult res;
  res.image = std::move(best);
  res.achieved_delta = normalized_l2(x, res.image);
  res.iterations = budget.iters;
  return res;
}

}  // namespace detail

// Single signed-gradient step of magnitude eps_step, box-clipped.
inline AdversarialResult attack_fgsm(const LossModel& model, const Tensor& x, int label,
                                     double eps_step) {
  if (eps_step < 0.0) throw std::invalid_argument("attack_fgsm: eps_step must be >= 0");
  AdversarialResult res;
  res.image = x;
  res.iterations = 1;
  if (eps_step > 0.0) {
    auto [loss, grad] = model.loss_grad(x, label);
    (void)loss;
    for (size_t i = 0; i < x.numel(); ++i) {
      res.image[i] += static_cast<float>(eps_step) * detail::sgn(grad[i]);
    }
    detail::clip01(res.image);
  }
  res.achieved_delta = normalized_l2(x, res.image);
  res.success = model.predict(res.image) != label;
  return res;
}

// M signed-gradient steps, box-clipped after each; no ball projection.
inline AdversarialResult attack_ifgsm(const LossModel& model, const Tensor& x, int label,
                                      double eps_step, int iters) {
  if (iters < 1) throw std::invalid_argument("attack_ifgsm: iterations must be >= 1");
  if (eps_step < 0.0) throw std::invalid_argument("attack_ifgsm: eps_step must be >= 0");
  AdversarialResult res;
  res.image = x;
  res.iterations = iters;
  if (eps_step > 0.0) {
    for (int m = 0; m < iters; ++m) {
      auto [loss, grad] = model.loss_grad(res.image, label);
      (void)loss;
      for (size_t i = 0; i < x.numel(); ++i) {
        res.image[i] += static_cast<float>(eps_step) * detail::sgn(grad[i]);
      }
      detail::clip01(res.image);
    }
  }
  res.achieved_delta = normalized_l2(x, res.image);
  res.success = model.predict(res.image) != label;
  return res;
}

// Signed-gradient ascent on the classification loss with per-step projection
// onto the normalized-L2 ball and the pixel box; random restarts keep the
// best final loss.
inline AdversarialResult attack_pgd(const LossModel& model, const Tensor& x, int label,
                                    const AttackBudget& budget) {
  AdversarialResult res = detail::pgd_core(
      x, budget, [&](const Tensor& xc) { return model.loss_grad(xc, label); },
      [&](const Tensor& xc) { return model.loss_grad(xc, label).first; });
  res.success = model.predict(res.image) != label;
  return res;
}

// Gradient descent on ||x' - x||^2 + lambda_f * margin with pixel clipping.
// Returns the lowest-distance prediction-flipping iterate, else the final one.
inline AdversarialResult attack_cw_l2(const LossModel& model, const Tensor& x, int label,
                                      const CWConfig& config) {
  config.validate();
  const int orig = model.predict(x);
  Tensor x_cur = x;
  Tensor best = x;
  bool found = false;
  double best_dist = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    auto [margin, mgrad] = model.margin_grad(x_cur, orig, config.kappa);
    (void)margin;
    for (size_t i = 0; i < x.numel(); ++i) {
      const float dist_grad = 2.0f * (x_cur[i] - x[i]);
      x_cur[i] -= config.lr * (dist_grad + config.lambda_f * mgrad[i]);
    }
    detail::clip01(x_cur);
    if (model.predict(x_cur) != orig) {
      const double dist = l2_distance(x, x_cur);
      if (!found || dist < best_dist) {
        best = x_cur;
        best_dist = dist;
        found = true;
      }
    }
  }
  AdversarialResult res;
  res.image = found ? std::move(best) : std::move(x_cur);
  res.iterations = config.steps;
  if (config.delta_cap > 0.0) {
    detail::project_ball(res.image, x, config.delta_cap * x.l2_norm());
  }
  res.achieved_delta = normalized_l2(x, res.image);
  res.success = model.predict(res.image) != label;
  return res;
}

// Attack-side database: descriptors indexed for retrieval plus the raw
// images, so neighbor-image gradients are computable.
struct AttackDatabase {
  Checkpoint feature_model;
  FeaturePipeline pipeline;
  IndexHandle index;
  std::vector<uint64_t> ids;   // build order
  std::vector<Tensor> images;  // parallel to ids

  // Lookup stays read-only so concurrent per-image attacks can share the db.
  const Tensor& image_for(uint64_t id) const {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return images[i];
    }
    throw std::invalid_argument("attack database: id " + std::to_string(id) + " has no stored image");
  }
};

struct DefenseAwareConfig {
  float gamma = 0.05f;
  int k_attack = 50;
  const AttackDatabase* db = nullptr;

  void validate() const {
    if (gamma < 0.0f) throw std::invalid_argument("defense-aware config: gamma must be >= 0");
    if (k_attack < 1) throw std::invalid_argument("defense-aware config: K must be >= 1");
    if (db == nullptr) throw std::invalid_argument("defense-aware config: attack database required");
    if (db->index.count() == 0) throw std::invalid_argument("defense-aware config: attack index is empty");
  }
};

// Neighbor set is fixed from the clean input, retrieved with the attacker's
// feature map g. The neighbor loss gradients are constants across
// iterations, so they are computed once and added (scaled by gamma) to the
// input gradient at every step. gamma = 0 reproduces plain PGD bit-exactly.
inline AdversarialResult attack_pgd_pr(const LossModel& model, const FeatureMap& g, const Tensor& x,
                                       int label, const DefenseAwareConfig& cfg,
                                       const AttackBudget& budget) {
  cfg.validate();
  const AttackDatabase& db = *cfg.db;
  NeighborSet neighbors = db.index.search(g.features(x), cfg.k_attack);

  Tensor extra = Tensor::zeros(x.shape);
  for (const Neighbor& nb : neighbors) {
    const Tensor& img = db.image_for(nb.id);
    if (!img.same_shape(x)) {
      throw std::invalid_argument("attack_pgd_pr: neighbor image shape " + shape_str(img.shape) +
                                  " does not match input " + shape_str(x.shape));
    }
    auto [loss, grad] = model.loss_grad(img, label);
    (void)loss;
    for (size_t i = 0; i < extra.numel(); ++i) extra[i] += grad[i];
  }
  for (float& v : extra.data) v *= cfg.gamma;

  AdversarialResult res = detail::pgd_core(
      x, budget,
      [&](const Tensor& xc) {
        auto [loss, grad] = model.loss_grad(xc, label);
        for (size_t i = 0; i < grad.numel(); ++i) grad[i] += extra[i];
        return std::make_pair(loss, std::move(grad));
      },
      [&](const Tensor& xc) { return model.loss_grad(xc, label).first; });
  res.success = model.predict(res.image) != label;
  return res;
}

// Feature-space attack: ascend sum_j ||g(x'_j) - g(x)||^2 over the fixed
// neighbor set, driving the query descriptor away from its retrieval
// neighborhood. Differentiated w.r.t. the perturbed input.
inline AdversarialResult attack_pgd_fs(const FeatureMap& g, const Tensor& x,
                                       const DefenseAwareConfig& cfg, const AttackBudget& budget) {
  cfg.validate();
  const AttackDatabase& db = *cfg.db;
  std::vector<float> desc = g.features(x);
  NeighborSet neighbors = db.index.search(desc, cfg.k_attack);

  std::vector<std::vector<float>> targets;
  targets.reserve(neighbors.size());
  for (const Neighbor& nb : neighbors) {
    const Tensor& img = db.image_for(nb.id);
    if (!img.same_shape(x)) {
      throw std::invalid_argument("attack_pgd_fs: neighbor image shape " + shape_str(img.shape) +
                                  " does not match input " + shape_str(x.shape));
    }
    targets.push_back(g.features(img));
  }

  return detail::pgd_core(
      x, budget, [&](const Tensor& xc) { return g.pull_away_grad(xc, targets); },
      [&](const Tensor& xc) { return g.pull_away_grad(xc, targets).first; });
}

enum class AttackMethod : uint8_t { kFgsm, kIfgsm, kPgd, kCw, kPgdPr, kPgdFs };

inline const char* attack_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::kFgsm: return "fgsm";
    case AttackMethod::kIfgsm: return "ifgsm";
    case AttackMethod::kPgd: return "pgd";
    case AttackMethod::kCw: return "cw";
    case AttackMethod::kPgdPr: return "pgd-pr";
    case AttackMethod::kPgdFs: return "pgd-fs";
  }
  return "?";
}

inline AttackMethod parse_attack(const std::string& s) {
  if (s == "fgsm") return AttackMethod::kFgsm;
  if (s == "ifgsm") return AttackMethod::kIfgsm;
  if (s == "pgd") return AttackMethod::kPgd;
  if (s == "cw") return AttackMethod::kCw;
  if (s == "pgd-pr") return AttackMethod::kPgdPr;
  if (s == "pgd-fs") return AttackMethod::kPgdFs;
  throw std::invalid_argument("unknown attack method '" + s + "'");
}

inline bool attack_needs_database(AttackMethod m) {
  return m == AttackMethod::kPgdPr || m == AttackMethod::kPgdFs;
}

}  // namespace kshield
