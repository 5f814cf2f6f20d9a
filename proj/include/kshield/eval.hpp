#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/attacks.hpp"
#include "kshield/config.hpp"
#include "kshield/dataset.hpp"
#include "kshield/defense.hpp"
#include "kshield/features.hpp"
#include "kshield/index.hpp"
#include "kshield/model.hpp"
#include "kshield/parallel.hpp"
#include "kshield/report.hpp"
#include "kshield/rng.hpp"
#include "kshield/store.hpp"

namespace kshield {

// Experiment harness: threat models, database curation, and the sweep axes,
// producing one ExperimentRow per configuration.

struct ThreatModel {
  enum class Kind : uint8_t { kGray, kBlack, kWhite };
  Kind kind = Kind::kGray;
  const Checkpoint* attack_model = nullptr;
  const Checkpoint* defense_model = nullptr;
  const AttackDatabase* attack_db = nullptr;  // white only

  void validate() const {
    if (attack_model == nullptr || defense_model == nullptr) {
      throw std::invalid_argument("threat model: attack and defense models required");
    }
    switch (kind) {
      case Kind::kGray:
        if (attack_model != defense_model) {
          throw std::invalid_argument("threat model: gray box requires attack model == defense model");
        }
        break;
      case Kind::kBlack:
        if (attack_model == defense_model) {
          throw std::invalid_argument("threat model: black box requires a distinct attack model");
        }
        break;
      case Kind::kWhite:
        if (attack_db == nullptr) {
          throw std::invalid_argument("threat model: white box requires an attack database");
        }
        break;
    }
  }
};

inline const char* threat_name(ThreatModel::Kind k) {
  switch (k) {
    case ThreatModel::Kind::kGray: return "gray";
    case ThreatModel::Kind::kBlack: return "black";
    case ThreatModel::Kind::kWhite: return "white";
  }
  return "?";
}

inline ThreatModel::Kind parse_threat(const std::string& s) {
  if (s == "gray") return ThreatModel::Kind::kGray;
  if (s == "black") return ThreatModel::Kind::kBlack;
  if (s == "white") return ThreatModel::Kind::kWhite;
  throw std::invalid_argument("unknown threat kind '" + s + "' (expected gray, black, white)");
}

struct CurationSpec {
  enum class Mode : uint8_t { kTargeted, kAll };
  Mode mode = Mode::kTargeted;
  double distractor_fraction = 0.0;
  size_t db_size = 0;   // 0: all available task images
  double overlap = 1.0; // attack/defense database id overlap

  void validate() const {
    if (distractor_fraction < 0.0 || distractor_fraction > 1.0) {
      throw std::invalid_argument("curation: distractor fraction must be in [0, 1]");
    }
    if (overlap < 0.0 || overlap > 1.0) {
      throw std::invalid_argument("curation: overlap must be in [0, 1]");
    }
  }
};

inline const char* curation_name(CurationSpec::Mode m) {
  return m == CurationSpec::Mode::kTargeted ? "targeted" : "all";
}

inline CurationSpec::Mode parse_curation(const std::string& s) {
  if (s == "targeted") return CurationSpec::Mode::kTargeted;
  if (s == "all") return CurationSpec::Mode::kAll;
  throw std::invalid_argument("unknown curation mode '" + s + "' (expected targeted, all)");
}

struct IndexSpec {
  IndexHandle::Kind kind = IndexHandle::Kind::kFlat;
  int nlist = 64;
  int pq_m = 8;
  int pq_bits = 8;
  int nprobe = 16;
};

struct DefenseDb {
  DefenseArtifacts artifacts;
  std::vector<uint64_t> ids;  // curated order; ids are source-dataset positions
};

// Chooses the database ids for one curation. Targeted keeps in-task images
// only; all-mode fills the configured fraction with distractor-pool images
// at the same total size.
inline std::vector<uint64_t> curate_ids(const Dataset& source, const CurationSpec& cur) {
  cur.validate();
  std::vector<uint64_t> task_ids, distractor_ids;
  for (size_t i = 0; i < source.size(); ++i) {
    (source.labels[i] < source.classes ? task_ids : distractor_ids).push_back(i);
  }
  if (cur.mode == CurationSpec::Mode::kTargeted) {
    size_t n = cur.db_size == 0 ? task_ids.size() : std::min(cur.db_size, task_ids.size());
    task_ids.resize(n);
    return task_ids;
  }
  const size_t total = cur.db_size == 0 ? task_ids.size() : cur.db_size;
  size_t n_distract = std::min(static_cast<size_t>(std::llround(cur.distractor_fraction *
                                                                static_cast<double>(total))),
                               distractor_ids.size());
  const size_t n_task = std::min(total - n_distract, task_ids.size());
  std::vector<uint64_t> ids(task_ids.begin(), task_ids.begin() + static_cast<std::ptrdiff_t>(n_task));
  ids.insert(ids.end(), distractor_ids.begin(), distractor_ids.begin() + static_cast<std::ptrdiff_t>(n_distract));
  return ids;
}

namespace detail {

inline FeaturePipeline fit_pipeline(const Checkpoint& model, const Dataset& source,
                                    const std::vector<uint64_t>& ids, int layer, int pca_dim,
                                    size_t pca_sample_cap) {
  FeaturePipeline pipe;
  pipe.pool = default_pool_spec(model.config, layer);
  std::vector<std::vector<float>> samples;
  const size_t cap = pca_sample_cap == 0 ? ids.size() : std::min(pca_sample_cap, ids.size());
  samples.reserve(cap);
  for (size_t i = 0; i < cap; ++i) {
    samples.push_back(pooled_vector(model, pipe.pool, source.images[static_cast<size_t>(ids[i])]));
  }
  if (samples.empty()) throw std::invalid_argument("build db: no images selected by curation");
  const int d_in = static_cast<int>(samples[0].size());
  if (pca_dim > d_in) {
    throw std::invalid_argument("build db: pca dim " + std::to_string(pca_dim) +
                                " exceeds pooled dim " + std::to_string(d_in));
  }
  pipe.pca = pca_fit(samples, pca_dim);
  return pipe;
}

inline IndexHandle build_index(const std::vector<std::vector<float>>& descriptors,
                               const std::vector<uint64_t>& ids, const IndexSpec& spec, uint64_t seed) {
  IndexHandle handle;
  handle.kind = spec.kind;
  handle.nprobe = spec.nprobe;
  if (spec.kind == IndexHandle::Kind::kFlat) {
    handle.flat = flat_build(descriptors, ids);
    return handle;
  }
  const int dim = descriptors.empty() ? 0 : static_cast<int>(descriptors[0].size());
  const int nlist = std::min<int>(spec.nlist, static_cast<int>(descriptors.size()));
  handle.ivfpq = ivfpq_train(descriptors, dim, std::max(1, nlist), spec.pq_m, spec.pq_bits, seed);
  ivfpq_add(handle.ivfpq, descriptors, ids);
  return handle;
}

}  // namespace detail

// Defense database: fit the feature pipeline, index every curated image, and
// precompute the model's softmax for each id. Store coverage of the index is
// checked here so defense queries can never miss.
inline DefenseDb build_defense_db(const Dataset& source, const CurationSpec& curation,
                                  const Checkpoint& model, int layer, int pca_dim,
                                  const IndexSpec& index_spec = {}, size_t pca_sample_cap = 0,
                                  uint64_t seed = 0) {
  DefenseDb db;
  db.ids = curate_ids(source, curation);
  if (db.ids.empty()) throw std::invalid_argument("build_defense_db: curation selected no images");
  db.artifacts.pipeline = detail::fit_pipeline(model, source, db.ids, layer, pca_dim, pca_sample_cap);

  std::vector<std::vector<float>> descriptors;
  descriptors.reserve(db.ids.size());
  db.artifacts.store = PredictionStore(model.config.classes);
  for (uint64_t id : db.ids) {
    const Tensor& img = source.images[static_cast<size_t>(id)];
    descriptors.push_back(extract_descriptor(model, db.artifacts.pipeline, img));
    db.artifacts.store.put(id, predict_softmax(model, img));
  }
  db.artifacts.index = detail::build_index(descriptors, db.ids, index_spec, seed);

  for (uint64_t id : db.ids) {
    if (!db.artifacts.store.contains(id)) {
      throw std::runtime_error("build_defense_db: coverage gap for id " + std::to_string(id));
    }
  }
  return db;
}

// Attack database for white-box threat models: `overlap` of the ids come from
// the defense database, the rest from the attacker's own pool. The defender's
// feature pipeline is reused (the white-box adversary knows g). Attacker-pool
// ids are offset past the defense source so the two id spaces stay disjoint.
inline AttackDatabase build_attack_db(const Dataset& defense_source, const DefenseDb& defense,
                                      double overlap, const Dataset& attacker_pool,
                                      const Checkpoint& feature_model, size_t size = 0) {
  if (overlap < 0.0 || overlap > 1.0) throw std::invalid_argument("build_attack_db: overlap in [0,1]");
  AttackDatabase db;
  db.feature_model = feature_model;
  db.pipeline = defense.artifacts.pipeline;

  const size_t total = size == 0 ? defense.ids.size() : size;
  const size_t n_shared = std::min(static_cast<size_t>(std::llround(overlap * static_cast<double>(total))),
                                   defense.ids.size());
  const size_t n_own = std::min(total - n_shared, attacker_pool.size());

  std::vector<std::vector<float>> descriptors;
  for (size_t i = 0; i < n_shared; ++i) {
    const uint64_t id = defense.ids[i];
    const Tensor& img = defense_source.images[static_cast<size_t>(id)];
    db.ids.push_back(id);
    db.images.push_back(img);
    descriptors.push_back(extract_descriptor(feature_model, db.pipeline, img));
  }
  const uint64_t own_base = defense_source.size();
  for (size_t i = 0; i < n_own; ++i) {
    const Tensor& img = attacker_pool.images[i];
    db.ids.push_back(own_base + i);
    db.images.push_back(img);
    descriptors.push_back(extract_descriptor(feature_model, db.pipeline, img));
  }
  if (db.ids.empty()) throw std::invalid_argument("build_attack_db: empty attack database");
  db.index.kind = IndexHandle::Kind::kFlat;
  db.index.flat = flat_build(descriptors, db.ids);
  return db;
}

struct AttackSpec {
  AttackMethod method = AttackMethod::kPgd;
  double epsilon_rel = 0.06;
  int iters = 10;
  double alpha = 0.0;
  int restarts = 1;
  // CW
  double kappa = 0.0;
  double lambda_f = 1.0;
  int cw_steps = 100;
  double cw_lr = 0.01;
  // defense-aware
  double gamma = 0.05;
  int k_attack = 50;
};

// Per-eval-image attack seeds derive from (seed, image index) only, so rows
// that share an attack configuration produce identical adversarial images.
inline std::vector<Tensor> craft_adversarial(const Dataset& eval_set, const ThreatModel& threat,
                                             const AttackSpec& attack, uint64_t seed, int threads = 1) {
  threat.validate();
  if (eval_set.size() == 0) throw std::invalid_argument("craft_adversarial: evaluation set is empty");
  std::vector<Tensor> out(eval_set.size());
  if (attack.epsilon_rel == 0.0) {
    for (size_t i = 0; i < eval_set.size(); ++i) out[i] = eval_set.images[i];
    return out;
  }
  if (attack_needs_database(attack.method) && threat.attack_db == nullptr) {
    throw std::invalid_argument(std::string(attack_name(attack.method)) +
                                " requires an attack database");
  }
  NetLossModel model(*threat.attack_model);
  std::unique_ptr<PipelineFeatureMap> fs_map;
  if (attack_needs_database(attack.method)) {
    fs_map = std::make_unique<PipelineFeatureMap>(threat.attack_db->feature_model,
                                                  threat.attack_db->pipeline);
  }
  parallel_for(eval_set.size(), threads, [&](size_t i) {
    const Tensor& x = eval_set.images[i];
    const int y = eval_set.labels[i];
    const uint64_t img_seed = mix_seed(seed, i);
    const double dims = std::sqrt(static_cast<double>(x.numel()));
    switch (attack.method) {
      case AttackMethod::kFgsm: {
        const double step = attack.epsilon_rel * x.l2_norm() / dims;
        out[i] = attack_fgsm(model, x, y, step).image;
        break;
      }
      case AttackMethod::kIfgsm: {
        const double step = attack.epsilon_rel * x.l2_norm() / (dims * attack.iters);
        out[i] = attack_ifgsm(model, x, y, step, attack.iters).image;
        break;
      }
      case AttackMethod::kPgd: {
        AttackBudget budget{attack.epsilon_rel, attack.iters, attack.alpha, attack.restarts, img_seed};
        out[i] = attack_pgd(model, x, y, budget).image;
        break;
      }
      case AttackMethod::kCw: {
        CWConfig cfg;
        cfg.kappa = static_cast<float>(attack.kappa);
        cfg.lambda_f = static_cast<float>(attack.lambda_f);
        cfg.steps = attack.cw_steps;
        cfg.lr = static_cast<float>(attack.cw_lr);
        cfg.delta_cap = attack.epsilon_rel;
        out[i] = attack_cw_l2(model, x, y, cfg).image;
        break;
      }
      case AttackMethod::kPgdPr: {
        DefenseAwareConfig cfg{static_cast<float>(attack.gamma), attack.k_attack, threat.attack_db};
        AttackBudget budget{attack.epsilon_rel, attack.iters, attack.alpha, attack.restarts, img_seed};
        out[i] = attack_pgd_pr(model, *fs_map, x, y, cfg, budget).image;
        break;
      }
      case AttackMethod::kPgdFs: {
        DefenseAwareConfig cfg{static_cast<float>(attack.gamma), attack.k_attack, threat.attack_db};
        AttackBudget budget{attack.epsilon_rel, attack.iters, attack.alpha, attack.restarts, img_seed};
        out[i] = attack_pgd_fs(*fs_map, x, cfg, budget).image;
        break;
      }
    }
  });
  return out;
}

struct EvalRequest {
  std::string experiment_id = "exp";
  const Dataset* eval_set = nullptr;
  ThreatModel threat;
  AttackSpec attack;
  const DefenseDb* defense = nullptr;
  DefenseConfig defense_config;
  // bookkeeping copied into the row
  CurationSpec::Mode curation = CurationSpec::Mode::kTargeted;
  double overlap = 1.0;
  int layer = 0;
  uint64_t seed = 0;
  int threads = 1;
};

// Attacks every eval image under the threat model, then classifies with and
// without the defense. Top-1 accuracies aggregate into one row.
inline ExperimentRow run_eval(const EvalRequest& req,
                              const std::vector<Tensor>* precomputed_adversarial = nullptr) {
  if (req.eval_set == nullptr || req.eval_set->size() == 0) {
    throw std::invalid_argument("run_eval: evaluation set is empty");
  }
  if (req.defense == nullptr) throw std::invalid_argument("run_eval: defense database required");
  req.threat.validate();
  req.defense_config.validate();
  const Dataset& eval_set = *req.eval_set;
  eval_set.validate_task_labels();

  std::vector<Tensor> crafted;
  const std::vector<Tensor>* adversarial = precomputed_adversarial;
  if (adversarial == nullptr) {
    crafted = craft_adversarial(eval_set, req.threat, req.attack, req.seed, req.threads);
    adversarial = &crafted;
  }
  if (adversarial->size() != eval_set.size()) {
    throw std::invalid_argument("run_eval: adversarial image count mismatch");
  }

  const Checkpoint& defender = *req.threat.defense_model;
  std::vector<uint8_t> clean_ok(eval_set.size()), undef_ok(eval_set.size()), def_ok(eval_set.size());
  parallel_for(eval_set.size(), req.threads, [&](size_t i) {
    const int y = eval_set.labels[i];
    const Tensor& x_adv = (*adversarial)[i];
    clean_ok[i] = predict_class(defender, eval_set.images[i]) == y;
    undef_ok[i] = predict_class(defender, x_adv) == y;
    def_ok[i] = defend_classify(defender, x_adv, req.defense->artifacts, req.defense_config).predicted == y;
  });

  auto ratio = [&](const std::vector<uint8_t>& v) {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return static_cast<double>(n) / static_cast<double>(v.size());
  };

  ExperimentRow row;
  row.experiment_id = req.experiment_id;
  row.threat = threat_name(req.threat.kind);
  row.attack = attack_name(req.attack.method);
  row.epsilon_rel = req.attack.epsilon_rel;
  row.k = req.defense_config.k;
  row.weighting = weighting_name(req.defense_config.weighting);
  row.combination = combination_name(req.defense_config.combination);
  row.layer = req.layer;
  row.db_size = req.defense->ids.size();
  row.curation = curation_name(req.curation);
  row.overlap = req.overlap;
  row.clean_accuracy = ratio(clean_ok);
  row.attacked_accuracy = ratio(def_ok);
  row.undefended_attacked_accuracy = ratio(undef_ok);
  row.sample_count = eval_set.size();
  row.seed = req.seed;
  return row;
}

}  // namespace kshield
