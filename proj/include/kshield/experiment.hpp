#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/config.hpp"
#include "kshield/eval.hpp"

namespace kshield {

// Config-file driven experiments: one [section]key=value document describes
// data, models, threat, defense, attack, and an optional sweep axis. Every
// key has a default; unknown keys are rejected by name.

struct ExperimentSpec {
  // [experiment]
  std::string id = "exp";
  uint64_t seed = 7;
  int threads = 1;
  ThreatModel::Kind threat = ThreatModel::Kind::kGray;
  // [data]
  std::string data_source = "synthetic";  // synthetic | container | cifar10
  std::string data_path;
  std::string eval_path;
  std::string attacker_path;
  int classes = 4;
  int per_class = 128;
  int height = 16;
  int width = 16;
  int channels = 3;
  int eval_count = 500;
  int distractors = 128;
  int attacker_pool = 512;
  // [model]
  std::vector<int> blocks = {8, 16, 32, 64};
  int epochs = 15;
  double lr = 0.05;
  double momentum = 0.9;
  std::string checkpoint_path;
  std::vector<int> blocks_b = {12, 24, 48, 96};
  std::string checkpoint_b_path;
  // [defense]
  DefenseConfig defense;
  int layer = 0;  // 0 resolves to the deepest block
  int pca_dim = 32;
  int pca_sample_cap = 0;
  IndexSpec index;
  // [curation]
  CurationSpec curation;
  double db_fraction = 1.0;
  size_t attack_db_size = 0;  // 0: same size as the defense db
  // [attack]
  AttackSpec attack;
  // [sweep]
  std::string axis = "budget";
  std::vector<std::string> grid;  // empty: per-axis default
  bool svg = false;
  std::string svg_x = "epsilon_rel";
  std::string svg_y = "attacked_accuracy";
  std::string svg_series = "weighting";
};

namespace detail {

inline std::vector<int> parse_int_list(const std::vector<std::string>& items, const std::string& what) {
  std::vector<int> out;
  for (const std::string& s : items) {
    try {
      out.push_back(std::stoi(s));
    } catch (...) {
      throw std::invalid_argument(what + ": expected integer list entry, got '" + s + "'");
    }
  }
  return out;
}

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> kKnown = {
      "experiment.id", "experiment.seed", "experiment.threads", "experiment.threat",
      "data.source", "data.path", "data.eval_path", "data.attacker_path", "data.classes",
      "data.per_class", "data.height", "data.width", "data.channels", "data.eval_count",
      "data.distractors", "data.attacker_pool",
      "model.blocks", "model.epochs", "model.lr", "model.momentum", "model.checkpoint",
      "model.blocks_b", "model.checkpoint_b",
      "defense.k", "defense.weighting", "defense.combination", "defense.m", "defense.p",
      "defense.layer", "defense.pca_dim", "defense.pca_sample_cap", "defense.index",
      "defense.nlist", "defense.pq_m", "defense.pq_bits", "defense.nprobe",
      "curation.mode", "curation.distractor_fraction", "curation.db_fraction", "curation.db_size",
      "curation.overlap", "curation.attack_db_size",
      "attack.method", "attack.budget", "attack.iters", "attack.alpha", "attack.restarts",
      "attack.kappa", "attack.lambda", "attack.cw_steps", "attack.cw_lr", "attack.gamma",
      "attack.k_attack",
      "sweep.axis", "sweep.grid", "sweep.svg", "sweep.svg_x", "sweep.svg_y", "sweep.svg_series"};
  return kKnown;
}

}  // namespace detail

inline ExperimentSpec parse_experiment_spec(const ConfigDocument& doc) {
  doc.reject_unknown(detail::known_config_keys());
  ExperimentSpec s;
  s.id = doc.get_string("experiment.id", s.id);
  s.seed = static_cast<uint64_t>(doc.get_int("experiment.seed", static_cast<long long>(s.seed)));
  s.threads = static_cast<int>(doc.get_int("experiment.threads", s.threads));
  s.threat = parse_threat(doc.get_string("experiment.threat", "gray"));

  s.data_source = doc.get_string("data.source", s.data_source);
  if (s.data_source != "synthetic" && s.data_source != "container" && s.data_source != "cifar10") {
    throw std::invalid_argument("data.source must be synthetic, container, or cifar10");
  }
  s.data_path = doc.get_string("data.path", "");
  s.eval_path = doc.get_string("data.eval_path", "");
  s.attacker_path = doc.get_string("data.attacker_path", "");
  s.classes = static_cast<int>(doc.get_int("data.classes", s.classes));
  s.per_class = static_cast<int>(doc.get_int("data.per_class", s.per_class));
  s.height = static_cast<int>(doc.get_int("data.height", s.height));
  s.width = static_cast<int>(doc.get_int("data.width", s.width));
  s.channels = static_cast<int>(doc.get_int("data.channels", s.channels));
  s.eval_count = static_cast<int>(doc.get_int("data.eval_count", s.eval_count));
  s.distractors = static_cast<int>(doc.get_int("data.distractors", s.distractors));
  s.attacker_pool = static_cast<int>(doc.get_int("data.attacker_pool", s.attacker_pool));

  if (doc.has("model.blocks")) s.blocks = detail::parse_int_list(doc.get_list("model.blocks", {}), "model.blocks");
  s.epochs = static_cast<int>(doc.get_int("model.epochs", s.epochs));
  s.lr = doc.get_double("model.lr", s.lr);
  s.momentum = doc.get_double("model.momentum", s.momentum);
  s.checkpoint_path = doc.get_string("model.checkpoint", "");
  if (doc.has("model.blocks_b")) {
    s.blocks_b = detail::parse_int_list(doc.get_list("model.blocks_b", {}), "model.blocks_b");
  }
  s.checkpoint_b_path = doc.get_string("model.checkpoint_b", "");

  s.defense.k = static_cast<int>(doc.get_int("defense.k", 50));
  s.defense.weighting = parse_weighting(doc.get_string("defense.weighting", "cbw-d"));
  s.defense.combination = parse_combination(doc.get_string("defense.combination", "soft"));
  s.defense.m = static_cast<int>(doc.get_int("defense.m", 20));
  s.defense.p = static_cast<int>(doc.get_int("defense.p", 3));
  s.layer = static_cast<int>(doc.get_int("defense.layer", 0));
  s.pca_dim = static_cast<int>(doc.get_int("defense.pca_dim", 32));
  s.pca_sample_cap = static_cast<int>(doc.get_int("defense.pca_sample_cap", 0));
  const std::string index_kind = doc.get_string("defense.index", "flat");
  if (index_kind == "flat") {
    s.index.kind = IndexHandle::Kind::kFlat;
  } else if (index_kind == "ivfpq") {
    s.index.kind = IndexHandle::Kind::kIvfPq;
  } else {
    throw std::invalid_argument("defense.index must be flat or ivfpq");
  }
  s.index.nlist = static_cast<int>(doc.get_int("defense.nlist", 64));
  s.index.pq_m = static_cast<int>(doc.get_int("defense.pq_m", 8));
  s.index.pq_bits = static_cast<int>(doc.get_int("defense.pq_bits", 8));
  s.index.nprobe = static_cast<int>(doc.get_int("defense.nprobe", 16));

  s.curation.mode = parse_curation(doc.get_string("curation.mode", "targeted"));
  s.curation.distractor_fraction = doc.get_double("curation.distractor_fraction", 0.0);
  s.db_fraction = doc.get_double("curation.db_fraction", 1.0);
  s.curation.db_size = static_cast<size_t>(doc.get_int("curation.db_size", 0));
  s.curation.overlap = doc.get_double("curation.overlap", 1.0);
  s.attack_db_size = static_cast<size_t>(doc.get_int("curation.attack_db_size", 0));

  s.attack.method = parse_attack(doc.get_string("attack.method", "pgd"));
  s.attack.epsilon_rel = doc.get_double("attack.budget", 0.06);
  s.attack.iters = static_cast<int>(doc.get_int("attack.iters", 10));
  s.attack.alpha = doc.get_double("attack.alpha", 0.0);
  s.attack.restarts = static_cast<int>(doc.get_int("attack.restarts", 1));
  s.attack.kappa = doc.get_double("attack.kappa", 0.0);
  s.attack.lambda_f = doc.get_double("attack.lambda", 1.0);
  s.attack.cw_steps = static_cast<int>(doc.get_int("attack.cw_steps", 100));
  s.attack.cw_lr = doc.get_double("attack.cw_lr", 0.01);
  s.attack.gamma = doc.get_double("attack.gamma", 0.05);
  s.attack.k_attack = static_cast<int>(doc.get_int("attack.k_attack", 50));

  s.axis = doc.get_string("sweep.axis", s.axis);
  s.grid = doc.get_list("sweep.grid", {});
  s.svg = doc.get_bool("sweep.svg", false);
  s.svg_x = doc.get_string("sweep.svg_x", s.svg_x);
  s.svg_y = doc.get_string("sweep.svg_y", s.svg_y);
  s.svg_series = doc.get_string("sweep.svg_series", s.svg_series);

  if (s.classes < 2) throw std::invalid_argument("data.classes must be >= 2");
  if (s.eval_count < 1) throw std::invalid_argument("data.eval_count must be >= 1");
  if (s.threads < 1) throw std::invalid_argument("experiment.threads must be >= 1");
  if (s.db_fraction <= 0.0 || s.db_fraction > 1.0) {
    throw std::invalid_argument("curation.db_fraction must be in (0, 1]");
  }
  s.defense.validate();
  s.curation.validate();
  return s;
}

// All trained/generated inputs shared by the rows of one experiment.
struct ExperimentMaterials {
  Dataset db_source;  // task images first, then the distractor pool
  Dataset eval_set;
  Dataset attacker_pool;
  Checkpoint model_a;  // defense model (and gray-box attack model)
  Checkpoint model_b;  // black-box surrogate, trained only when needed
  bool has_model_b = false;
  size_t task_count = 0;  // in-task entries at the front of db_source
};

namespace detail {

inline Dataset trimmed_synthetic(int classes, int total, int h, int w, int channels, uint64_t seed,
                                 float hard_fraction, float band_fraction = 0.25f) {
  if (total <= 0) {
    Dataset empty;
    empty.classes = classes;
    empty.h = h;
    empty.w = w;
    empty.channels = channels;
    return empty;
  }
  const int per_class = (total + classes - 1) / classes;
  Dataset ds = generate_synthetic(classes, per_class, h, w, seed, channels, hard_fraction, band_fraction);
  // Trim class-by-class round robin so the truncated set stays balanced.
  Dataset out;
  out.classes = classes;
  out.h = h;
  out.w = w;
  out.channels = channels;
  out.split = ds.split;
  for (int r = 0; r < per_class && static_cast<int>(out.size()) < total; ++r) {
    for (int c = 0; c < classes && static_cast<int>(out.size()) < total; ++c) {
      const size_t idx = static_cast<size_t>(c) * per_class + r;
      out.images.push_back(ds.images[idx]);
      out.labels.push_back(ds.labels[idx]);
    }
  }
  return out;
}

inline void append_dataset(Dataset& dst, const Dataset& src) {
  for (size_t i = 0; i < src.size(); ++i) {
    dst.images.push_back(src.images[i]);
    dst.labels.push_back(src.labels[i]);
  }
}

}  // namespace detail

inline int resolve_layer(const ExperimentSpec& spec) {
  const int blocks = static_cast<int>(spec.blocks.size());
  if (spec.layer == 0) return blocks;
  if (spec.layer < 1 || spec.layer > blocks) {
    throw std::invalid_argument("defense.layer " + std::to_string(spec.layer) + " out of range [1, " +
                                std::to_string(blocks) + "]");
  }
  return spec.layer;
}

inline ExperimentMaterials prepare_materials(const ExperimentSpec& spec) {
  ExperimentMaterials mats;
  if (spec.data_source == "synthetic") {
    mats.db_source = generate_synthetic(spec.classes, spec.per_class, spec.height, spec.width,
                                        mix_seed(spec.seed, 0xdb), spec.channels);
    mats.task_count = mats.db_source.size();
    Dataset distractors = generate_distractors(spec.classes, spec.distractors, spec.height, spec.width,
                                               mix_seed(spec.seed, 0xd1), spec.channels);
    detail::append_dataset(mats.db_source, distractors);
    // Evaluation images are always classifiable; the patternless tail
    // models database noise, not benchmark inputs.
    mats.eval_set = detail::trimmed_synthetic(spec.classes, spec.eval_count, spec.height, spec.width,
                                              spec.channels, mix_seed(spec.seed, 0xe7), 0.0f);
    mats.eval_set.split = "eval";
    mats.attacker_pool = detail::trimmed_synthetic(spec.classes, spec.attacker_pool, spec.height,
                                                   spec.width, spec.channels, mix_seed(spec.seed, 0xa7),
                                                   0.12f);
    mats.attacker_pool.split = "attacker";
  } else {
    if (spec.data_path.empty()) throw std::invalid_argument("data.path required for file data sources");
    if (spec.eval_path.empty()) throw std::invalid_argument("data.eval_path required for file data sources");
    const DatasetFormat fmt = spec.data_source == "cifar10" ? DatasetFormat::kCifar10Binary
                                                            : DatasetFormat::kContainer;
    mats.db_source = load_dataset(spec.data_path, fmt);
    mats.eval_set = load_dataset(spec.eval_path, fmt);
    mats.task_count = 0;
    for (size_t i = 0; i < mats.db_source.size(); ++i) {
      if (mats.db_source.labels[i] < mats.db_source.classes) ++mats.task_count;
    }
    if (!spec.attacker_path.empty()) mats.attacker_pool = load_dataset(spec.attacker_path, fmt);
  }

  std::vector<Tensor> train_images;
  std::vector<int> train_labels;
  for (size_t i = 0; i < mats.db_source.size(); ++i) {
    if (mats.db_source.labels[i] < mats.db_source.classes) {
      train_images.push_back(mats.db_source.images[i]);
      train_labels.push_back(mats.db_source.labels[i]);
    }
  }

  ModelConfig cfg_a;
  cfg_a.blocks = static_cast<int>(spec.blocks.size());
  cfg_a.channels = spec.blocks;
  cfg_a.classes = mats.db_source.classes;
  cfg_a.in_h = mats.db_source.h;
  cfg_a.in_w = mats.db_source.w;
  cfg_a.in_c = mats.db_source.channels;
  if (!spec.checkpoint_path.empty()) {
    mats.model_a = load_checkpoint(spec.checkpoint_path);
  } else {
    mats.model_a = train(train_images, train_labels, cfg_a, spec.epochs,
                         static_cast<float>(spec.lr), static_cast<float>(spec.momentum),
                         mix_seed(spec.seed, 0xa))
                       .checkpoint;
  }

  if (spec.threat == ThreatModel::Kind::kBlack) {
    if (!spec.checkpoint_b_path.empty()) {
      mats.model_b = load_checkpoint(spec.checkpoint_b_path);
    } else {
      ModelConfig cfg_b = cfg_a;
      cfg_b.blocks = static_cast<int>(spec.blocks_b.size());
      cfg_b.channels = spec.blocks_b;
      mats.model_b = train(train_images, train_labels, cfg_b, spec.epochs,
                           static_cast<float>(spec.lr), static_cast<float>(spec.momentum),
                           mix_seed(spec.seed, 0xb))
                         .checkpoint;
    }
    mats.has_model_b = true;
  }
  return mats;
}

// One materialized row configuration, before databases are built.
struct RowPlan {
  AttackSpec attack;
  DefenseConfig defense;
  CurationSpec curation;
  double db_fraction = 1.0;
  size_t attack_db_size = 0;
  double attack_db_size_fraction = 0.0;  // > 0: size relative to the defense db
  int layer = 0;
};

namespace detail {

inline RowPlan base_plan(const ExperimentSpec& spec) {
  RowPlan plan;
  plan.attack = spec.attack;
  plan.defense = spec.defense;
  plan.curation = spec.curation;
  plan.db_fraction = spec.db_fraction;
  plan.attack_db_size = spec.attack_db_size;
  plan.layer = resolve_layer(spec);
  return plan;
}

inline std::vector<std::string> default_grid(const std::string& axis, const ExperimentSpec& spec) {
  if (axis == "K") return {"1", "2", "5", "10", "20", "50"};
  if (axis == "budget") return {"0", "0.02", "0.04", "0.06", "0.08"};
  if (axis == "layer") {
    std::vector<std::string> out;
    for (size_t b = 1; b <= spec.blocks.size(); ++b) out.push_back(std::to_string(b));
    return out;
  }
  if (axis == "db_size" || axis == "attack_db_size") return {"0.125", "0.25", "0.5", "1.0"};
  if (axis == "overlap") return {"0", "0.5", "1.0"};
  if (axis == "weighting") return {"uw", "cbw-e", "cbw-d"};
  if (axis == "combination") return {"soft", "hard"};
  if (axis == "attack_method") return {"fgsm", "pgd", "cw"};
  throw std::invalid_argument("unknown sweep axis '" + axis + "'");
}

inline double parse_grid_double(const std::string& v, const std::string& axis) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("sweep axis " + axis + ": bad numeric grid value '" + v + "'");
  }
}

// Applies one grid value; throws on invalid values so a sweep rejects its
// whole grid before any row runs.
inline void apply_axis(RowPlan& plan, const std::string& axis, const std::string& value,
                       const ExperimentSpec& spec) {
  if (axis == "K") {
    const double k = parse_grid_double(value, axis);
    if (k < 1 || k != std::floor(k)) throw std::invalid_argument("sweep axis K: bad value '" + value + "'");
    plan.defense.k = static_cast<int>(k);
  } else if (axis == "budget") {
    const double eps = parse_grid_double(value, axis);
    if (eps < 0) throw std::invalid_argument("sweep axis budget: negative value");
    plan.attack.epsilon_rel = eps;
  } else if (axis == "layer") {
    const double l = parse_grid_double(value, axis);
    if (l < 1 || l > static_cast<double>(spec.blocks.size()) || l != std::floor(l)) {
      throw std::invalid_argument("sweep axis layer: bad value '" + value + "'");
    }
    plan.layer = static_cast<int>(l);
  } else if (axis == "db_size") {
    const double f = parse_grid_double(value, axis);
    if (f <= 0.0 || f > 1.0) throw std::invalid_argument("sweep axis db_size: fraction out of (0, 1]");
    plan.db_fraction = f;
  } else if (axis == "attack_db_size") {
    const double f = parse_grid_double(value, axis);
    if (f <= 0.0 || f > 1.0) {
      throw std::invalid_argument("sweep axis attack_db_size: fraction out of (0, 1]");
    }
    plan.attack_db_size = 0;  // resolved later against the defense db size
    plan.attack_db_size_fraction = f;
  } else if (axis == "overlap") {
    const double f = parse_grid_double(value, axis);
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("sweep axis overlap: value out of [0, 1]");
    plan.curation.overlap = f;
  } else if (axis == "weighting") {
    plan.defense.weighting = parse_weighting(value);
  } else if (axis == "combination") {
    plan.defense.combination = parse_combination(value);
  } else if (axis == "attack_method") {
    plan.attack.method = parse_attack(value);
  } else {
    throw std::invalid_argument("unknown sweep axis '" + axis + "'");
  }
}

}  // namespace detail

// Executes experiments with caching: defense databases, attack databases, and
// adversarial image sets are shared between rows with identical signatures,
// so defense-only sweeps (K, weighting, ...) attack each image exactly once.
class ExperimentRunner {
 public:
  ExperimentRunner(const ExperimentSpec& spec, const ExperimentMaterials& mats)
      : spec_(spec), mats_(mats) {}

  ExperimentRow run_row(const RowPlan& plan) {
    CurationSpec curation = plan.curation;
    if (curation.db_size == 0 && plan.db_fraction < 1.0) {
      curation.db_size = static_cast<size_t>(
          std::llround(plan.db_fraction * static_cast<double>(mats_.task_count)));
      curation.db_size = std::max<size_t>(1, curation.db_size);
    }
    const std::string db_key = defense_db_key(plan, curation);
    std::shared_ptr<DefenseDb> defense = defense_cache_[db_key];
    if (!defense) {
      defense = std::make_shared<DefenseDb>(
          build_defense_db(mats_.db_source, curation, mats_.model_a, plan.layer, spec_.pca_dim,
                           spec_.index, static_cast<size_t>(spec_.pca_sample_cap), spec_.seed));
      defense_cache_[db_key] = defense;
    }

    std::shared_ptr<AttackDatabase> attack_db;
    if (spec_.threat == ThreatModel::Kind::kWhite) {
      size_t size = plan.attack_db_size;
      if (plan.attack_db_size_fraction > 0.0) {
        size = std::max<size_t>(1, static_cast<size_t>(std::llround(
                                       plan.attack_db_size_fraction *
                                       static_cast<double>(defense->ids.size()))));
      }
      const std::string atk_key = db_key + "|ov=" + std::to_string(curation.overlap) +
                                  "|sz=" + std::to_string(size);
      attack_db = attack_cache_[atk_key];
      if (!attack_db) {
        attack_db = std::make_shared<AttackDatabase>(
            build_attack_db(mats_.db_source, *defense, curation.overlap, mats_.attacker_pool,
                            mats_.model_a, size));
        attack_cache_[atk_key] = attack_db;
      }
    }

    EvalRequest req;
    req.experiment_id = spec_.id;
    req.eval_set = &mats_.eval_set;
    req.threat.kind = spec_.threat;
    req.threat.defense_model = &mats_.model_a;
    req.threat.attack_model = spec_.threat == ThreatModel::Kind::kBlack ? &mats_.model_b : &mats_.model_a;
    req.threat.attack_db = attack_db.get();
    req.attack = plan.attack;
    req.defense = defense.get();
    req.defense_config = plan.defense;
    req.curation = curation.mode;
    req.overlap = curation.overlap;
    req.layer = plan.layer;
    req.seed = spec_.seed;
    req.threads = spec_.threads;

    const std::string attack_key = adversarial_key(req, db_key);
    std::shared_ptr<std::vector<Tensor>> adv = adversarial_cache_[attack_key];
    if (!adv) {
      adv = std::make_shared<std::vector<Tensor>>(
          craft_adversarial(mats_.eval_set, req.threat, req.attack, spec_.seed, spec_.threads));
      adversarial_cache_[attack_key] = adv;
    }
    return run_eval(req, adv.get());
  }

  std::vector<ExperimentRow> run_sweep() {
    std::vector<std::string> grid = spec_.grid;
    if (grid.empty()) grid = detail::default_grid(spec_.axis, spec_);
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    // Validate the whole grid before any row runs.
    std::vector<RowPlan> plans;
    for (const std::string& value : grid) {
      RowPlan plan = detail::base_plan(spec_);
      detail::apply_axis(plan, spec_.axis, value, spec_);
      plans.push_back(plan);
    }
    std::vector<ExperimentRow> rows;
    rows.reserve(plans.size());
    for (const RowPlan& plan : plans) rows.push_back(run_row(plan));
    return rows;
  }

  ExperimentRow run_single() { return run_row(detail::base_plan(spec_)); }

 private:
  std::string defense_db_key(const RowPlan& plan, const CurationSpec& curation) const {
    std::ostringstream os;
    os << "layer=" << plan.layer << "|mode=" << curation_name(curation.mode)
       << "|df=" << curation.distractor_fraction << "|size=" << curation.db_size
       << "|pca=" << spec_.pca_dim << "|idx=" << static_cast<int>(spec_.index.kind);
    return os.str();
  }

  std::string adversarial_key(const EvalRequest& req, const std::string& db_key) const {
    std::ostringstream os;
    os << attack_name(req.attack.method) << "|eps=" << req.attack.epsilon_rel
       << "|it=" << req.attack.iters << "|a=" << req.attack.alpha << "|r=" << req.attack.restarts
       << "|cw=" << req.attack.kappa << "," << req.attack.lambda_f << "," << req.attack.cw_steps << ","
       << req.attack.cw_lr << "|g=" << req.attack.gamma << "|ka=" << req.attack.k_attack
       << "|seed=" << req.seed << "|threat=" << threat_name(req.threat.kind);
    if (attack_needs_database(req.attack.method)) {
      os << "|db=" << db_key << "|ov=" << req.overlap << "|adb="
         << (req.threat.attack_db ? req.threat.attack_db->ids.size() : 0);
    }
    return os.str();
  }

  const ExperimentSpec& spec_;
  const ExperimentMaterials& mats_;
  std::map<std::string, std::shared_ptr<DefenseDb>> defense_cache_;
  std::map<std::string, std::shared_ptr<AttackDatabase>> attack_cache_;
  std::map<std::string, std::shared_ptr<std::vector<Tensor>>> adversarial_cache_;
};

}  // namespace kshield
