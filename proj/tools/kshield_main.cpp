// kshield command-line tool: every pipeline stage as a subcommand, so a full
// experiment is a sequence of reproducible commands. Exit codes: 0 success,
// 2 usage errors, 1 runtime errors (cause on stderr).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kshield/kshield.hpp"

namespace fs = std::filesystem;
using namespace kshield;

namespace {

std::vector<int> parse_arch(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (out.size() < 2) throw std::invalid_argument("--arch needs at least 2 comma-separated channel counts");
  return out;
}

struct GenDataArgs {
  int classes = 4, per_class = 128, height = 16, width = 16, channels = 3, distractors = 0;
  uint64_t seed = 7;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  Dataset ds = generate_synthetic(a.classes, a.per_class, a.height, a.width, a.seed, a.channels);
  if (a.distractors > 0) {
    Dataset dis = generate_distractors(a.classes, a.distractors, a.height, a.width, a.seed, a.channels);
    for (size_t i = 0; i < dis.size(); ++i) {
      ds.images.push_back(dis.images[i]);
      ds.labels.push_back(dis.labels[i]);
    }
  }
  save_container(ds, a.out);
  std::cout << "wrote " << ds.size() << " images (" << a.classes << " classes, " << a.distractors
            << " distractors) to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, format = "container", arch = "16,32,64,128", out;
  int epochs = 10;
  double lr = 0.05, momentum = 0.9;
  uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
  Dataset ds = load_dataset(a.data, parse_dataset_format(a.format));
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < ds.classes) {
      images.push_back(ds.images[i]);
      labels.push_back(ds.labels[i]);
    }
  }
  ModelConfig cfg;
  cfg.channels = parse_arch(a.arch);
  cfg.blocks = static_cast<int>(cfg.channels.size());
  cfg.classes = ds.classes;
  cfg.in_h = ds.h;
  cfg.in_w = ds.w;
  cfg.in_c = ds.channels;
  TrainReport report = train(images, labels, cfg, a.epochs, static_cast<float>(a.lr),
                             static_cast<float>(a.momentum), a.seed);
  save_checkpoint(report.checkpoint, a.out);
  std::cout << "trained " << a.epochs << " epochs on " << images.size()
            << " images; train accuracy " << report.train_accuracy << "; wrote " << a.out << "\n";
  return 0;
}

struct BuildDbArgs {
  std::string data, format = "container", model, out;
  std::string curation = "targeted", index = "flat";
  int layer = 0, pca_dim = 32, pca_sample_cap = 0;
  double distractor_fraction = 0.0;
  uint64_t db_size = 0, seed = 0;
  int nlist = 64, pq_m = 8, pq_bits = 8, nprobe = 16;
  bool with_images = false;
};

int cmd_build_db(const BuildDbArgs& a) {
  Dataset ds = load_dataset(a.data, parse_dataset_format(a.format));
  Checkpoint model = load_checkpoint(a.model);
  const int layer = a.layer == 0 ? model.config.blocks : a.layer;

  CurationSpec curation;
  curation.mode = parse_curation(a.curation);
  curation.distractor_fraction = a.distractor_fraction;
  curation.db_size = static_cast<size_t>(a.db_size);
  std::vector<uint64_t> picked = curate_ids(ds, curation);
  if (picked.empty()) throw std::runtime_error("curation selected no images");

  // Databases on disk are self-contained: ids are positions in the curated
  // order, which is also the order of images.ksd when written.
  Dataset curated;
  curated.classes = ds.classes;
  curated.h = ds.h;
  curated.w = ds.w;
  curated.channels = ds.channels;
  curated.split = "db";
  for (uint64_t id : picked) {
    curated.images.push_back(ds.images[static_cast<size_t>(id)]);
    curated.labels.push_back(ds.labels[static_cast<size_t>(id)]);
  }
  std::vector<uint64_t> ids(curated.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;

  FeaturePipeline pipeline = detail::fit_pipeline(model, curated, ids, layer, a.pca_dim,
                                                  static_cast<size_t>(a.pca_sample_cap));
  std::vector<std::vector<float>> descriptors;
  PredictionStore store(model.config.classes);
  for (uint64_t id : ids) {
    const Tensor& img = curated.images[static_cast<size_t>(id)];
    descriptors.push_back(extract_descriptor(model, pipeline, img));
    store.put(id, predict_softmax(model, img));
  }
  IndexSpec index_spec;
  index_spec.kind = a.index == "ivfpq" ? IndexHandle::Kind::kIvfPq : IndexHandle::Kind::kFlat;
  index_spec.nlist = a.nlist;
  index_spec.pq_m = a.pq_m;
  index_spec.pq_bits = a.pq_bits;
  index_spec.nprobe = a.nprobe;
  IndexHandle index = detail::build_index(descriptors, ids, index_spec, a.seed);
  for (uint64_t id : ids) {
    if (!store.contains(id)) throw std::runtime_error("coverage gap for id " + std::to_string(id));
  }

  fs::create_directories(a.out);
  index_save(index, (fs::path(a.out) / "index.ksidx").string());
  save_pca(pipeline.pca, (fs::path(a.out) / "pca.kspca").string());
  store_save(store, (fs::path(a.out) / "store.kskv").string());
  if (a.with_images) save_container(curated, (fs::path(a.out) / "images.ksd").string());
  std::cout << "built " << a.index << " database with " << ids.size() << " entries (layer " << layer
            << ", pca " << pipeline.pca.d_out << ") in " << a.out << "\n";
  return 0;
}

struct AttackArgs {
  std::string model, data, format = "container", method = "pgd", attack_db, out;
  double budget = 0.06, alpha = 0.0;
  int iters = 10, restarts = 1, threads = 1;
  double kappa = 0.0, lambda = 1.0, cw_lr = 0.01;
  int cw_steps = 100;
  double gamma = 0.05;
  int k_attack = 50;
  uint64_t seed = 7;
};

int cmd_attack(const AttackArgs& a) {
  Dataset ds = load_dataset(a.data, parse_dataset_format(a.format));
  ds.validate_task_labels();
  Checkpoint model = load_checkpoint(a.model);

  AttackSpec attack;
  attack.method = parse_attack(a.method);
  attack.epsilon_rel = a.budget;
  attack.iters = a.iters;
  attack.alpha = a.alpha;
  attack.restarts = a.restarts;
  attack.kappa = a.kappa;
  attack.lambda_f = a.lambda;
  attack.cw_steps = a.cw_steps;
  attack.cw_lr = a.cw_lr;
  attack.gamma = a.gamma;
  attack.k_attack = a.k_attack;

  AttackDatabase attack_db;
  ThreatModel threat;
  threat.attack_model = &model;
  threat.defense_model = &model;
  if (!a.attack_db.empty()) {
    attack_db.feature_model = model;
    attack_db.index = index_load((fs::path(a.attack_db) / "index.ksidx").string());
    attack_db.pipeline.pca = load_pca((fs::path(a.attack_db) / "pca.kspca").string());
    Dataset db_images = load_container((fs::path(a.attack_db) / "images.ksd").string());
    attack_db.images = std::move(db_images.images);
    attack_db.ids.resize(attack_db.images.size());
    for (size_t i = 0; i < attack_db.ids.size(); ++i) attack_db.ids[i] = i;
    // Recover the pool spec: the pooled dim must match the stored PCA input.
    bool matched = false;
    for (int layer = model.config.blocks; layer >= 1 && !matched; --layer) {
      PoolSpec pool = default_pool_spec(model.config, layer);
      Shape tap = model.config.tap_shape(layer);
      if (tap[0] * pool.target_h * pool.target_w == attack_db.pipeline.pca.d_in) {
        attack_db.pipeline.pool = pool;
        matched = true;
      }
    }
    if (!matched) throw std::runtime_error("attack db PCA dims do not match any tap of --model");
    threat.kind = ThreatModel::Kind::kWhite;
    threat.attack_db = &attack_db;
  } else {
    threat.kind = ThreatModel::Kind::kGray;
  }

  std::vector<Tensor> adversarial = craft_adversarial(ds, threat, attack, a.seed, a.threads);

  Dataset out_ds = ds;
  out_ds.images = adversarial;
  out_ds.split = "adversarial";
  fs::create_directories(a.out);
  save_container(out_ds, (fs::path(a.out) / "adversarial.ksd").string());

  std::ofstream csv((fs::path(a.out) / "attack.csv").string(), std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write attack.csv");
  csv << "index,label,delta,success\n";
  size_t flipped = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const double delta = normalized_l2(ds.images[i], adversarial[i]);
    const bool success = predict_class(model, adversarial[i]) != ds.labels[i];
    flipped += success;
    char buf[64];
    snprintf(buf, sizeof(buf), "%zu,%d,", i, ds.labels[i]);
    csv << buf;
    char dbuf[32];
    auto [p, ec] = std::to_chars(dbuf, dbuf + sizeof(dbuf), delta);
    (void)ec;
    csv << std::string(dbuf, p) << "," << (success ? 1 : 0) << "\n";
  }
  csv.close();
  std::cout << "attacked " << ds.size() << " images with " << a.method << " at budget " << a.budget
            << "; model misclassifies " << flipped << "; wrote " << a.out << "\n";
  return 0;
}

struct RunArgs {
  std::string config, out;
  int threads = 0;       // 0: keep config value
  long long seed = -1;   // <0: keep config value
};

int run_config(const RunArgs& a, bool sweep_mode) {
  ConfigDocument doc = ConfigDocument::parse_file(a.config);
  ExperimentSpec spec = parse_experiment_spec(doc);
  if (a.threads > 0) spec.threads = a.threads;
  if (a.seed >= 0) spec.seed = static_cast<uint64_t>(a.seed);

  ExperimentMaterials mats = prepare_materials(spec);
  ExperimentRunner runner(spec, mats);
  std::vector<ExperimentRow> rows;
  if (sweep_mode) {
    rows = runner.run_sweep();
  } else {
    rows.push_back(runner.run_single());
  }

  fs::create_directories(a.out);
  const std::string csv_path = (fs::path(a.out) / "results.csv").string();
  write_csv(rows, csv_path);
  for (const ExperimentRow& r : rows) {
    std::cout << r.experiment_id << " " << r.threat << " " << r.attack << " eps=" << r.epsilon_rel
              << " k=" << r.k << " " << r.weighting << "/" << r.combination << " layer=" << r.layer
              << " db=" << r.db_size << " clean=" << r.clean_accuracy
              << " defended=" << r.attacked_accuracy << " undefended=" << r.undefended_attacked_accuracy
              << "\n";
  }
  if (sweep_mode && spec.svg) {
    plot_svg(rows, spec.svg_x, spec.svg_y, spec.svg_series,
             (fs::path(a.out) / "sweep.svg").string());
  }
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nearest-neighbor defense workbench: train, index, attack, evaluate"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset container");
  gen_cmd->add_option("--classes", gen.classes, "task class count")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "images per class")->capture_default_str();
  gen_cmd->add_option("--height", gen.height, "image height")->capture_default_str();
  gen_cmd->add_option("--width", gen.width, "image width")->capture_default_str();
  gen_cmd->add_option("--channels", gen.channels, "image channels")->capture_default_str();
  gen_cmd->add_option("--distractors", gen.distractors, "out-of-task images to append")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output container path")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train the classifier");
  train_cmd->add_option("--data", tr.data, "training dataset path")->required();
  train_cmd->add_option("--format", tr.format, "dataset format: container or cifar10")->capture_default_str();
  train_cmd->add_option("--arch", tr.arch, "comma-separated channels per block")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tr.momentum, "SGD momentum")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "training seed")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "output checkpoint path")->required();

  BuildDbArgs db;
  CLI::App* db_cmd = app.add_subcommand("build-db", "build a retrieval database (index, pca, store)");
  db_cmd->add_option("--data", db.data, "source dataset path")->required();
  db_cmd->add_option("--format", db.format, "dataset format: container or cifar10")->capture_default_str();
  db_cmd->add_option("--model", db.model, "checkpoint path")->required();
  db_cmd->add_option("--layer", db.layer, "feature tap block id (0 = deepest)")->capture_default_str();
  db_cmd->add_option("--pca-dim", db.pca_dim, "descriptor dimensionality")->capture_default_str();
  db_cmd->add_option("--pca-sample-cap", db.pca_sample_cap, "max PCA fit samples (0 = all)")
      ->capture_default_str();
  db_cmd->add_option("--index", db.index, "index type: flat or ivfpq")->capture_default_str();
  db_cmd->add_option("--nlist", db.nlist, "ivfpq coarse centroid count")->capture_default_str();
  db_cmd->add_option("--pq-m", db.pq_m, "ivfpq subquantizer count")->capture_default_str();
  db_cmd->add_option("--pq-bits", db.pq_bits, "ivfpq bits per subquantizer")->capture_default_str();
  db_cmd->add_option("--nprobe", db.nprobe, "ivfpq probed list count")->capture_default_str();
  db_cmd->add_option("--curation", db.curation, "curation mode: targeted or all")->capture_default_str();
  db_cmd->add_option("--distractor-fraction", db.distractor_fraction, "distractor share in all mode")
      ->capture_default_str();
  db_cmd->add_option("--db-size", db.db_size, "database size cap (0 = all selected)")->capture_default_str();
  db_cmd->add_flag("--with-images", db.with_images, "also write images.ksd for attack databases");
  db_cmd->add_option("--seed", db.seed, "index training seed")->capture_default_str();
  db_cmd->add_option("--out", db.out, "output directory")->required();

  AttackArgs atk;
  CLI::App* atk_cmd = app.add_subcommand("attack", "craft adversarial images");
  atk_cmd->add_option("--model", atk.model, "checkpoint path")->required();
  atk_cmd->add_option("--data", atk.data, "dataset to attack")->required();
  atk_cmd->add_option("--format", atk.format, "dataset format: container or cifar10")->capture_default_str();
  atk_cmd->add_option("--method", atk.method, "fgsm, ifgsm, pgd, cw, pgd-pr, pgd-fs")->capture_default_str();
  atk_cmd->add_option("--budget", atk.budget, "normalized L2 budget")->capture_default_str();
  atk_cmd->add_option("--iters", atk.iters, "attack iterations")->capture_default_str();
  atk_cmd->add_option("--alpha", atk.alpha, "step size (0 = auto)")->capture_default_str();
  atk_cmd->add_option("--restarts", atk.restarts, "random restarts")->capture_default_str();
  atk_cmd->add_option("--kappa", atk.kappa, "cw margin")->capture_default_str();
  atk_cmd->add_option("--lambda", atk.lambda, "cw loss weight")->capture_default_str();
  atk_cmd->add_option("--cw-steps", atk.cw_steps, "cw descent steps")->capture_default_str();
  atk_cmd->add_option("--cw-lr", atk.cw_lr, "cw learning rate")->capture_default_str();
  atk_cmd->add_option("--gamma", atk.gamma, "neighbor-loss weight (pgd-pr)")->capture_default_str();
  atk_cmd->add_option("--k-attack", atk.k_attack, "attack neighbor count")->capture_default_str();
  atk_cmd->add_option("--attack-db", atk.attack_db, "attack database dir (required for pgd-pr, pgd-fs)");
  atk_cmd->add_option("--seed", atk.seed, "attack seed")->capture_default_str();
  atk_cmd->add_option("--threads", atk.threads, "worker threads")->capture_default_str();
  atk_cmd->add_option("--out", atk.out, "output directory")->required();

  RunArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "run one evaluation row from a config file");
  eval_cmd->add_option("--config", ev.config, "experiment config path")->required();
  eval_cmd->add_option("--out", ev.out, "output directory")->required();
  eval_cmd->add_option("--threads", ev.threads, "worker threads (overrides config)")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "seed override (overrides config)")->capture_default_str();

  RunArgs sw;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a sweep axis from a config file");
  sweep_cmd->add_option("--config", sw.config, "experiment config path")->required();
  sweep_cmd->add_option("--out", sw.out, "output directory")->required();
  sweep_cmd->add_option("--threads", sw.threads, "worker threads (overrides config)")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "seed override (overrides config)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*db_cmd) return cmd_build_db(db);
    if (*atk_cmd) {
      if (attack_needs_database(parse_attack(atk.method)) && atk.attack_db.empty()) {
        std::cerr << "error: --method " << atk.method << " requires --attack-db\n";
        return 2;
      }
      return cmd_attack(atk);
    }
    if (*eval_cmd) return run_config(ev, false);
    if (*sweep_cmd) return run_config(sw, true);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
