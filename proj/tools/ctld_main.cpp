#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctld/checkpoint.hpp"
#include "ctld/error.hpp"
#include "ctld/evalkit.hpp"
#include "ctld/model.hpp"
#include "ctld/png_io.hpp"
#include "ctld/synthfaces.hpp"
#include "ctld/trainer.hpp"

namespace fs = std::filesystem;
using namespace ctld;

namespace {

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad config file: " + std::string(e.what()));
  }
}

// Training options shared by train-source, train-target and compare.
// A --config JSON provides defaults; explicitly passed flags override it.
struct TrainFlags {
  std::string config_path;
  std::string variant = "FT";
  int epochs = 150;
  int batch = 2;
  double lr = 1e-3, lr_power = 0.9, lr_end = 0.0;
  double lambda = 0.002, mu = 2.0;
  bool ed_sum = false, freeze_cls = false, no_augment = false;
  double flip_prob = 0.5, scale_min = 0.8, scale_max = 1.25;
  std::uint64_t seed = 0;
  int classes = -1;

  void attach(CLI::App* app, bool with_variant) {
    app->add_option("--config", config_path, "JSON config file (flags override it)");
    if (with_variant)
      app->add_option("--variant", variant, "FE, FTP, FT, CTD-CD, CTD-ED or CTD-Com");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch", batch, "mini-batch size");
    app->add_option("--lr", lr, "initial learning rate (polynomial decay)");
    app->add_option("--lr-power", lr_power, "polynomial decay power");
    app->add_option("--lr-end", lr_end, "final learning rate");
    app->add_option("--lambda", lambda, "regularizer weight");
    app->add_option("--mu", mu, "softmax temperature");
    app->add_flag("--ed-sum", ed_sum, "use the per-batch sum in the cosine loss");
    app->add_flag("--freeze-target-classifier", freeze_cls, "freeze the retained classifier head");
    app->add_flag("--no-augment", no_augment, "disable flip/scale augmentation");
    app->add_option("--flip-prob", flip_prob, "horizontal flip probability");
    app->add_option("--scale-min", scale_min, "scale augmentation lower bound");
    app->add_option("--scale-max", scale_max, "scale augmentation upper bound");
    app->add_option("--seed", seed, "RNG seed");
    app->add_option("--classes", classes, "expected class count (checked against the manifest)");
  }

  TrainConfig resolve(const CLI::App* app, bool with_variant, int default_epochs) const {
    TrainConfig cfg;
    cfg.epochs = default_epochs;
    if (!config_path.empty()) cfg = train_config_from_json(read_json_file(config_path));
    if (with_variant && app->count("--variant")) cfg.variant = variant_from_string(variant);
    if (app->count("--epochs")) cfg.epochs = epochs;
    if (app->count("--batch")) cfg.batch_size = batch;
    if (app->count("--lr")) cfg.lr_initial = lr;
    if (app->count("--lr-power")) cfg.lr_power = lr_power;
    if (app->count("--lr-end")) cfg.lr_end = lr_end;
    if (app->count("--lambda")) cfg.lambda = static_cast<float>(lambda);
    if (app->count("--mu")) cfg.mu = static_cast<float>(mu);
    if (app->count("--ed-sum")) cfg.ed_sum_reduction = ed_sum;
    if (app->count("--freeze-target-classifier")) cfg.freeze_target_classifier = freeze_cls;
    if (app->count("--no-augment")) cfg.augment = !no_augment;
    if (app->count("--flip-prob")) cfg.flip_prob = static_cast<float>(flip_prob);
    if (app->count("--scale-min")) cfg.scale_min = static_cast<float>(scale_min);
    if (app->count("--scale-max")) cfg.scale_max = static_cast<float>(scale_max);
    if (app->count("--seed")) cfg.seed = seed;
    if (app->count("--classes")) cfg.expected_classes = classes;
    if (with_variant && !app->count("--variant") && config_path.empty())
      cfg.variant = variant_from_string(variant);
    return cfg;
  }
};

int run_gen_data(const std::string& out_dir, int ids, int per_id, int size, std::uint64_t seed,
                 double train_frac, double val_frac) {
  DatasetConfig cfg;
  cfg.num_classes = ids;
  cfg.samples_per_id = per_id;
  cfg.image_size = size;
  cfg.seed = seed;
  cfg.split_fractions = {train_frac, val_frac, 1.0 - train_frac - val_frac};
  cfg.out_dir = out_dir;
  const Manifest m = build_dataset(cfg);

  write_json_file({{"command", "gen-data"},
                   {"ids", ids},
                   {"per_id", per_id},
                   {"size", size},
                   {"seed", seed},
                   {"train_frac", train_frac},
                   {"val_frac", val_frac}},
                  fs::path(out_dir) / "effective_config.json");
  std::printf("manifest: %s\n", (fs::path(out_dir) / "manifest.json").string().c_str());
  std::printf("samples: %zu (train %d / val %d / test %d)\n", m.records.size(), m.count("train"),
              m.count("val"), m.count("test"));
  return 0;
}

int run_train_source(const std::string& manifest_path, const std::string& out_dir,
                     const TrainConfig& cfg) {
  const Manifest man = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  write_json_file(train_config_to_json(cfg), fs::path(out_dir) / "effective_config.json");

  const SourceTrainResult res = train_source(man, cfg);
  save_source_model(res.model, (fs::path(out_dir) / "source.ckpt").string());
  write_train_log_ndjson(res.log, (fs::path(out_dir) / "train_log.ndjson").string());
  std::printf("source checkpoint: %s\n", (fs::path(out_dir) / "source.ckpt").string().c_str());
  std::printf("best val accuracy: %.4f (epoch %d)\n", res.best_val_accuracy, res.best_epoch);
  return 0;
}

int run_train_target(const std::string& manifest_path, const std::string& source_path,
                     const std::string& out_dir, const TrainConfig& cfg) {
  const Manifest man = load_manifest(manifest_path);
  const SourceModel source = load_source_model(source_path);
  fs::create_directories(out_dir);
  write_json_file(train_config_to_json(cfg), fs::path(out_dir) / "effective_config.json");

  const TargetTrainResult res = train_target(man, source, cfg);
  save_target_model(res.model, (fs::path(out_dir) / "target.ckpt").string());
  write_train_log_ndjson(res.log, (fs::path(out_dir) / "train_log.ndjson").string());
  std::printf("target checkpoint: %s\n", (fs::path(out_dir) / "target.ckpt").string().c_str());
  std::printf("best val ME: %.4f input px (epoch %d)\n", res.best_val_me, res.best_epoch);
  return 0;
}

int run_infer(const std::string& checkpoint, const std::string& manifest_path,
              const std::string& split, const std::vector<std::string>& images,
              const std::string& out_csv) {
  const TargetModel model = load_target_model(checkpoint);

  std::vector<std::string> ids;
  std::vector<Image> imgs;
  if (!manifest_path.empty()) {
    const Manifest man = load_manifest(manifest_path);
    for (const auto& r : man.records) {
      if (!split.empty() && split != "all" && r.split != split) continue;
      ids.push_back(r.image);
      imgs.push_back(read_png_rgb((fs::path(man.root) / r.image).string()));
    }
  } else {
    for (const auto& path : images) {
      ids.push_back(path);
      imgs.push_back(read_png_rgb(path));
    }
  }
  const std::vector<LandmarkSet> preds = predict_landmarks(model, imgs);
  write_predictions_csv(out_csv, ids, preds);
  std::printf("predictions: %s (%zu images)\n", out_csv.c_str(), ids.size());
  return 0;
}

int run_evaluate(const std::string& preds_path, const std::string& manifest_path,
                 const std::string& out_dir, double threshold, int grid, bool per_point,
                 bool quarter) {
  const Manifest man = load_manifest(manifest_path);
  auto [ids, preds] = read_predictions_csv(preds_path);

  std::unordered_map<std::string, const ManifestRecord*> by_image;
  for (const auto& r : man.records) by_image[r.image] = &r;
  std::vector<LandmarkSet> truths;
  truths.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_image.find(id);
    if (it == by_image.end()) throw DataError("prediction id not in manifest: " + id);
    truths.push_back(it->second->landmarks);
  }

  EvalConfig cfg;
  cfg.threshold = threshold;
  cfg.cutoff = threshold;
  cfg.grid = grid;
  cfg.per_point = per_point;
  cfg.quarter_resolution = quarter;
  const EvalReport rep = evaluate(preds, truths, cfg);

  fs::create_directories(out_dir);
  write_report(rep, (fs::path(out_dir) / "report.json").string(),
               (fs::path(out_dir) / "ced.csv").string());
  std::printf("ME %.4f  SD %.4f  FR %.4f  AUC %.4f  [%s]\n", rep.me, rep.sd, rep.fr, rep.auc,
              rep.unit.c_str());
  std::printf("report: %s\n", (fs::path(out_dir) / "report.json").string().c_str());
  return 0;
}

int run_compare(const std::string& manifest_path, const std::string& source_path,
                const std::string& out_dir, const TrainConfig& base,
                const std::vector<std::string>& variant_names,
                const std::vector<std::uint64_t>& seeds, int jobs, double threshold, int grid,
                bool quarter) {
  const Manifest man = load_manifest(manifest_path);
  const SourceModel source = load_source_model(source_path);
  std::vector<Variant> variants;
  for (const auto& name : variant_names) variants.push_back(variant_from_string(name));

  EvalConfig ecfg;
  ecfg.threshold = threshold;
  ecfg.cutoff = threshold;
  ecfg.grid = grid;
  ecfg.quarter_resolution = quarter;

  fs::create_directories(out_dir);
  {
    nlohmann::json echo = train_config_to_json(base);
    echo["variants"] = variant_names;
    echo["seeds"] = seeds;
    echo["jobs"] = jobs;
    echo["threshold"] = threshold;
    echo["grid"] = grid;
    echo["quarter_resolution"] = quarter;
    write_json_file(echo, fs::path(out_dir) / "effective_config.json");
  }

  const AblationResult res =
      run_ablation(man, source, base, variants, seeds, jobs, ecfg,
                   [](const std::string& msg) { std::printf("%s\n", msg.c_str()); });

  {
    std::ofstream csv(fs::path(out_dir) / "table.csv", std::ios::binary);
    csv << "variant,me,sd,fr,auc\n";
    char line[160];
    for (const auto& row : res.rows) {
      std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%.9g,%.9g\n", to_string(row.variant).c_str(),
                    row.me, row.sd, row.fr, row.auc);
      csv << line;
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : res.rows)
    rows.push_back({{"variant", to_string(row.variant)},
                    {"me", row.me},
                    {"sd", row.sd},
                    {"fr", row.fr},
                    {"auc", row.auc}});
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : res.runs)
    runs.push_back({{"variant", to_string(run.variant)},
                    {"seed", run.seed},
                    {"me", run.me},
                    {"sd", run.sd},
                    {"fr", run.fr},
                    {"auc", run.auc},
                    {"best_val_me", run.best_val_me}});

  const auto row_me = [&](Variant v) -> const double* {
    for (const auto& row : res.rows)
      if (row.variant == v) return &row.me;
    return nullptr;
  };
  nlohmann::json flags = nlohmann::json::object();
  const double* ft = row_me(Variant::FT);
  const double* fe = row_me(Variant::FE);
  const double* ed = row_me(Variant::CTD_ED);
  if (ft && fe) flags["fe_me_ge_ft_me"] = *fe >= *ft;
  if (ft && ed) flags["ctd_ed_me_le_ft_me"] = *ed <= *ft;
  write_json_file({{"unit", res.unit}, {"rows", rows}, {"runs", runs}, {"flags", flags}},
                  fs::path(out_dir) / "table.json");

  for (const auto& [variant, samples] : res.ced) {
    std::ofstream csv(fs::path(out_dir) / ("ced_" + to_string(variant) + ".csv"), std::ios::binary);
    csv << "t,fraction\n";
    char line[64];
    for (const auto& [t, f] : samples) {
      std::snprintf(line, sizeof(line), "%.9g,%.9g\n", t, f);
      csv << line;
    }
  }

  std::printf("\n%-8s %10s %10s %8s %8s   [%s]\n", "variant", "ME", "SD", "FR", "AUC",
              res.unit.c_str());
  for (const auto& row : res.rows)
    std::printf("%-8s %10.4f %10.4f %8.4f %8.4f\n", to_string(row.variant).c_str(), row.me, row.sd,
                row.fr, row.auc);
  if (ft && ed)
    std::printf("expected direction (mean CTD-ED ME <= mean FT ME): %s\n",
                *ed <= *ft ? "yes" : "no");
  std::printf("table: %s\n", (fs::path(out_dir) / "table.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-task landmark detection toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic face dataset");
  std::string gen_out = "dataset";
  int gen_ids = 10, gen_per_id = 40, gen_size = 64;
  std::uint64_t gen_seed = 7;
  double gen_train_frac = 0.7, gen_val_frac = 0.1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--ids", gen_ids, "number of identities");
  gen->add_option("--per-id", gen_per_id, "samples per identity");
  gen->add_option("--size", gen_size, "image size (divisible by 32)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--train-frac", gen_train_frac, "train fraction");
  gen->add_option("--val-frac", gen_val_frac, "validation fraction");

  // train-source
  auto* ts = app.add_subcommand("train-source", "pretrain the face-identity classifier");
  std::string ts_manifest, ts_out = "source_run";
  TrainFlags ts_flags;
  ts->add_option("--manifest", ts_manifest, "dataset manifest")->required();
  ts->add_option("--out", ts_out, "output directory");
  ts_flags.attach(ts, false);

  // train-target
  auto* tt = app.add_subcommand("train-target", "train the landmark detector");
  std::string tt_manifest, tt_source, tt_out = "target_run";
  TrainFlags tt_flags;
  tt->add_option("--manifest", tt_manifest, "dataset manifest")->required();
  tt->add_option("--source", tt_source, "source model checkpoint")->required();
  tt->add_option("--out", tt_out, "output directory");
  tt_flags.attach(tt, true);

  // infer
  auto* inf = app.add_subcommand("infer", "predict landmarks with a trained target model");
  std::string inf_ckpt, inf_manifest, inf_split = "test", inf_out = "predictions.csv";
  std::vector<std::string> inf_images;
  inf->add_option("--checkpoint", inf_ckpt, "target checkpoint")->required();
  inf->add_option("--manifest", inf_manifest, "dataset manifest (use with --split)");
  inf->add_option("--split", inf_split, "manifest split: train, val, test or all");
  inf->add_option("--images", inf_images, "explicit PNG paths instead of a manifest");
  inf->add_option("--out", inf_out, "output CSV");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "compute ME/CED/AUC/FR from predictions");
  std::string ev_preds, ev_manifest, ev_out = "eval_run";
  double ev_threshold = 1.2;
  int ev_grid = 512;
  bool ev_per_point = false, ev_quarter = false;
  ev->add_option("--preds", ev_preds, "predictions CSV")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest with ground truth")->required();
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--threshold", ev_threshold, "failure threshold / AUC cutoff");
  ev->add_option("--grid", ev_grid, "CED grid resolution");
  ev->add_flag("--per-point", ev_per_point, "CED over per-point errors");
  ev->add_flag("--quarter", ev_quarter, "report in quarter-resolution pixels");

  // compare
  auto* cmp = app.add_subcommand("compare", "run the fine-tuning/regularization ablation");
  std::string cmp_manifest, cmp_source, cmp_out = "compare_run";
  std::vector<std::string> cmp_variants = {"FE", "FTP", "FT", "CTD-CD", "CTD-ED", "CTD-Com"};
  std::vector<std::uint64_t> cmp_seeds = {1, 2, 3, 4, 5};
  int cmp_jobs = static_cast<int>(std::thread::hardware_concurrency());
  double cmp_threshold = 1.2;
  int cmp_grid = 512;
  bool cmp_quarter = false;
  TrainFlags cmp_flags;
  cmp->add_option("--manifest", cmp_manifest, "dataset manifest")->required();
  cmp->add_option("--source", cmp_source, "source model checkpoint")->required();
  cmp->add_option("--out", cmp_out, "output directory");
  cmp->add_option("--variants", cmp_variants, "variants to compare")->delimiter(',');
  cmp->add_option("--seeds", cmp_seeds, "seeds per variant")->delimiter(',');
  cmp->add_option("--jobs", cmp_jobs, "parallel training runs");
  cmp->add_option("--threshold", cmp_threshold, "failure threshold / AUC cutoff");
  cmp->add_option("--grid", cmp_grid, "CED grid resolution");
  cmp->add_flag("--quarter", cmp_quarter, "report in quarter-resolution pixels");
  cmp_flags.attach(cmp, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return run_gen_data(gen_out, gen_ids, gen_per_id, gen_size, gen_seed, gen_train_frac,
                          gen_val_frac);
    if (ts->parsed())
      return run_train_source(ts_manifest, ts_out, ts_flags.resolve(ts, false, 30));
    if (tt->parsed())
      return run_train_target(tt_manifest, tt_source, tt_out, tt_flags.resolve(tt, true, 150));
    if (inf->parsed()) return run_infer(inf_ckpt, inf_manifest, inf_split, inf_images, inf_out);
    if (ev->parsed())
      return run_evaluate(ev_preds, ev_manifest, ev_out, ev_threshold, ev_grid, ev_per_point,
                          ev_quarter);
    if (cmp->parsed())
      return run_compare(cmp_manifest, cmp_source, cmp_out, cmp_flags.resolve(cmp, false, 60),
                         cmp_variants, cmp_seeds, cmp_jobs, cmp_threshold, cmp_grid, cmp_quarter);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
