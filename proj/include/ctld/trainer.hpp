#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctld/evalkit.hpp"
#include "ctld/model.hpp"
#include "ctld/synthfaces.hpp"

namespace ctld {

struct TrainConfig {
  Variant variant = Variant::FT;
  int epochs = 150;
  int batch_size = 2;
  double lr_initial = 1e-3;
  double lr_power = 0.9;
  double lr_end = 0.0;
  float lambda = 0.002f;
  float mu = 2.0f;
  bool ed_sum_reduction = false;  // literal per-batch sum in the cosine loss
  bool freeze_target_classifier = false;
  bool augment = true;
  float flip_prob = 0.5f;
  float scale_min = 0.8f;
  float scale_max = 1.25f;
  std::uint64_t seed = 0;
  int expected_classes = -1;  // if >= 0, must match the manifest
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::optional<double> l_r, l_cd, l_ed, ce;  // absent = loss not enabled
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<std::pair<int, double>> val_metric;  // per-epoch: ME (target) or accuracy (source)
};

/// Newline-delimited JSON; disabled losses are omitted from records.
void write_train_log_ndjson(const TrainLog& log, const std::string& path);

struct SourceTrainResult {
  SourceModel model;  // best-validation-accuracy parameters
  TrainLog log;
  double best_val_accuracy = 0.0;
  int best_epoch = -1;
};

/// Cross-entropy pretraining of the face-identity classifier.
SourceTrainResult train_source(const Manifest& manifest, const TrainConfig& cfg);

struct TargetTrainResult {
  TargetModel model;  // best-validation-ME parameters
  TrainLog log;
  double best_val_me = 0.0;
  int best_epoch = -1;
};

/// Heatmap-regression training with the variant's freeze mask and
/// regularizers. The source model runs in inference mode on the same
/// augmented images the target sees; lambda == 0 disables the regularizer
/// entirely (standard fine-tuning). Deterministic in (config, seed).
TargetTrainResult train_target(const Manifest& manifest, const SourceModel& source,
                               const TrainConfig& cfg);

/// Forward + argmax decode, in input-pixel coordinates.
std::vector<LandmarkSet> predict_landmarks(const TargetModel& model,
                                           const std::vector<Image>& images, int batch = 8);

std::vector<int> predict_classes(const SourceModel& model, const std::vector<Image>& images,
                                 int batch = 8);

struct AblationRun {
  Variant variant = Variant::FT;
  std::uint64_t seed = 0;
  double me = 0.0, sd = 0.0, fr = 0.0, auc = 0.0;
  double best_val_me = 0.0;
  std::vector<double> errors;
};

struct AblationRow {
  Variant variant = Variant::FT;
  double me = 0.0, sd = 0.0, fr = 0.0, auc = 0.0;  // means over seeds
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;  // one per requested variant, in order
  std::vector<std::pair<Variant, std::vector<std::pair<double, double>>>> ced;  // pooled over seeds
  std::string unit;
};

/// Trains every (variant, seed) pair and evaluates on the test split.
/// Runs are independent; `jobs` of them execute in parallel.
AblationResult run_ablation(const Manifest& manifest, const SourceModel& source,
                            const TrainConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds, int jobs,
                            const EvalConfig& ecfg,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace ctld
