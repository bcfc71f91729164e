#include "ctld/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "ctld/error.hpp"
#include "ctld/losses.hpp"
#include "ctld/optim.hpp"
#include "ctld/rng.hpp"

namespace ctld {

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"variant", to_string(cfg.variant)},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr_initial", cfg.lr_initial},
          {"lr_power", cfg.lr_power},
          {"lr_end", cfg.lr_end},
          {"lambda", cfg.lambda},
          {"mu", cfg.mu},
          {"ed_sum_reduction", cfg.ed_sum_reduction},
          {"freeze_target_classifier", cfg.freeze_target_classifier},
          {"augment", cfg.augment},
          {"flip_prob", cfg.flip_prob},
          {"scale_min", cfg.scale_min},
          {"scale_max", cfg.scale_max},
          {"seed", cfg.seed},
          {"expected_classes", cfg.expected_classes}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("variant")) cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr_initial = j.value("lr_initial", cfg.lr_initial);
  cfg.lr_power = j.value("lr_power", cfg.lr_power);
  cfg.lr_end = j.value("lr_end", cfg.lr_end);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.mu = j.value("mu", cfg.mu);
  cfg.ed_sum_reduction = j.value("ed_sum_reduction", cfg.ed_sum_reduction);
  cfg.freeze_target_classifier = j.value("freeze_target_classifier", cfg.freeze_target_classifier);
  cfg.augment = j.value("augment", cfg.augment);
  cfg.flip_prob = j.value("flip_prob", cfg.flip_prob);
  cfg.scale_min = j.value("scale_min", cfg.scale_min);
  cfg.scale_max = j.value("scale_max", cfg.scale_max);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.expected_classes = j.value("expected_classes", cfg.expected_classes);
  return cfg;
}

void write_train_log_ndjson(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write train log: " + path);
  for (const auto& s : log.steps) {
    nlohmann::json j = {{"step", s.step}, {"epoch", s.epoch}, {"lr", s.lr}, {"total", s.total}};
    if (s.l_r) j["l_r"] = *s.l_r;
    if (s.l_cd) j["l_cd"] = *s.l_cd;
    if (s.l_ed) j["l_ed"] = *s.l_ed;
    if (s.ce) j["ce"] = *s.ce;
    out << j.dump() << "\n";
  }
  for (const auto& [epoch, metric] : log.val_metric) {
    out << nlohmann::json({{"epoch", epoch}, {"val", metric}}).dump() << "\n";
  }
}

namespace {

void validate_common(const Manifest& man, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.lambda < 0.0f) throw ConfigError("lambda must be non-negative");
  if (!(cfg.mu > 0.0f)) throw ConfigError("mu must be positive");
  if (!(cfg.scale_min > 0.0f) || cfg.scale_max < cfg.scale_min)
    throw ConfigError("bad scale range");
  if (cfg.expected_classes >= 0 && cfg.expected_classes != man.num_classes)
    throw ConfigError("manifest has " + std::to_string(man.num_classes) +
                      " classes, config expects " + std::to_string(cfg.expected_classes));
  if (man.image_size % 32 != 0) throw ConfigError("manifest image size must be divisible by 32");
}

struct AugmentedSample {
  Image image;
  LandmarkSet landmarks;
};

// Flip coin, then scale with reject-and-resample so no landmark leaves
// the canvas; after 20 rejected draws the scale falls back to identity.
AugmentedSample augment(const LoadedSample& s, const FlipSpec& flip, const TrainConfig& cfg,
                        Rng& rng) {
  const int h = s.image.dim(0), w = s.image.dim(1);
  AugmentedSample out{s.image, s.landmarks};
  if (rng.uniform() < cfg.flip_prob) {
    auto [fi, fl] = hflip(out.image, out.landmarks, flip);
    out.image = std::move(fi);
    out.landmarks = std::move(fl);
  }
  float factor = 1.0f;
  for (int attempt = 0; attempt < 20; ++attempt) {
    const float f = rng.uniformf(cfg.scale_min, cfg.scale_max);
    if (landmarks_in_bounds(rescale_landmarks(out.landmarks, h, w, f), h, w)) {
      factor = f;
      break;
    }
  }
  if (factor != 1.0f) {
    auto [si, sl] = rescale(out.image, out.landmarks, factor);
    out.image = std::move(si);
    out.landmarks = std::move(sl);
  }
  return out;
}

Tensor<float> stack_images(const std::vector<const Image*>& images) {
  const int h = images[0]->dim(0), w = images[0]->dim(1);
  Tensor<float> batch({static_cast<int>(images.size()), h, w, 3});
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w * 3;
  for (std::size_t i = 0; i < images.size(); ++i)
    std::copy_n(images[i]->data(), plane, batch.data() + static_cast<Eigen::Index>(i) * plane);
  return batch;
}

Tensor<float> stack_heatmaps(const std::vector<LandmarkSet>& landmarks, int size, int k) {
  const int hw = size / 4;
  Tensor<float> batch({static_cast<int>(landmarks.size()), hw, hw, k});
  const Eigen::Index plane = static_cast<Eigen::Index>(hw) * hw * k;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const HeatmapStack hm = encode(landmarks[i], size, size);
    std::copy_n(hm.maps.data(), plane, batch.data() + static_cast<Eigen::Index>(i) * plane);
  }
  return batch;
}

struct SourceOutputs {
  Tensor<float> logits;      // N x C (if requested)
  Tensor<float> embeddings;  // N x d (if requested)
};

SourceOutputs source_inference(const SourceModel& source, const Tensor<float>& images,
                               bool want_logits, bool want_embeddings) {
  Graph<float> g;
  ParamBinder p(g, static_cast<const ParamStore<float>&>(source.params));
  const NodeId img = g.constant(images);
  const EncoderNodes enc = encode_features(g, p, source.spec, img);
  SourceOutputs out;
  if (want_embeddings) out.embeddings = g.value(enc.embedding);
  if (want_logits) out.logits = g.value(classifier_logits(g, p, enc.embedding));
  return out;
}

std::vector<Tensor<float>> snapshot_values(const ParamStore<float>& store) {
  std::vector<Tensor<float>> vals;
  vals.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) vals.push_back(store.entry(i).value);
  return vals;
}

void restore_values(ParamStore<float>& store, const std::vector<Tensor<float>>& vals) {
  for (std::size_t i = 0; i < store.count(); ++i) store.entry(i).value = vals[i];
}

double check_finite(double v, const char* what, long step, int epoch) {
  if (!std::isfinite(v))
    throw NumericalError(std::string("non-finite ") + what + " at step " + std::to_string(step) +
                         " (epoch " + std::to_string(epoch) + ")");
  return v;
}

}  // namespace

std::vector<LandmarkSet> predict_landmarks(const TargetModel& model,
                                           const std::vector<Image>& images, int batch) {
  std::vector<LandmarkSet> preds;
  preds.reserve(images.size());
  const int k = model.num_landmarks;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t n = std::min(images.size() - start, static_cast<std::size_t>(batch));
    std::vector<const Image*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&images[start + i]);
    Graph<float> g;
    ParamBinder p(g, static_cast<const ParamStore<float>&>(model.params));
    const NodeId img = g.constant(stack_images(ptrs));
    const EncoderNodes enc = encode_features(g, p, model.spec, img);
    const Tensor<float>& maps = g.value(decode_heatmaps(g, p, model.spec, k, enc.spatial));
    const int h = maps.dim(1), w = maps.dim(2);
    const Eigen::Index plane = static_cast<Eigen::Index>(h) * w * k;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<float> one({h, w, k});
      std::copy_n(maps.data() + static_cast<Eigen::Index>(i) * plane, plane, one.data());
      preds.push_back(decode(one).landmarks);
    }
  }
  return preds;
}

std::vector<int> predict_classes(const SourceModel& model, const std::vector<Image>& images,
                                 int batch) {
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t n = std::min(images.size() - start, static_cast<std::size_t>(batch));
    std::vector<const Image*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&images[start + i]);
    const SourceOutputs so = source_inference(model, stack_images(ptrs), true, false);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = so.logits.data() + static_cast<Eigen::Index>(i) * model.num_classes;
      out.push_back(static_cast<int>(std::max_element(row, row + model.num_classes) - row));
    }
  }
  return out;
}

SourceTrainResult train_source(const Manifest& man, const TrainConfig& cfg) {
  validate_common(man, cfg);
  const auto train = load_split(man, "train");
  const auto val = load_split(man, "val");
  if (train.empty()) throw DataError("manifest has no training samples");

  SourceTrainResult res;
  res.model = make_source_model(EncoderSpec{}, man.num_classes, cfg.seed);
  AdamState<float> adam = AdamState<float>::init(res.model.params);
  const LrSchedule sched{cfg.lr_initial, cfg.epochs, cfg.lr_power, cfg.lr_end};
  const FlipSpec flip{man.flip_permutation};
  Rng shuffle_rng(Rng::substream(cfg.seed, 0x50c1));
  Rng aug_rng(Rng::substream(cfg.seed, 0x50c2));

  std::vector<Image> val_images;
  std::vector<int> val_labels;
  for (const auto& s : val) {
    val_images.push_back(s.image);
    val_labels.push_back(s.identity);
  }

  long step = 0;
  double best_acc = -1.0;
  std::vector<Tensor<float>> best_values;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(sched, epoch);
    const std::vector<int> order = shuffled_indices(shuffle_rng, static_cast<int>(train.size()));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::vector<AugmentedSample> aug;
      std::vector<int> labels;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = train[static_cast<std::size_t>(order[start + i])];
        aug.push_back(cfg.augment ? augment(s, flip, cfg, aug_rng)
                                  : AugmentedSample{s.image, s.landmarks});
        labels.push_back(s.identity);
      }
      std::vector<const Image*> ptrs;
      for (const auto& a : aug) ptrs.push_back(&a.image);

      Graph<float> g;
      ParamBinder p(g, res.model.params);
      const NodeId img = g.constant(stack_images(ptrs));
      const EncoderNodes enc = encode_features(g, p, res.model.spec, img);
      const NodeId loss = cross_entropy(g, classifier_logits(g, p, enc.embedding), labels);

      StepRecord rec;
      rec.step = ++step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.total = check_finite(g.value(loss).item(), "loss", rec.step, epoch);
      rec.ce = rec.total;
      g.backward(loss);
      adam_step(res.model.params, adam, static_cast<float>(lr));
      res.log.steps.push_back(rec);
    }
    if (!val_images.empty()) {
      const std::vector<int> pred = predict_classes(res.model, val_images);
      int hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == val_labels[i]) ++hits;
      const double acc = static_cast<double>(hits) / static_cast<double>(pred.size());
      res.log.val_metric.emplace_back(epoch, acc);
      if (acc > best_acc) {
        best_acc = acc;
        res.best_epoch = epoch;
        best_values = snapshot_values(res.model.params);
      }
    }
  }
  if (!best_values.empty()) restore_values(res.model.params, best_values);
  res.best_val_accuracy = best_acc;
  return res;
}

TargetTrainResult train_target(const Manifest& man, const SourceModel& source,
                               const TrainConfig& cfg) {
  validate_common(man, cfg);
  if (man.image_size != 0 && source.spec.embed_dim() <= 0)
    throw ConfigError("bad source model");

  TargetTrainResult res;
  res.model = transfer_init(source, cfg.variant, man.k, cfg.seed);
  if (cfg.freeze_target_classifier && res.model.has_classifier()) {
    res.model.params.at("cls.w").trainable = false;
    res.model.params.at("cls.b").trainable = false;
  }

  const auto train = load_split(man, "train");
  const auto val = load_split(man, "val");
  if (train.empty()) throw DataError("manifest has no training samples");

  const int size = man.image_size;
  const int k = man.k;
  const FlipSpec flip{man.flip_permutation};
  AdamState<float> adam = AdamState<float>::init(res.model.params);
  const LrSchedule sched{cfg.lr_initial, cfg.epochs, cfg.lr_power, cfg.lr_end};
  Rng shuffle_rng(Rng::substream(cfg.seed, 0x7a41));
  Rng aug_rng(Rng::substream(cfg.seed, 0x7a42));

  // Eq. 2 with lambda = 0 is standard fine-tuning: the regularizer is
  // never evaluated, so such runs are step-for-step identical to FT.
  const bool reg_active = cfg.lambda > 0.0f && variant_uses_regularizer(cfg.variant);
  const bool use_logits = reg_active && variant_uses_logits(cfg.variant);
  const bool use_emb = reg_active && variant_uses_embeddings(cfg.variant);
  const Reduction red = cfg.ed_sum_reduction ? Reduction::Sum : Reduction::Mean;

  std::vector<Image> val_images;
  std::vector<LandmarkSet> val_truths;
  for (const auto& s : val) {
    val_images.push_back(s.image);
    val_truths.push_back(s.landmarks);
  }

  long step = 0;
  double best_me = std::numeric_limits<double>::infinity();
  std::vector<Tensor<float>> best_values;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(sched, epoch);
    const std::vector<int> order = shuffled_indices(shuffle_rng, static_cast<int>(train.size()));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::vector<AugmentedSample> aug;
      std::vector<LandmarkSet> lms;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = train[static_cast<std::size_t>(order[start + i])];
        aug.push_back(cfg.augment ? augment(s, flip, cfg, aug_rng)
                                  : AugmentedSample{s.image, s.landmarks});
        lms.push_back(aug.back().landmarks);
      }
      std::vector<const Image*> ptrs;
      for (const auto& a : aug) ptrs.push_back(&a.image);
      const Tensor<float> batch_images = stack_images(ptrs);
      const Tensor<float> batch_maps = stack_heatmaps(lms, size, k);

      SourceOutputs so;
      if (use_logits || use_emb)
        so = source_inference(source, batch_images, use_logits, use_emb);

      Graph<float> g;
      ParamBinder p(g, res.model.params);
      const NodeId img = g.constant(batch_images);
      const EncoderNodes enc = encode_features(g, p, res.model.spec, img);
      const NodeId pred = decode_heatmaps(g, p, res.model.spec, k, enc.spatial);
      const NodeId l_r = loss_regression(g, pred, g.constant(batch_maps));

      StepRecord rec;
      rec.step = ++step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.l_r = g.value(l_r).item();

      NodeId total = l_r;
      if (use_logits || use_emb) {
        NodeId l_d{-1};
        if (use_logits) {
          const NodeId tgt_logits = classifier_logits(g, p, enc.embedding);
          const NodeId l_cd = loss_cd(g, g.constant(so.logits), tgt_logits, cfg.mu);
          rec.l_cd = g.value(l_cd).item();
          l_d = l_cd;
        }
        if (use_emb) {
          const NodeId l_ed = loss_ed(g, g.constant(so.embeddings), enc.embedding, red);
          rec.l_ed = g.value(l_ed).item();
          l_d = use_logits ? add(g, l_d, l_ed) : l_ed;
        }
        total = loss_total(g, l_r, l_d, cfg.lambda);
      }
      rec.total = check_finite(g.value(total).item(), "loss", rec.step, epoch);
      check_finite(*rec.l_r, "regression loss", rec.step, epoch);

      g.backward(total);
      adam_step(res.model.params, adam, static_cast<float>(lr));
      res.log.steps.push_back(rec);
    }

    if (!val_images.empty()) {
      const std::vector<LandmarkSet> preds = predict_landmarks(res.model, val_images);
      const double me = mean_error(preds, val_truths).me;
      res.log.val_metric.emplace_back(epoch, me);
      if (me < best_me) {
        best_me = me;
        res.best_epoch = epoch;
        best_values = snapshot_values(res.model.params);
      }
    }
  }
  if (!best_values.empty()) restore_values(res.model.params, best_values);
  res.best_val_me = best_me;
  return res;
}

AblationResult run_ablation(const Manifest& man, const SourceModel& source,
                            const TrainConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds, int jobs,
                            const EvalConfig& ecfg,
                            const std::function<void(const std::string&)>& progress) {
  if (variants.empty() || seeds.empty()) throw ConfigError("run_ablation: needs >= 1 variant and seed");
  const auto test = load_split(man, "test");
  if (test.empty()) throw DataError("manifest has no test samples");
  std::vector<Image> test_images;
  std::vector<LandmarkSet> test_truths;
  for (const auto& s : test) {
    test_images.push_back(s.image);
    test_truths.push_back(s.landmarks);
  }

  struct Task {
    Variant variant;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Variant v : variants)
    for (std::uint64_t s : seeds) tasks.push_back({v, s});

  AblationResult result;
  result.runs.resize(tasks.size());
  result.unit = ecfg.quarter_resolution ? "quarter_px" : "input_px";

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      TrainConfig cfg = base;
      cfg.variant = tasks[i].variant;
      cfg.seed = tasks[i].seed;
      const TargetTrainResult tr = train_target(man, source, cfg);
      const std::vector<LandmarkSet> preds = predict_landmarks(tr.model, test_images);
      const EvalReport rep = evaluate(preds, test_truths, ecfg);
      AblationRun& run = result.runs[i];
      run.variant = tasks[i].variant;
      run.seed = tasks[i].seed;
      run.me = rep.me;
      run.sd = rep.sd;
      run.fr = rep.fr;
      run.auc = rep.auc;
      run.best_val_me = tr.best_val_me;
      run.errors = rep.errors;
      if (progress) {
        const std::lock_guard<std::mutex> lock(progress_mutex);
        char msg[128];
        std::snprintf(msg, sizeof(msg), "%-7s seed %llu: test ME %.4f  FR %.4f  AUC %.4f",
                      to_string(run.variant).c_str(), static_cast<unsigned long long>(run.seed),
                      run.me, run.fr, run.auc);
        progress(msg);
      }
    }
  };

  const int nworkers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nworkers));
  for (int t = 0; t < nworkers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (Variant v : variants) {
    AblationRow row;
    row.variant = v;
    int n = 0;
    std::vector<double> pooled;
    for (const auto& run : result.runs) {
      if (run.variant != v) continue;
      row.me += run.me;
      row.sd += run.sd;
      row.fr += run.fr;
      row.auc += run.auc;
      pooled.insert(pooled.end(), run.errors.begin(), run.errors.end());
      ++n;
    }
    row.me /= n;
    row.sd /= n;
    row.fr /= n;
    row.auc /= n;
    result.rows.push_back(row);
    result.ced.emplace_back(v, ced(pooled, ecfg.grid, ecfg.threshold));
  }
  return result;
}

}  // namespace ctld
