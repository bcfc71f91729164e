#include "ctld/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctld/error.hpp"

namespace ctld {

namespace {

void check_paired(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& truths) {
  if (preds.size() != truths.size())
    throw ConfigError("evaluate: prediction/truth counts differ");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].k() != truths[i].k())
      throw ConfigError("evaluate: landmark counts differ at image " + std::to_string(i));
}

}  // namespace

std::vector<double> per_image_errors(const std::vector<LandmarkSet>& preds,
                                     const std::vector<LandmarkSet>& truths) {
  check_paired(preds, truths);
  std::vector<double> errors;
  errors.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double acc = 0.0;
    for (int k = 0; k < preds[i].k(); ++k)
      acc += (preds[i].points[static_cast<std::size_t>(k)] - truths[i].points[static_cast<std::size_t>(k)])
                 .cast<double>()
                 .norm();
    errors.push_back(acc / preds[i].k());
  }
  return errors;
}

std::vector<double> per_point_errors(const std::vector<LandmarkSet>& preds,
                                     const std::vector<LandmarkSet>& truths) {
  check_paired(preds, truths);
  std::vector<double> errors;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (int k = 0; k < preds[i].k(); ++k)
      errors.push_back(
          (preds[i].points[static_cast<std::size_t>(k)] - truths[i].points[static_cast<std::size_t>(k)])
              .cast<double>()
              .norm());
  return errors;
}

MeanError mean_error(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& truths) {
  MeanError r;
  r.errors = per_image_errors(preds, truths);
  if (r.errors.empty()) throw ConfigError("mean_error: no images");
  double acc = 0.0;
  for (double e : r.errors) acc += e;
  r.me = acc / static_cast<double>(r.errors.size());
  double var = 0.0;
  for (double e : r.errors) var += (e - r.me) * (e - r.me);
  r.sd = std::sqrt(var / static_cast<double>(r.errors.size()));
  return r;
}

namespace {

double fraction_at(const std::vector<double>& errors, double t) {
  std::size_t n = 0;
  for (double e : errors)
    if (e <= t) ++n;
  return static_cast<double>(n) / static_cast<double>(errors.size());
}

}  // namespace

std::vector<std::pair<double, double>> ced(const std::vector<double>& errors, int grid,
                                           double threshold) {
  if (errors.empty()) throw ConfigError("ced: no errors");
  if (grid < 2) throw ConfigError("ced: grid too small");
  const double tmax = std::max(threshold, *std::max_element(errors.begin(), errors.end()));
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(grid));
  for (int i = 0; i < grid; ++i) {
    const double t = tmax * static_cast<double>(i) / static_cast<double>(grid - 1);
    out.emplace_back(t, fraction_at(errors, t));
  }
  return out;
}

std::pair<double, double> auc_fr(const std::vector<double>& errors, double threshold, int grid) {
  if (errors.empty()) throw ConfigError("auc_fr: no errors");
  if (!(threshold > 0.0)) throw ConfigError("auc_fr: threshold must be positive");
  std::size_t fail = 0;
  for (double e : errors)
    if (e > threshold) ++fail;
  const double fr = static_cast<double>(fail) / static_cast<double>(errors.size());

  // Trapezoidal integral of the exact counting CED over [0, threshold].
  double acc = 0.0;
  double prev = fraction_at(errors, 0.0);
  for (int i = 1; i < grid; ++i) {
    const double t = threshold * static_cast<double>(i) / static_cast<double>(grid - 1);
    const double cur = fraction_at(errors, t);
    acc += 0.5 * (prev + cur);
    prev = cur;
  }
  const double auc = acc / static_cast<double>(grid - 1);
  return {auc, fr};
}

EvalReport evaluate(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& truths,
                    const EvalConfig& cfg) {
  EvalReport r;
  r.config = cfg;
  r.unit = cfg.quarter_resolution ? "quarter_px" : "input_px";
  r.errors = cfg.per_point ? per_point_errors(preds, truths) : per_image_errors(preds, truths);
  if (cfg.quarter_resolution)
    for (double& e : r.errors) e /= 4.0;

  double acc = 0.0;
  for (double e : r.errors) acc += e;
  r.me = acc / static_cast<double>(r.errors.size());
  double var = 0.0;
  for (double e : r.errors) var += (e - r.me) * (e - r.me);
  r.sd = std::sqrt(var / static_cast<double>(r.errors.size()));
  std::tie(r.auc, r.fr) = auc_fr(r.errors, cfg.threshold, cfg.grid);
  r.ced = ced(r.errors, cfg.grid, cfg.threshold);
  return r;
}

void write_report(const EvalReport& report, const std::string& json_path,
                  const std::string& ced_csv_path) {
  if (!json_path.empty()) {
    nlohmann::json j = {{"me", report.me},
                        {"sd", report.sd},
                        {"fr", report.fr},
                        {"auc", report.auc},
                        {"unit", report.unit},
                        {"num_images", report.errors.size()},
                        {"threshold", report.config.threshold},
                        {"cutoff", report.config.cutoff},
                        {"per_point", report.config.per_point},
                        {"errors", report.errors}};
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw DataError("cannot write report: " + json_path);
    out << j.dump(2) << "\n";
  }
  if (!ced_csv_path.empty()) {
    std::ofstream out(ced_csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write CED csv: " + ced_csv_path);
    out << "t,fraction\n";
    char line[64];
    for (const auto& [t, f] : report.ced) {
      std::snprintf(line, sizeof(line), "%.9g,%.9g\n", t, f);
      out << line;
    }
  }
}

void write_predictions_csv(const std::string& path, const std::vector<std::string>& ids,
                           const std::vector<LandmarkSet>& preds) {
  if (ids.size() != preds.size()) throw UsageError("write_predictions_csv: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions: " + path);
  const int k = preds.empty() ? 14 : preds[0].k();
  out << "image";
  for (int i = 0; i < k; ++i) out << ",x" << i << ",y" << i;
  out << "\n";
  char num[64];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << ids[i];
    for (const auto& p : preds[i].points) {
      std::snprintf(num, sizeof(num), ",%.9g,%.9g", static_cast<double>(p.x()), static_cast<double>(p.y()));
      out << num;
    }
    out << "\n";
  }
}

std::pair<std::vector<std::string>, std::vector<LandmarkSet>> read_predictions_csv(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open predictions: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty predictions file: " + path);
  if (line.rfind("image", 0) != 0) throw DataError("bad predictions header: " + path);

  std::vector<std::string> ids;
  std::vector<LandmarkSet> preds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',')) throw DataError("bad predictions row");
    ids.push_back(cell);
    LandmarkSet lm;
    std::vector<float> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stof(cell));
    if (vals.size() % 2 != 0) throw DataError("odd coordinate count in predictions row");
    for (std::size_t i = 0; i < vals.size(); i += 2) lm.points.emplace_back(vals[i], vals[i + 1]);
    preds.push_back(std::move(lm));
  }
  return {std::move(ids), std::move(preds)};
}

}  // namespace ctld
