#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctld/heatmap.hpp"

namespace ctld {

struct EvalConfig {
  double threshold = 1.2;  // failure threshold (same unit as the errors)
  double cutoff = 1.2;     // AUC integration limit
  int grid = 512;          // CED / AUC sample count
  bool per_point = false;  // CED over per-point instead of per-image errors
  bool quarter_resolution = false;  // report in heatmap (1/4) pixel units
};

struct EvalReport {
  std::vector<double> errors;  // per-image (or per-point) errors
  double me = 0.0;
  double sd = 0.0;  // population standard deviation
  double fr = 0.0;
  double auc = 0.0;
  std::vector<std::pair<double, double>> ced;  // (t, fraction <= t)
  EvalConfig config;
  std::string unit;  // "input_px" or "quarter_px"
};

/// Per-image error: mean over K landmarks of the Euclidean distance, in
/// input pixels (no inter-ocular normalization).
std::vector<double> per_image_errors(const std::vector<LandmarkSet>& preds,
                                     const std::vector<LandmarkSet>& truths);
std::vector<double> per_point_errors(const std::vector<LandmarkSet>& preds,
                                     const std::vector<LandmarkSet>& truths);

struct MeanError {
  double me = 0.0;
  double sd = 0.0;
  std::vector<double> errors;
};

MeanError mean_error(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& truths);

/// Fraction of errors <= t over a uniform grid from 0 to
/// max(threshold, max error).
std::vector<std::pair<double, double>> ced(const std::vector<double>& errors, int grid,
                                           double threshold);

/// FR = fraction of errors above the threshold; AUC = normalized
/// trapezoidal integral of the CED over [0, threshold].
std::pair<double, double> auc_fr(const std::vector<double>& errors, double threshold,
                                 int grid = 512);

EvalReport evaluate(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& truths,
                    const EvalConfig& cfg);

void write_report(const EvalReport& report, const std::string& json_path,
                  const std::string& ced_csv_path);

/// Prediction CSV: header "image,x0,y0,...", one row per image.
void write_predictions_csv(const std::string& path, const std::vector<std::string>& ids,
                           const std::vector<LandmarkSet>& preds);
std::pair<std::vector<std::string>, std::vector<LandmarkSet>> read_predictions_csv(
    const std::string& path);

}  // namespace ctld
