// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace echoreg::eval {

struct MetricsReport {
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
  /// MAE over samples whose truth lies in [40, 50]; absent when none do.
  std::optional<double> band_mae_40_50;
  std::size_t band_n = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// sqrt(mean((p - t)^2)); defined for any non-empty pair of equal length.
double rmse(std::span<const double> preds, std::span<const double> truths);

/// Requires n >= 2 and non-zero truth variance.
MetricsReport regression_metrics(std::span<const double> preds, std::span<const double> truths);

struct BlandAltman {
  double bias = 0.0;
  /// Sample standard deviation (n - 1 denominator) of pred - truth.
  double sd = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;

  friend bool operator==(const BlandAltman&, const BlandAltman&) = default;
};

inline constexpr double kLimitsOfAgreementZ = 1.96;

BlandAltman bland_altman(std::span<const double> preds, std::span<const double> truths);

struct GeneralizationGap {
  double gap = 0.0;
  bool overfit = false;

  friend bool operator==(const GeneralizationGap&, const GeneralizationGap&) = default;
};

inline constexpr double kDefaultOverfitGap = 3.0;

/// gap = test - train; overfit when gap > threshold.
GeneralizationGap generalization_gap(double train_rmse, double test_rmse,
                                     double threshold = kDefaultOverfitGap);

enum class Category { kWellPerforming, kOrdinary, kCollapsed };
std::string to_string(Category c);
Category parse_category(const std::string& s);

struct ClassifyThresholds {
  double collapse_r2 = 0.05;
  double collapse_spread = 0.5;
  double well_performing_rmse = 8.5;
};

struct PerformanceClass {
  Category category = Category::kOrdinary;
  bool overfit = false;

  friend bool operator==(const PerformanceClass&, const PerformanceClass&) = default;
};

/// Collapsed when r2 < collapse_r2 or prediction_sd < collapse_spread;
/// otherwise well-performing when rmse <= well_performing_rmse.
PerformanceClass classify_performance(const MetricsReport& report, double prediction_sd,
                                      std::optional<GeneralizationGap> gap = std::nullopt,
                                      const ClassifyThresholds& thresholds = {});

/// Population standard deviation.
double standard_deviation(std::span<const double> values);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_rmse = 0.0;
  double val_loss = 0.0;
  double val_rmse = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Per-epoch training record. `best_epoch` indexes `epochs` and minimizes
/// val_rmse (first occurrence).
struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  friend bool operator==(const History&, const History&) = default;
};

/// Columns epoch, lr, train_loss, train_rmse, val_loss, val_rmse.
std::string history_csv(const History& h);
History parse_history_csv(const std::string& text);

/// Everything needed to reproduce one run's evaluation artifacts.
struct EvaluationReport {
  std::map<std::string, MetricsReport> splits;
  BlandAltman agreement;
  GeneralizationGap gap;
  PerformanceClass performance;
  double prediction_sd = 0.0;
  std::vector<double> test_predictions;
  std::vector<double> test_truths;
};

/// Metrics for every split, with agreement, gap and class taken from "test"
/// (and "train" for the gap).
EvaluationReport build_report(const std::map<std::string, std::pair<std::vector<double>,
                                                                    std::vector<double>>>& splits,
                              const ClassifyThresholds& thresholds = {},
                              double overfit_threshold = kDefaultOverfitGap);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvaluationReport& r);
/// Inverse of to_json; prediction vectors are not part of the JSON.
EvaluationReport report_from_json(const nlohmann::json& j);

/// Writes pred_vs_truth.csv (truth,pred), bland_altman.csv (mean,diff) and
/// learning_curve.csv into `dir`. Output depends only on the arguments.
void write_plot_data(std::span<const double> preds, std::span<const double> truths,
                     const History& history, const std::filesystem::path& dir);

/// metrics.json plus the plot data, creating `dir` if needed. Top-level
/// fields of `extra` are merged into metrics.json.
void export_report(const EvaluationReport& report, const History& history,
                   const std::filesystem::path& dir,
                   const nlohmann::json& extra = nlohmann::json::object());

/// Reads a truth,pred CSV back into (predictions, truths).
std::pair<std::vector<double>, std::vector<double>> parse_pred_vs_truth_csv(
    const std::string& text);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace echoreg::eval
