// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "echoreg/eval.hpp"

namespace echoreg::eval {

namespace {

void require_pairs(std::span<const double> p, std::span<const double> t, std::size_t min_n) {
  if (p.size() != t.size()) {
    throw std::invalid_argument("predictions (" + std::to_string(p.size()) + ") and truths (" +
                                std::to_string(t.size()) + ") differ in length");
  }
  if (p.size() < min_n) {
    throw std::invalid_argument("need at least " + std::to_string(min_n) + " samples");
  }
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double rmse(std::span<const double> preds, std::span<const double> truths) {
  require_pairs(preds, truths, 1);
  double se = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) se += (preds[i] - truths[i]) * (preds[i] - truths[i]);
  return std::sqrt(se / static_cast<double>(preds.size()));
}

MetricsReport regression_metrics(std::span<const double> preds, std::span<const double> truths) {
  require_pairs(preds, truths, 2);
  const double tm = mean(truths);
  double se = 0.0, ae = 0.0, tv = 0.0, band_ae = 0.0;
  std::size_t band_n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    se += d * d;
    ae += std::abs(d);
    tv += (truths[i] - tm) * (truths[i] - tm);
    if (truths[i] >= 40.0 && truths[i] <= 50.0) {
      band_ae += std::abs(d);
      ++band_n;
    }
  }
  if (!(tv > 0.0)) throw std::invalid_argument("truths have zero variance; r2 is undefined");
  const double n = static_cast<double>(preds.size());
  MetricsReport r;
  r.n = preds.size();
  r.rmse = std::sqrt(se / n);
  r.mae = ae / n;
  r.r2 = 1.0 - se / tv;
  r.band_n = band_n;
  if (band_n > 0) r.band_mae_40_50 = band_ae / static_cast<double>(band_n);
  return r;
}

BlandAltman bland_altman(std::span<const double> preds, std::span<const double> truths) {
  require_pairs(preds, truths, 2);
  std::vector<double> diff(preds.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = preds[i] - truths[i];
  BlandAltman b;
  b.bias = mean(diff);
  double ss = 0.0;
  for (double d : diff) ss += (d - b.bias) * (d - b.bias);
  b.sd = std::sqrt(ss / static_cast<double>(diff.size() - 1));
  b.loa_low = b.bias - kLimitsOfAgreementZ * b.sd;
  b.loa_high = b.bias + kLimitsOfAgreementZ * b.sd;
  return b;
}

GeneralizationGap generalization_gap(double train_rmse, double test_rmse, double threshold) {
  if (!(train_rmse >= 0.0 && test_rmse >= 0.0)) {
    throw std::invalid_argument("RMSE values must be non-negative");
  }
  const double gap = test_rmse - train_rmse;
  return {gap, gap > threshold};
}

std::string to_string(Category c) {
  switch (c) {
    case Category::kWellPerforming:
      return "well_performing";
    case Category::kOrdinary:
      return "ordinary";
    case Category::kCollapsed:
      return "collapsed";
  }
  return "?";
}

Category parse_category(const std::string& s) {
  for (Category c : {Category::kWellPerforming, Category::kOrdinary, Category::kCollapsed}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown performance category '" + s + "'");
}

PerformanceClass classify_performance(const MetricsReport& report, double prediction_sd,
                                      std::optional<GeneralizationGap> gap,
                                      const ClassifyThresholds& th) {
  PerformanceClass c;
  c.overfit = gap && gap->overfit;
  if (report.r2 < th.collapse_r2 || prediction_sd < th.collapse_spread) {
    c.category = Category::kCollapsed;
  } else if (report.rmse <= th.well_performing_rmse) {
    c.category = Category::kWellPerforming;
  } else {
    c.category = Category::kOrdinary;
  }
  return c;
}

double standard_deviation(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("standard deviation of an empty set");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace echoreg::eval
