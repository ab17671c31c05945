// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "echoreg/errors.hpp"
#include "echoreg/eval.hpp"

namespace echoreg::eval {

using nlohmann::json;

namespace {

constexpr const char* kHistoryHeader = "epoch,lr,train_loss,train_rmse,val_loss,val_rmse";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

std::string history_csv(const History& h) {
  std::string s = std::string(kHistoryHeader) + "\n";
  for (const auto& e : h.epochs) {
    s += std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.train_loss) +
         "," + format_double(e.train_rmse) + "," + format_double(e.val_loss) + "," +
         format_double(e.val_rmse) + "\n";
  }
  return s;
}

History parse_history_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader) {
    throw std::invalid_argument("history CSV must start with '" + std::string(kHistoryHeader) + "'");
  }
  History h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 6) throw std::invalid_argument("history row needs 6 fields: " + line);
    h.epochs.push_back({std::stoul(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]),
                        std::stod(f[4]), std::stod(f[5])});
  }
  for (std::size_t i = 1; i < h.epochs.size(); ++i) {
    if (h.epochs[i].val_rmse < h.epochs[h.best_epoch].val_rmse) h.best_epoch = i;
  }
  return h;
}

EvaluationReport build_report(
    const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>& splits,
    const ClassifyThresholds& thresholds, double overfit_threshold) {
  const auto test = splits.find("test");
  if (test == splits.end()) throw std::invalid_argument("report needs a 'test' split");
  EvaluationReport r;
  for (const auto& [name, pt] : splits) r.splits[name] = regression_metrics(pt.first, pt.second);
  r.test_predictions = test->second.first;
  r.test_truths = test->second.second;
  r.agreement = bland_altman(r.test_predictions, r.test_truths);
  r.prediction_sd = standard_deviation(r.test_predictions);
  std::optional<GeneralizationGap> gap;
  if (const auto train = r.splits.find("train"); train != r.splits.end()) {
    gap = generalization_gap(train->second.rmse, r.splits.at("test").rmse, overfit_threshold);
    r.gap = *gap;
  }
  r.performance = classify_performance(r.splits.at("test"), r.prediction_sd, gap, thresholds);
  return r;
}

json to_json(const MetricsReport& m) {
  json j = {{"rmse", m.rmse}, {"mae", m.mae}, {"r2", m.r2}, {"n", m.n}, {"band_n", m.band_n}};
  j["band_mae_40_50"] = m.band_mae_40_50 ? json(*m.band_mae_40_50) : json(nullptr);
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.rmse = j.at("rmse").get<double>();
  m.mae = j.at("mae").get<double>();
  m.r2 = j.at("r2").get<double>();
  m.n = j.at("n").get<std::size_t>();
  m.band_n = j.at("band_n").get<std::size_t>();
  if (!j.at("band_mae_40_50").is_null()) m.band_mae_40_50 = j.at("band_mae_40_50").get<double>();
  return m;
}

json to_json(const EvaluationReport& r) {
  json splits = json::object();
  for (const auto& [name, m] : r.splits) splits[name] = to_json(m);
  return {
      {"splits", splits},
      {"bland_altman",
       {{"bias", r.agreement.bias},
        {"sd", r.agreement.sd},
        {"loa_low", r.agreement.loa_low},
        {"loa_high", r.agreement.loa_high}}},
      {"generalization_gap", {{"gap", r.gap.gap}, {"overfit", r.gap.overfit}}},
      {"classification",
       {{"category", to_string(r.performance.category)}, {"overfit", r.performance.overfit}}},
      {"prediction_sd", r.prediction_sd},
  };
}

EvaluationReport report_from_json(const json& j) {
  EvaluationReport r;
  for (const auto& [name, m] : j.at("splits").items()) r.splits[name] = metrics_from_json(m);
  const auto& ba = j.at("bland_altman");
  r.agreement = {ba.at("bias").get<double>(), ba.at("sd").get<double>(),
                 ba.at("loa_low").get<double>(), ba.at("loa_high").get<double>()};
  const auto& gap = j.at("generalization_gap");
  r.gap = {gap.at("gap").get<double>(), gap.at("overfit").get<bool>()};
  const auto& cls = j.at("classification");
  r.performance = {parse_category(cls.at("category").get<std::string>()),
                   cls.at("overfit").get<bool>()};
  r.prediction_sd = j.at("prediction_sd").get<double>();
  return r;
}

void write_plot_data(std::span<const double> preds, std::span<const double> truths,
                     const History& history, const std::filesystem::path& dir) {
  if (preds.empty() || preds.size() != truths.size()) {
    throw std::invalid_argument("plot data needs equally many non-zero predictions and truths");
  }
  std::string pvt = "truth,pred\n";
  std::string ba = "mean,diff\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    pvt += format_double(truths[i]) + "," + format_double(preds[i]) + "\n";
    ba += format_double((preds[i] + truths[i]) / 2.0) + "," + format_double(preds[i] - truths[i]) +
          "\n";
  }
  write_text(dir / "pred_vs_truth.csv", pvt);
  write_text(dir / "bland_altman.csv", ba);
  write_text(dir / "learning_curve.csv", history_csv(history));
}

void export_report(const EvaluationReport& report, const History& history,
                   const std::filesystem::path& dir, const json& extra) {
  if (report.splits.empty() || report.test_predictions.empty()) {
    throw std::invalid_argument("export_report needs metrics and test predictions");
  }
  if (!extra.is_object()) throw std::invalid_argument("extra metrics must be a JSON object");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  json metrics = to_json(report);
  metrics.update(extra);
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_plot_data(report.test_predictions, report.test_truths, history, dir);
}

std::pair<std::vector<double>, std::vector<double>> parse_pred_vs_truth_csv(
    const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "truth,pred") {
    throw FormatError(0, "pred_vs_truth: expected header 'truth,pred'");
  }
  std::pair<std::vector<double>, std::vector<double>> out;
  std::uint64_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const auto f = split_fields(line);
    if (f.size() != 2) throw FormatError(offset, "pred_vs_truth: expected 2 fields");
    try {
      out.second.push_back(std::stod(f[0]));
      out.first.push_back(std::stod(f[1]));
    } catch (const std::exception&) {
      throw FormatError(offset, "pred_vs_truth: not a number");
    }
    offset += line.size() + 1;
  }
  if (out.first.empty()) throw FormatError(offset, "pred_vs_truth: no rows");
  return out;
}

}  // namespace echoreg::eval
