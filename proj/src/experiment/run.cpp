// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <iterator>

#include "echoreg/experiment.hpp"
#include "echoreg/model_io.hpp"

namespace echoreg::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing run artifact " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct SplitClips {
  std::vector<data::VideoClip> train, val, test;
};

SplitClips split_clips(const RunConfig& config) {
  std::vector<data::VideoClip> clips = load_dataset(config);
  const data::DatasetSplit split = split_for(config, clips.size());
  SplitClips out;
  for (std::size_t i : split.train) out.train.push_back(clips[i]);
  for (std::size_t i : split.val) out.val.push_back(clips[i]);
  for (std::size_t i : split.test) out.test.push_back(clips[i]);
  return out;
}

using SplitPredictions =
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>;

// Empty when any prediction is not finite or the forward pass fails numerically.
std::optional<SplitPredictions> predict_splits(models::Model& model, const SplitClips& clips,
                                               std::size_t batch_size, std::string& diagnostic) {
  SplitPredictions out;
  const std::pair<const char*, const std::vector<data::VideoClip>*> named[] = {
      {"train", &clips.train}, {"val", &clips.val}, {"test", &clips.test}};
  for (const auto& [name, set] : named) {
    std::vector<train::ClipInputs> inputs;
    std::vector<double> truths;
    for (const auto& c : *set) {
      inputs.push_back(train::prepare_inputs(model, c));
      truths.push_back(c.label);
    }
    std::vector<double> preds;
    try {
      preds = train::predict(model, inputs, batch_size);
    } catch (const NumericError& e) {
      diagnostic = std::string(name) + " predictions: " + e.what();
      return std::nullopt;
    }
    for (double p : preds) {
      if (!std::isfinite(p)) {
        diagnostic = std::string(name) + " predictions are not finite";
        return std::nullopt;
      }
    }
    out[name] = {std::move(preds), std::move(truths)};
  }
  return out;
}

bool finite_report(const eval::EvaluationReport& r) {
  for (const auto& [name, m] : r.splits) {
    if (!std::isfinite(m.rmse) || !std::isfinite(m.mae) || !std::isfinite(m.r2)) return false;
  }
  return std::isfinite(r.agreement.sd) && std::isfinite(r.prediction_sd);
}

json run_summary(const train::FitResult& fit, std::size_t parameter_count) {
  return {
      {"status", train::to_string(fit.status)},
      {"diagnostic", fit.diagnostic},
      {"epochs_run", fit.history.epochs.size()},
      {"best_epoch", fit.history.epochs.empty() ? json(nullptr) : json(fit.history.best_epoch)},
      {"parameter_count", parameter_count},
  };
}

}  // namespace

RunResult run_experiment(const RunConfig& config, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "config.json", to_json(config).dump(2) + "\n");

  const SplitClips clips = split_clips(config);
  if (clips.train.size() < config.train.batch_size) {
    throw ConfigError("batch_size", "exceeds the " + std::to_string(clips.train.size()) +
                                        " training clips");
  }
  models::Model model =
      models::build_model(config.train.model, train::stream_seed(config.train, train::Stream::kInit));
  RunResult result;
  result.dir = out_dir;
  result.fit = train::fit(model, clips.train, clips.val, config.train);
  write_text(out_dir / "history.csv", eval::history_csv(result.fit.history));
  models::save_model(model, out_dir / "model");

  json summary = run_summary(result.fit, models::count_params(model));
  std::string diagnostic;
  const auto preds = predict_splits(model, clips, config.train.batch_size, diagnostic);
  if (preds) {
    eval::EvaluationReport report = eval::build_report(*preds);
    if (finite_report(report)) {
      result.report = std::move(report);
    } else {
      diagnostic = "evaluation metrics are not finite";
    }
  }
  if (!result.report) {
    // No usable predictions: the run is reported as diverged with whatever history exists.
    result.fit.status = train::FitStatus::kDiverged;
    if (result.fit.diagnostic.empty()) result.fit.diagnostic = diagnostic;
    summary["status"] = train::to_string(result.fit.status);
    summary["diagnostic"] = result.fit.diagnostic;
    write_text(out_dir / "metrics.json", summary.dump(2) + "\n");
    return result;
  }
  eval::export_report(*result.report, result.fit.history, out_dir, summary);
  return result;
}

eval::EvaluationReport evaluate_run(const fs::path& run_dir, const fs::path& out_dir) {
  const RunConfig config = parse_run_config(read_json_file(run_dir / "config.json"));
  models::Model model = models::load_model(run_dir / "model");
  if (!(model.config() == config.train.model)) {
    throw FormatError(0, "model/model.json does not match config.json");
  }
  const json previous = read_json_file(run_dir / "metrics.json");
  const eval::History history = eval::parse_history_csv(read_text(run_dir / "history.csv"));
  const SplitClips clips = split_clips(config);
  std::string diagnostic;
  const auto preds = predict_splits(model, clips, config.train.batch_size, diagnostic);
  if (!preds) throw NumericError("cannot evaluate run: " + diagnostic);
  const eval::EvaluationReport report = eval::build_report(*preds);
  json summary = json::object();
  for (const char* key : {"status", "diagnostic", "epochs_run", "best_epoch", "parameter_count"}) {
    if (previous.contains(key)) summary[key] = previous.at(key);
  }
  eval::export_report(report, history, out_dir, summary);
  return report;
}

void emit_plot_data(const fs::path& run_dir) {
  const json metrics = read_json_file(run_dir / "metrics.json");
  if (!metrics.contains("splits")) {
    throw std::runtime_error(run_dir.string() + " has no evaluation report (status " +
                             metrics.value("status", std::string("unknown")) + ")");
  }
  const auto [preds, truths] = eval::parse_pred_vs_truth_csv(read_text(run_dir / "pred_vs_truth.csv"));
  const eval::History history = eval::parse_history_csv(read_text(run_dir / "history.csv"));
  const std::size_t n = metrics.at("splits").at("test").at("n").get<std::size_t>();
  if (preds.size() != n) {
    throw std::runtime_error("pred_vs_truth.csv has " + std::to_string(preds.size()) +
                             " rows but the test split has " + std::to_string(n));
  }
  eval::write_plot_data(preds, truths, history, run_dir);
}

}  // namespace echoreg::experiment
