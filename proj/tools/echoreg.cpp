// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Results go to stdout as JSON; failures go to stderr
// as a single JSON object and a nonzero exit status.
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "echoreg/experiment.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
namespace ex = echoreg::experiment;

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3 };

int report_error(const std::string& kind, const std::string& message, int code,
                 json details = json::object()) {
  json j = {{"error", kind}, {"message", message}};
  j.update(details);
  std::cerr << j.dump() << "\n";
  return code;
}

struct Options {
  fs::path config;
  fs::path out;
  fs::path run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> width_multiplier;
};

json training_overrides(const Options& o) {
  json j = json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.width_multiplier) j["width_multiplier"] = *o.width_multiplier;
  return j;
}

json run_summary(const ex::RunResult& r) {
  json j = {{"dir", r.dir.string()},
            {"status", echoreg::train::to_string(r.fit.status)},
            {"epochs_run", r.fit.history.epochs.size()}};
  if (r.report) {
    j["test_rmse"] = r.report->splits.at("test").rmse;
    j["test_r2"] = r.report->splits.at("test").r2;
    j["category"] = echoreg::eval::to_string(r.report->performance.category);
  }
  return j;
}

int generate_data(const Options& o) {
  json overrides = json::object();
  if (o.seed) overrides["data"] = {{"seed", *o.seed}};
  ex::RunConfig config = ex::load_run_config(o.config, overrides);
  config.data.records.clear();
  const auto clips = echoreg::data::generate_dataset(ex::dataset_spec(config));
  fs::create_directories(o.out);
  const fs::path records = o.out / "clips.rec";
  echoreg::data::write_records(clips, records);
  std::ofstream(o.out / "dataset.json") << ex::to_json(config).at("data").dump(2) << "\n";
  std::cout << json{{"records", records.string()}, {"count", clips.size()}}.dump() << "\n";
  return kOk;
}

int train(const Options& o) {
  const ex::RunConfig config = ex::load_run_config(o.config, training_overrides(o));
  std::cout << run_summary(ex::run_experiment(config, o.out)).dump() << "\n";
  return kOk;
}

int evaluate(const Options& o) {
  const fs::path out = o.out.empty() ? o.run_dir / "evaluation" : o.out;
  const auto report = ex::evaluate_run(o.run_dir, out);
  json j = echoreg::eval::to_json(report);
  j["dir"] = out.string();
  std::cout << j.dump() << "\n";
  return kOk;
}

int grid(const Options& o) {
  json j = ex::read_json_file(o.config);
  if (!j.is_object()) throw echoreg::ConfigError("", "expected an object");
  const json overrides = training_overrides(o);
  if (!overrides.empty()) {
    if (!j.contains("base")) j["base"] = json::object();
    j["base"].merge_patch(overrides);
  }
  const ex::GridResult result = ex::run_grid(ex::parse_grid(j), o.out);
  std::size_t failed = 0;
  for (const auto& c : result.cells) failed += c.status == "error";
  std::cout << json{{"summary", result.summary.string()},
                    {"cells", result.cells.size()},
                    {"failed", failed}}
                   .dump()
            << "\n";
  return kOk;
}

int emit_plots(const Options& o) {
  ex::emit_plot_data(o.run_dir);
  std::cout << json{{"dir", o.run_dir.string()},
                    {"files", {"pred_vs_truth.csv", "bland_altman.csv", "learning_curve.csv"}}}
                   .dump()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video regression experiments on synthetic clips"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic clip-record file");
  gen->add_option("--config", o.config, "Run config JSON (data section and clip geometry)")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--seed", o.seed, "Dataset seed");

  auto* tr = app.add_subcommand("train", "Train and evaluate one configuration");
  tr->add_option("--config", o.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", o.out, "Run directory")->required();
  tr->add_option("--seed", o.seed, "Training seed");
  tr->add_option("--width-multiplier", o.width_multiplier, "Channel width multiplier in (0, 1]");

  auto* ev = app.add_subcommand("evaluate", "Re-evaluate a finished run from its artifacts");
  ev->add_option("run_dir", o.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", o.out, "Output directory (default <run_dir>/evaluation)");

  auto* gr = app.add_subcommand("grid", "Run a configuration grid and write summary.csv");
  gr->add_option("--config", o.config, "Grid JSON")->required()->check(CLI::ExistingFile);
  gr->add_option("--out", o.out, "Output directory")->required();
  gr->add_option("--seed", o.seed, "Training seed for every cell");
  gr->add_option("--width-multiplier", o.width_multiplier, "Width multiplier for every cell");

  auto* ep = app.add_subcommand("emit-plots", "Rewrite the plot-data CSVs of a run");
  ep->add_option("run_dir", o.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsage);
  }

  try {
    if (gen->parsed()) return generate_data(o);
    if (tr->parsed()) return train(o);
    if (ev->parsed()) return evaluate(o);
    if (gr->parsed()) return grid(o);
    return emit_plots(o);
  } catch (const echoreg::ConfigError& e) {
    return report_error("config", e.what(), kConfig, {{"key", e.key()}});
  } catch (const echoreg::FormatError& e) {
    return report_error("format", e.what(), kFailure, {{"offset", e.offset()}});
  } catch (const echoreg::ShapeError& e) {
    return report_error("shape", e.what(), kFailure);
  } catch (const echoreg::NumericError& e) {
    return report_error("numeric", e.what(), kFailure);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), kFailure);
  }
}
