// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoreg/train.hpp"

namespace echoreg::experiment {

/// Where the clips come from and how they are split. Clip geometry (frames,
/// height, width) always follows the model config.
struct DataConfig {
  std::size_t count = 64;
  double ef_min = 20.0;
  double ef_max = 80.0;
  std::array<double, 3> split{0.7, 0.15, 0.15};
  std::uint64_t seed = 0;
  double base_radius = 0.3;
  /// Resolved at parse time: one full cycle per clip unless given.
  std::size_t cycle_period = 0;
  double noise_std = 0.05;
  /// Resolved at parse time: 4 pixels per 112 of the shorter frame side.
  double center_jitter = 0.0;
  /// Clip-record file to read instead of generating clips; empty to generate.
  std::string records;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  train::ExperimentConfig train;
  DataConfig data;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// "family" is required and selects the defaults every other key overrides.
/// Unknown keys, type mismatches and invariant violations throw ConfigError
/// whose key is the JSON path (prefixed by `path`).
RunConfig parse_run_config(const nlohmann::json& j, const std::string& path = "");

/// Fully explicit form; parse_run_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& config);

/// Reads a JSON file. Syntax errors throw FormatError with the byte offset;
/// a relative data.records path is resolved against the file's directory.
nlohmann::json read_json_file(const std::filesystem::path& file);
/// `overrides` is merge-patched onto the file contents before parsing.
RunConfig load_run_config(const std::filesystem::path& file,
                          const nlohmann::json& overrides = nlohmann::json::object());

data::DatasetSpec dataset_spec(const RunConfig& config);

/// Generated or read clips, checked against the model's clip geometry.
std::vector<data::VideoClip> load_dataset(const RunConfig& config);

data::DatasetSplit split_for(const RunConfig& config, std::size_t n);

struct RunResult {
  std::filesystem::path dir;
  train::FitResult fit;
  /// Absent when the model could not produce finite predictions.
  std::optional<eval::EvaluationReport> report;
};

/// Writes config.json, model/, history.csv, metrics.json and, when a report
/// exists, pred_vs_truth.csv, bland_altman.csv and learning_curve.csv.
RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out_dir);

/// Reloads a finished run from its directory, recomputes predictions on all
/// splits and exports a fresh report into `out_dir`.
eval::EvaluationReport evaluate_run(const std::filesystem::path& run_dir,
                                    const std::filesystem::path& out_dir);

/// Rewrites the three plot-data CSVs of a run from pred_vs_truth.csv and
/// history.csv. Idempotent; missing artifacts throw std::runtime_error.
void emit_plot_data(const std::filesystem::path& run_dir);

struct GridSpec {
  std::vector<models::Family> families{std::begin(models::kAllFamilies),
                                       std::end(models::kAllFamilies)};
  std::vector<models::NormChoice> norms{models::NormChoice::kBatch, models::NormChoice::kLayer};
  std::vector<models::Conv2Kernel> conv2_kernels{models::Conv2Kernel::k1x1x1,
                                                 models::Conv2Kernel::k3x3x3};
  std::vector<models::HeadVariant> heads{models::HeadVariant::kA};
  /// Shared run-config keys (no "family"); per-family defaults apply first.
  nlohmann::json base = nlohmann::json::object();
};

/// Every applicable cell must yield a valid RunConfig.
GridSpec parse_grid(const nlohmann::json& j);
nlohmann::json to_json(const GridSpec& grid);

/// False when the family has no such axis (e.g. conv2 kernels without an
/// I3D stem); such cells are reported as "-".
bool applicable(models::Family family, models::NormChoice norm, models::Conv2Kernel conv2,
                models::HeadVariant head);

RunConfig cell_config(const GridSpec& grid, models::Family family, models::NormChoice norm,
                      models::Conv2Kernel conv2, models::HeadVariant head);

std::string cell_name(models::Family family, models::NormChoice norm, models::Conv2Kernel conv2,
                      models::HeadVariant head);

struct GridCell {
  models::Family family = models::Family::kI3dMini;
  models::NormChoice norm = models::NormChoice::kBatch;
  models::Conv2Kernel conv2 = models::Conv2Kernel::k1x1x1;
  models::HeadVariant head = models::HeadVariant::kA;
  bool applicable = true;
  /// completed, early_stopped, diverged, error or inapplicable.
  std::string status;
  std::optional<double> test_rmse;
  std::string error;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::filesystem::path summary;
};

/// Row label: "BatchNorm", "3x3x3 Conv2 + LayerNorm", ...
std::string row_label(models::Conv2Kernel conv2, models::NormChoice norm);

/// Runs every applicable cell into out_dir/cells/<name>; a failing cell is
/// recorded and the grid continues. Writes grid.json, cells.csv and
/// summary.csv (one row per kernel x norm, one column per family and head).
GridResult run_grid(const GridSpec& grid, const std::filesystem::path& out_dir);

}  // namespace echoreg::experiment
