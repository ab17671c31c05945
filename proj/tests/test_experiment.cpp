// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "echoreg/experiment.hpp"

namespace echoreg::experiment {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using models::Family;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << p;
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("echoreg_experiment_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string config_key_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<accepted>";
}

// Small enough that a run takes well under a second.
json tiny(const std::string& family) {
  return {{"family", family}, {"width_multiplier", 0.25}, {"frames", 6}, {"height", 16},
          {"width", 16},      {"rnn_hidden", 8},          {"max_epochs", 2},
          {"batch_size", 2},  {"data", {{"count", 12}}}};
}

json tiny_base() {
  json b = tiny("I3D_MINI");
  b.erase("family");
  return b;
}

TEST(Config, FamilyDefaults) {
  const RunConfig mini = parse_run_config({{"family", "I3D_MINI"}});
  EXPECT_EQ(mini.train.initial_lr, 1e-3);
  EXPECT_EQ(mini.train.patience, 20u);
  EXPECT_EQ(mini.train.model.dropout_rate, 0.5);
  const RunConfig ts = parse_run_config({{"family", "TWO_STREAM"}});
  EXPECT_EQ(ts.train.batch_size, 16u);
  EXPECT_EQ(ts.train.initial_lr, 5e-4);
  EXPECT_EQ(ts.train.model.dropout_rate, 0.05);
  EXPECT_EQ(ts.train.model.family, Family::kTwoStream);
  EXPECT_EQ(ts.data.cycle_period, 28u);
  EXPECT_EQ(ts.data.center_jitter, 4.0);
}

TEST(Config, RejectionsNameTheKeyPath) {
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"momentmu", 0.9}}), "momentmu");
  EXPECT_EQ(config_key_of({{"norm", "batch"}}), "family");
  EXPECT_EQ(config_key_of({{"family", "I3D_MAXI"}}), "family");
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"initial_lr", "fast"}}), "initial_lr");
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"batch_size", -1}}), "batch_size");
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"data", {{"bogus", 1}}}}), "data.bogus");
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"data", {{"split", {0.5, 0.5}}}}}),
            "data.split");
  EXPECT_EQ(config_key_of({{"family", "I3D_MINI"}, {"max_epochs", 5}, {"patience", 6}}),
            "patience");
  EXPECT_EQ(config_key_of({{"family", "TWO_STREAM"}, {"conv2_kernel", "3x3x3"}}), "conv2_kernel");
  EXPECT_EQ(config_key_of({{"family", "TWO_STREAM"}, {"data", {{"count", 10}}}}), "batch_size");
  try {
    parse_run_config({{"family", "I3D_MINI"}, {"patience", 90}}, "base");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "base.patience");
  }
}

TEST(Config, OptionalStrengthsAndPatienceClamp) {
  const RunConfig c = parse_run_config(
      {{"family", "I3D_MINI"}, {"clip_norm", true}, {"l2", true}, {"l1", false}, {"max_epochs", 2}});
  EXPECT_EQ(c.train.clip_norm, 1.0);
  EXPECT_EQ(c.train.l2, 1e-4);
  EXPECT_EQ(c.train.l1, 0.0);
  EXPECT_EQ(c.train.patience, 2u);
}

TEST(Config, JsonRoundTripIsExact) {
  for (Family f : models::kAllFamilies) {
    json j = tiny(models::to_string(f));
    j["initial_lr"] = 3.3e-4;
    j["clip_norm"] = 0.7;
    j["weight_decay"] = 1e-5;
    j["data"]["noise_std"] = 0.0123;
    const RunConfig c = parse_run_config(j);
    EXPECT_EQ(parse_run_config(to_json(c)), c) << models::to_string(f);
    EXPECT_EQ(parse_run_config(json::parse(to_json(c).dump())), c);
  }
}

TEST(Config, FileSyntaxErrorCarriesOffset) {
  const fs::path dir = fresh_dir("syntax");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << "{\"family\": \"I3D_MINI\",, }";
  try {
    load_run_config(dir / "c.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(Run, ArtifactContractAndDeterminism) {
  const RunConfig c = parse_run_config(tiny("I3D_MINI"));
  const fs::path a = fresh_dir("run_a"), b = fresh_dir("run_b");
  const RunResult ra = run_experiment(c, a);
  ASSERT_TRUE(ra.report.has_value());
  for (const char* f : {"config.json", "history.csv", "metrics.json", "pred_vs_truth.csv",
                        "bland_altman.csv", "learning_curve.csv", "model/model.json",
                        "model/model.bin"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  run_experiment(c, b);
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
  EXPECT_EQ(slurp(a / "model/model.bin"), slurp(b / "model/model.bin"));

  // The snapshot alone reproduces the run.
  const fs::path r = fresh_dir("run_replay");
  run_experiment(load_run_config(a / "config.json"), r);
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(r / "metrics.json"));

  const json m = json::parse(slurp(a / "metrics.json"));
  EXPECT_EQ(m.at("status"), train::to_string(ra.fit.status));
  EXPECT_EQ(m.at("splits").at("test").at("rmse").get<double>(), ra.report->splits.at("test").rmse);
  EXPECT_EQ(slurp(a / "history.csv"), slurp(a / "learning_curve.csv"));
}

TEST(Run, DifferentSeedsDiffer) {
  json j = tiny("I3D_MINI");
  const fs::path a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
  run_experiment(parse_run_config(j), a);
  j["seed"] = 1;
  run_experiment(parse_run_config(j), b);
  EXPECT_NE(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
}

TEST(Run, TinyLearningRateIsClassifiedCollapsed) {
  json j = tiny("I3D_MINI");
  j["initial_lr"] = 1e-12;
  j["data"]["count"] = 40;
  const RunResult r = run_experiment(parse_run_config(j), fresh_dir("collapse"));
  ASSERT_TRUE(r.report.has_value());
  EXPECT_EQ(r.report->performance.category, eval::Category::kCollapsed);
}

TEST(Run, DivergenceStillWritesArtifacts) {
  json j = tiny("I3D_MINI");
  j["initial_lr"] = 1e300;
  const fs::path dir = fresh_dir("diverge");
  const RunResult r = run_experiment(parse_run_config(j), dir);
  EXPECT_EQ(r.fit.status, train::FitStatus::kDiverged);
  const json m = json::parse(slurp(dir / "metrics.json"));
  EXPECT_EQ(m.at("status"), "diverged");
  EXPECT_FALSE(m.at("diagnostic").get<std::string>().empty());
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "history.csv"));
  EXPECT_THROW(emit_plot_data(dir), std::runtime_error);
}

TEST(Run, EvaluateReproducesMetricsFromArtifacts) {
  for (const char* family : {"I3D_MINI", "TWO_STREAM", "CNN_RNN_SCRATCH"}) {
    const fs::path dir = fresh_dir(std::string("eval_") + family);
    run_experiment(parse_run_config(tiny(family)), dir);
    evaluate_run(dir, dir / "evaluation");
    EXPECT_EQ(slurp(dir / "metrics.json"), slurp(dir / "evaluation" / "metrics.json")) << family;
    EXPECT_EQ(slurp(dir / "pred_vs_truth.csv"), slurp(dir / "evaluation" / "pred_vs_truth.csv"));
  }
}

TEST(Run, RecordFileGivesTheSameRunAsGeneration) {
  const fs::path dir = fresh_dir("records");
  const RunConfig generated = parse_run_config(tiny("I3D_MINI"));
  fs::create_directories(dir);
  data::write_records(load_dataset(generated), dir / "clips.rec");
  json j = tiny("I3D_MINI");
  j["data"]["records"] = "clips.rec";
  std::ofstream(dir / "c.json") << j.dump();
  const RunConfig from_file = load_run_config(dir / "c.json");
  EXPECT_EQ(from_file.data.records, (dir / "clips.rec").string());
  run_experiment(generated, dir / "gen");
  run_experiment(from_file, dir / "rec");
  const json a = json::parse(slurp(dir / "gen" / "metrics.json"));
  const json b = json::parse(slurp(dir / "rec" / "metrics.json"));
  EXPECT_EQ(a.at("splits"), b.at("splits"));

  json wrong = tiny("I3D_MINI");
  wrong["frames"] = 8;
  wrong["data"]["records"] = (dir / "clips.rec").string();
  EXPECT_THROW(load_dataset(parse_run_config(wrong)), ConfigError);
}

TEST(Plots, SchemaCardinalityAndIdempotence) {
  const fs::path dir = fresh_dir("plots");
  const RunResult r = run_experiment(parse_run_config(tiny("TWO_STREAM")), dir);
  const std::string lc = slurp(dir / "learning_curve.csv");
  EXPECT_EQ(lc.substr(0, lc.find('\n')), "epoch,lr,train_loss,train_rmse,val_loss,val_rmse");
  const std::string pvt = slurp(dir / "pred_vs_truth.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(pvt.begin(), pvt.end(), '\n')) - 1,
            r.report->splits.at("test").n);
  const std::string ba = slurp(dir / "bland_altman.csv");
  for (int i = 0; i < 2; ++i) {
    emit_plot_data(dir);
    EXPECT_EQ(slurp(dir / "pred_vs_truth.csv"), pvt);
    EXPECT_EQ(slurp(dir / "bland_altman.csv"), ba);
    EXPECT_EQ(slurp(dir / "learning_curve.csv"), lc);
  }
  fs::remove(dir / "history.csv");
  EXPECT_THROW(emit_plot_data(dir), std::runtime_error);
  EXPECT_THROW(emit_plot_data(fresh_dir("plots_missing")), std::runtime_error);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

TEST(Grid, TwoFamiliesTwoNormsGiveFourCells) {
  const json g = {{"families", {"I3D_MINI", "TWO_STREAM"}},
                  {"conv2_kernels", {"1x1x1"}},
                  {"base", tiny_base()}};
  const GridResult r = run_grid(parse_grid(g), fresh_dir("grid4"));
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells) {
    EXPECT_TRUE(c.applicable);
    EXPECT_TRUE(c.test_rmse.has_value()) << c.status << " " << c.error;
  }
}

TEST(Grid, SummaryLayoutAndCellValues) {
  const json g = {{"families", {"I3D_MINI", "TWO_STREAM", "CNN_RNN_SCRATCH"}},
                  {"base", tiny_base()}};
  const fs::path dir = fresh_dir("grid_summary");
  const GridResult r = run_grid(parse_grid(g), dir);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"configuration", "I3D_MINI", "TWO_STREAM",
                                               "CNN_RNN_SCRATCH"}));
  const std::vector<std::string> labels{"BatchNorm", "LayerNorm", "3x3x3 Conv2 + BatchNorm",
                                        "3x3x3 Conv2 + LayerNorm"};
  const char* norms[] = {"batch", "layer", "batch", "layer"};
  const char* kernels[] = {"1x1x1", "1x1x1", "3x3x3", "3x3x3"};
  for (std::size_t row = 1; row <= 4; ++row) {
    ASSERT_EQ(rows[row].size(), 4u);
    EXPECT_EQ(rows[row][0], labels[row - 1]);
    for (std::size_t col = 1; col <= 3; ++col) {
      const bool conv2_row = row >= 3;
      if (conv2_row && col >= 2) {
        EXPECT_EQ(rows[row][col], "-");
        continue;
      }
      const fs::path metrics = dir / "cells" /
                               (rows[0][col] + "_" + norms[row - 1] + "_conv2-" +
                                kernels[row - 1] + "_head-A") /
                               "metrics.json";
      const double cell = std::stod(rows[row][col]);
      EXPECT_EQ(cell, json::parse(slurp(metrics)).at("splits").at("test").at("rmse").get<double>())
          << metrics;
    }
  }
  EXPECT_EQ(r.cells.size(), 12u);
  EXPECT_EQ(read_csv(dir / "cells.csv").size(), 13u);
}

TEST(Grid, CellFailureIsRecordedAndGridContinues) {
  json base = tiny_base();
  base["data"]["records"] = "/nonexistent/clips.rec";
  const json g = {{"families", {"I3D_MINI", "TWO_STREAM"}},
                  {"norms", {"batch"}},
                  {"conv2_kernels", {"1x1x1"}},
                  {"base", base}};
  const fs::path dir = fresh_dir("grid_fail");
  const GridResult r = run_grid(parse_grid(g), dir);
  ASSERT_EQ(r.cells.size(), 2u);
  for (const auto& c : r.cells) {
    EXPECT_EQ(c.status, "error");
    EXPECT_FALSE(c.error.empty());
  }
  EXPECT_EQ(read_csv(dir / "summary.csv")[1],
            (std::vector<std::string>{"BatchNorm", "error", "error"}));
  EXPECT_TRUE(fs::exists(dir / "cells" / cell_name(Family::kI3dMini, models::NormChoice::kBatch,
                                                   models::Conv2Kernel::k1x1x1,
                                                   models::HeadVariant::kA) /
                         "error.json"));
}

TEST(Grid, ParseRejections) {
  const auto key_of = [](const json& g) -> std::string {
    try {
      parse_grid(g);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return "<accepted>";
  };
  EXPECT_EQ(key_of({{"famlies", {"I3D_MINI"}}}), "famlies");
  EXPECT_EQ(key_of({{"families", json::array()}}), "families");
  EXPECT_EQ(key_of({{"families", {"I3D_MINI", "I3D_MINI"}}}), "families.1");
  EXPECT_EQ(key_of({{"norms", {"group"}}}), "norms.0");
  EXPECT_EQ(key_of({{"base", {{"family", "I3D_MINI"}}}}), "base.family");
  EXPECT_EQ(key_of({{"base", {{"momentmu", 1}}}}), "base.momentmu");
  EXPECT_EQ(key_of({{"base", tiny_base()}}), "<accepted>");
}

TEST(Grid, Applicability) {
  using models::Conv2Kernel;
  using models::HeadVariant;
  using models::NormChoice;
  EXPECT_TRUE(applicable(Family::kI3dMini, NormChoice::kLayer, Conv2Kernel::k3x3x3, HeadVariant::kC));
  EXPECT_FALSE(applicable(Family::kTwoStream, NormChoice::kBatch, Conv2Kernel::k3x3x3,
                          HeadVariant::kA));
  EXPECT_FALSE(applicable(Family::kCnnRnnScratch, NormChoice::kBatch, Conv2Kernel::k3x3x3,
                          HeadVariant::kA));
  EXPECT_TRUE(applicable(Family::kCnnRnnScratch, NormChoice::kMixed, Conv2Kernel::k1x1x1,
                         HeadVariant::kA));
  EXPECT_FALSE(applicable(Family::kI3dMini, NormChoice::kMixed, Conv2Kernel::k1x1x1,
                          HeadVariant::kA));
  EXPECT_EQ(row_label(Conv2Kernel::k1x1x1, NormChoice::kLayer), "LayerNorm");
  EXPECT_EQ(row_label(Conv2Kernel::k3x3x3, NormChoice::kBatch), "3x3x3 Conv2 + BatchNorm");
}

}  // namespace
}  // namespace echoreg::experiment
