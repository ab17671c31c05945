// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include "echoreg/experiment.hpp"

namespace echoreg::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kAxisKeys[] = {"family", "norm", "conv2_kernel", "head"};

template <typename E, typename Parse>
std::vector<E> read_axis(const json& v, const std::string& path, Parse parse) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array");
  std::vector<E> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = path + "." + std::to_string(i);
    if (!v[i].is_string()) throw ConfigError(p, "expected a string");
    const E e = parse(v[i].get<std::string>(), p);
    if (std::find(out.begin(), out.end(), e) != out.end()) throw ConfigError(p, "duplicate value");
    out.push_back(e);
  }
  return out;
}

template <typename E>
json axis_json(const std::vector<E>& values) {
  json a = json::array();
  for (E e : values) a.push_back(models::to_string(e));
  return a;
}

std::string norm_label(models::NormChoice n) {
  switch (n) {
    case models::NormChoice::kBatch:
      return "BatchNorm";
    case models::NormChoice::kLayer:
      return "LayerNorm";
    case models::NormChoice::kMixed:
      return "Mixed Norm";
  }
  throw std::logic_error("unnamed norm");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

// Keeps free-form messages inside one CSV field.
std::string csv_safe(std::string s) {
  for (char& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  }
  return s;
}

}  // namespace

bool applicable(models::Family family, models::NormChoice norm, models::Conv2Kernel conv2,
                models::HeadVariant head) {
  models::ModelConfig m;
  m.family = family;
  m.norm = norm;
  m.conv2_kernel = conv2;
  m.head = head;
  try {
    models::validate(m);
  } catch (const ConfigError& e) {
    if (e.key() == "norm" || e.key() == "conv2_kernel" || e.key() == "head") return false;
    throw;
  }
  return true;
}

RunConfig cell_config(const GridSpec& grid, models::Family family, models::NormChoice norm,
                      models::Conv2Kernel conv2, models::HeadVariant head) {
  json j = grid.base;
  j["family"] = models::to_string(family);
  j["norm"] = models::to_string(norm);
  j["conv2_kernel"] = models::to_string(conv2);
  j["head"] = models::to_string(head);
  return parse_run_config(j, "base");
}

std::string cell_name(models::Family family, models::NormChoice norm, models::Conv2Kernel conv2,
                      models::HeadVariant head) {
  return models::to_string(family) + "_" + models::to_string(norm) + "_conv2-" +
         models::to_string(conv2) + "_head-" + models::to_string(head);
}

std::string row_label(models::Conv2Kernel conv2, models::NormChoice norm) {
  if (conv2 == models::Conv2Kernel::k1x1x1) return norm_label(norm);
  return models::to_string(conv2) + " Conv2 + " + norm_label(norm);
}

GridSpec parse_grid(const json& j) {
  if (!j.is_object()) throw ConfigError("", "expected an object");
  GridSpec g;
  for (const auto& [key, v] : j.items()) {
    if (key == "families") {
      g.families = read_axis<models::Family>(
          v, key, [](const std::string& s, const std::string& p) { return models::parse_family(s, p); });
    } else if (key == "norms") {
      g.norms = read_axis<models::NormChoice>(
          v, key, [](const std::string& s, const std::string& p) { return models::parse_norm(s, p); });
    } else if (key == "conv2_kernels") {
      g.conv2_kernels = read_axis<models::Conv2Kernel>(v, key, [](const std::string& s,
                                                                  const std::string& p) {
        return models::parse_conv2_kernel(s, p);
      });
    } else if (key == "heads") {
      g.heads = read_axis<models::HeadVariant>(
          v, key, [](const std::string& s, const std::string& p) { return models::parse_head(s, p); });
    } else if (key == "base") {
      if (!v.is_object()) throw ConfigError(key, "expected an object");
      for (const char* axis : kAxisKeys) {
        if (v.contains(axis)) throw ConfigError(std::string("base.") + axis, "set by the grid axes");
      }
      g.base = v;
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  for (auto f : g.families) {
    for (auto n : g.norms) {
      for (auto k : g.conv2_kernels) {
        for (auto h : g.heads) {
          if (applicable(f, n, k, h)) cell_config(g, f, n, k, h);
        }
      }
    }
  }
  return g;
}

json to_json(const GridSpec& g) {
  return {{"families", axis_json(g.families)},
          {"norms", axis_json(g.norms)},
          {"conv2_kernels", axis_json(g.conv2_kernels)},
          {"heads", axis_json(g.heads)},
          {"base", g.base}};
}

GridResult run_grid(const GridSpec& grid, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "cells", ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "grid.json", to_json(grid).dump(2) + "\n");

  GridResult result;
  for (auto f : grid.families) {
    for (auto n : grid.norms) {
      for (auto k : grid.conv2_kernels) {
        for (auto h : grid.heads) {
          GridCell cell;
          cell.family = f;
          cell.norm = n;
          cell.conv2 = k;
          cell.head = h;
          cell.applicable = applicable(f, n, k, h);
          if (!cell.applicable) {
            cell.status = "inapplicable";
            result.cells.push_back(cell);
            continue;
          }
          const fs::path dir = out_dir / "cells" / cell_name(f, n, k, h);
          try {
            const RunResult run = run_experiment(cell_config(grid, f, n, k, h), dir);
            cell.status = train::to_string(run.fit.status);
            if (run.report) cell.test_rmse = run.report->splits.at("test").rmse;
          } catch (const std::exception& e) {
            cell.status = "error";
            cell.error = e.what();
            fs::create_directories(dir, ec);
            write_text(dir / "error.json", json{{"error", cell.error}}.dump(2) + "\n");
          }
          result.cells.push_back(cell);
        }
      }
    }
  }

  std::string cells_csv = "family,norm,conv2_kernel,head,status,test_rmse,directory,error\n";
  for (const auto& c : result.cells) {
    cells_csv += models::to_string(c.family) + "," + models::to_string(c.norm) + "," +
                 models::to_string(c.conv2) + "," + models::to_string(c.head) + "," + c.status +
                 "," + (c.test_rmse ? eval::format_double(*c.test_rmse) : "") + "," +
                 (c.applicable ? "cells/" + cell_name(c.family, c.norm, c.conv2, c.head) : "") +
                 "," + csv_safe(c.error) + "\n";
  }
  write_text(out_dir / "cells.csv", cells_csv);

  const auto find = [&](models::Family f, models::NormChoice n, models::Conv2Kernel k,
                        models::HeadVariant h) -> const GridCell& {
    for (const auto& c : result.cells) {
      if (c.family == f && c.norm == n && c.conv2 == k && c.head == h) return c;
    }
    throw std::logic_error("grid cell missing");
  };
  std::string summary = "configuration";
  for (auto f : grid.families) {
    for (auto h : grid.heads) {
      summary += "," + models::to_string(f) +
                 (grid.heads.size() > 1 ? " head " + models::to_string(h) : "");
    }
  }
  summary += "\n";
  for (auto k : grid.conv2_kernels) {
    for (auto n : grid.norms) {
      summary += row_label(k, n);
      for (auto f : grid.families) {
        for (auto h : grid.heads) {
          const GridCell& c = find(f, n, k, h);
          summary += ",";
          if (!c.applicable) {
            summary += "-";
          } else if (c.test_rmse) {
            summary += eval::format_double(*c.test_rmse);
          } else {
            summary += c.status;
          }
        }
      }
      summary += "\n";
    }
  }
  result.summary = out_dir / "summary.csv";
  write_text(result.summary, summary);
  return result;
}

}  // namespace echoreg::experiment
