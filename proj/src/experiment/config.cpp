// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "echoreg/experiment.hpp"
#include "echoreg/model_io.hpp"

namespace echoreg::experiment {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

double need_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

std::uint64_t need_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<std::int64_t>() < 0)) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool need_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  return v.get<bool>();
}

// A number sets the strength; true selects the default; false or null disables.
std::optional<double> optional_strength(const json& v, double fallback, const std::string& path) {
  if (v.is_null() || (v.is_boolean() && !v.get<bool>())) return std::nullopt;
  if (v.is_boolean()) return fallback;
  return need_number(v, path);
}

bool read_train_key(train::ExperimentConfig& c, const std::string& key, const json& v,
                    const std::string& path) {
  if (key == "initial_lr") {
    c.initial_lr = need_number(v, path);
  } else if (key == "decay_period") {
    c.decay_period = need_count(v, path);
  } else if (key == "decay_factor") {
    c.decay_factor = need_number(v, path);
  } else if (key == "max_epochs") {
    c.max_epochs = need_count(v, path);
  } else if (key == "patience") {
    c.patience = need_count(v, path);
  } else if (key == "batch_size") {
    c.batch_size = need_count(v, path);
  } else if (key == "clip_norm") {
    c.clip_norm = optional_strength(v, train::kDefaultClipNorm, path);
  } else if (key == "l1") {
    c.l1 = optional_strength(v, train::kDefaultRegularization, path).value_or(0.0);
  } else if (key == "l2") {
    c.l2 = optional_strength(v, train::kDefaultRegularization, path).value_or(0.0);
  } else if (key == "weight_decay") {
    c.weight_decay = need_number(v, path);
  } else if (key == "standardize_targets") {
    c.standardize_targets = need_bool(v, path);
  } else if (key == "seed") {
    c.seed = need_count(v, path);
  } else {
    return false;
  }
  return true;
}

struct DataKeys {
  bool cycle_period = false;
  bool center_jitter = false;
};

DataKeys read_data(DataConfig& d, const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  DataKeys given;
  for (const auto& [key, v] : j.items()) {
    const std::string p = join(path, key);
    if (key == "count") {
      d.count = need_count(v, p);
    } else if (key == "ef_min") {
      d.ef_min = need_number(v, p);
    } else if (key == "ef_max") {
      d.ef_max = need_number(v, p);
    } else if (key == "split") {
      if (!v.is_array() || v.size() != 3) throw ConfigError(p, "expected [train, val, test]");
      for (std::size_t i = 0; i < 3; ++i) d.split[i] = need_number(v[i], join(p, std::to_string(i)));
    } else if (key == "seed") {
      d.seed = need_count(v, p);
    } else if (key == "base_radius") {
      d.base_radius = need_number(v, p);
    } else if (key == "cycle_period") {
      d.cycle_period = need_count(v, p);
      given.cycle_period = true;
    } else if (key == "noise_std") {
      d.noise_std = need_number(v, p);
    } else if (key == "center_jitter") {
      d.center_jitter = need_number(v, p);
      given.center_jitter = true;
    } else if (key == "records") {
      if (!v.is_string()) throw ConfigError(p, "expected a path string");
      d.records = v.get<std::string>();
    } else {
      throw ConfigError(p, "unknown key");
    }
  }
  return given;
}

std::size_t train_count(const DataConfig& d) {
  return static_cast<std::size_t>(std::floor(d.split[0] * static_cast<double>(d.count) + 1e-9));
}

void validate_run(const RunConfig& c, const std::string& path) {
  try {
    train::validate(c.train);
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    const std::string message = e.key().empty() ? what : what.substr(e.key().size() + 2);
    throw ConfigError(e.key().empty() ? path : join(path, e.key()), message);
  }
  const std::string dp = join(path, "data");
  const DataConfig& d = c.data;
  double total = 0.0;
  for (double r : d.split) {
    if (!(r > 0.0)) throw ConfigError(join(dp, "split"), "ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(join(dp, "split"), "ratios must sum to 1");
  if (!(d.ef_min >= 0.0 && d.ef_min <= d.ef_max && d.ef_max <= 90.0)) {
    throw ConfigError(join(dp, "ef_min"), "need 0 <= ef_min <= ef_max <= 90");
  }
  if (d.records.empty()) {
    if (d.count < 3) throw ConfigError(join(dp, "count"), "need at least 3 clips");
    if (c.train.batch_size > train_count(d)) {
      throw ConfigError(join(path, "batch_size"),
                        "exceeds the " + std::to_string(train_count(d)) + " training clips");
    }
    try {
      data::SyntheticParams p = dataset_spec(c).base;
      p.target_ef = d.ef_max;
      data::validate(p);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(dp, e.what());
    }
  }
}

}  // namespace

RunConfig parse_run_config(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  if (!j.contains("family")) throw ConfigError(join(path, "family"), "required");
  const std::string family_path = join(path, "family");
  if (!j.at("family").is_string()) throw ConfigError(family_path, "expected a string");
  const models::Family family = models::parse_family(j.at("family").get<std::string>(), family_path);
  models::CellKind cell = models::CellKind::kGru;
  if (j.contains("rnn_cell")) {
    const std::string cell_path = join(path, "rnn_cell");
    if (!j.at("rnn_cell").is_string()) throw ConfigError(cell_path, "expected a string");
    cell = models::parse_rnn_cell(j.at("rnn_cell").get<std::string>(), cell_path);
  }

  RunConfig c;
  c.train = train::defaults_for(family, cell);
  DataKeys given;
  bool patience_given = false;
  for (const auto& [key, value] : j.items()) {
    const std::string p = join(path, key);
    if (key == "data") {
      given = read_data(c.data, value, p);
    } else if (!models::read_model_key(c.train.model, key, value, p) &&
               !read_train_key(c.train, key, value, p)) {
      throw ConfigError(p, "unknown key");
    }
    patience_given = patience_given || key == "patience";
  }
  // A short run keeps early stopping reachable without spelling out patience.
  if (!patience_given) c.train.patience = std::min(c.train.patience, c.train.max_epochs);
  if (!given.cycle_period) c.data.cycle_period = c.train.model.frames;
  if (!given.center_jitter) {
    c.data.center_jitter =
        4.0 * static_cast<double>(std::min(c.train.model.height, c.train.model.width)) / 112.0;
  }
  validate_run(c, path);
  return c;
}

json to_json(const RunConfig& c) {
  json j = models::to_json(c.train.model);
  const auto& t = c.train;
  j["initial_lr"] = t.initial_lr;
  j["decay_period"] = t.decay_period;
  j["decay_factor"] = t.decay_factor;
  j["max_epochs"] = t.max_epochs;
  j["patience"] = t.patience;
  j["batch_size"] = t.batch_size;
  j["clip_norm"] = t.clip_norm ? json(*t.clip_norm) : json(nullptr);
  j["l1"] = t.l1;
  j["l2"] = t.l2;
  j["weight_decay"] = t.weight_decay;
  j["standardize_targets"] = t.standardize_targets;
  j["seed"] = t.seed;
  const auto& d = c.data;
  j["data"] = {
      {"count", d.count},
      {"ef_min", d.ef_min},
      {"ef_max", d.ef_max},
      {"split", d.split},
      {"seed", d.seed},
      {"base_radius", d.base_radius},
      {"cycle_period", d.cycle_period},
      {"noise_std", d.noise_std},
      {"center_jitter", d.center_jitter},
      {"records", d.records},
  };
  return j;
}

json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(e.byte, file.string() + ": invalid JSON");
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const json& overrides) {
  json j = read_json_file(file);
  if (!j.is_object()) throw ConfigError("", "expected an object");
  j.merge_patch(overrides);
  RunConfig c = parse_run_config(j);
  if (!c.data.records.empty() && std::filesystem::path(c.data.records).is_relative()) {
    c.data.records = (file.parent_path() / c.data.records).lexically_normal().string();
  }
  return c;
}

data::DatasetSpec dataset_spec(const RunConfig& c) {
  data::DatasetSpec s;
  s.count = c.data.count;
  s.ef_min = c.data.ef_min;
  s.ef_max = c.data.ef_max;
  s.base.base_radius = c.data.base_radius;
  s.base.cycle_period = c.data.cycle_period;
  s.base.noise_std = c.data.noise_std;
  s.base.center_jitter = c.data.center_jitter;
  s.base.seed = c.data.seed;
  s.base.frames = c.train.model.frames;
  s.base.height = c.train.model.height;
  s.base.width = c.train.model.width;
  return s;
}

std::vector<data::VideoClip> load_dataset(const RunConfig& c) {
  std::vector<data::VideoClip> clips =
      c.data.records.empty() ? data::generate_dataset(dataset_spec(c))
                             : data::read_records(c.data.records);
  const auto& m = c.train.model;
  const Shape expected{m.frames, m.height, m.width, 1};
  for (const auto& clip : clips) {
    if (clip.frames.shape() != expected) {
      throw ConfigError("data.records", "clip shape " + shape_to_string(clip.frames.shape()) +
                                            " does not match the model's " +
                                            shape_to_string(expected));
    }
  }
  return clips;
}

data::DatasetSplit split_for(const RunConfig& c, std::size_t n) {
  return data::split_dataset(n, c.data.split, derive_seed(c.data.seed, 3));
}

}  // namespace echoreg::experiment
