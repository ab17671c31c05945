// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <map>

#include "echoreg/binary_io.hpp"
#include "echoreg/model_io.hpp"

namespace echoreg::models {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "echoreg-model";
constexpr int kVersion = 1;

std::string key_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string need_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

double need_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

std::size_t need_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

json structure_of(const Model& model) {
  json s = json::array();
  for (const auto& n : model.nodes()) s.push_back(n.describe());
  return s;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {
      {"family", to_string(c.family)},
      {"norm", to_string(c.norm)},
      {"conv2_kernel", to_string(c.conv2_kernel)},
      {"head", to_string(c.head)},
      {"rnn_cell", to_string(c.rnn_cell)},
      {"width_multiplier", c.width_multiplier},
      {"dropout_rate", c.dropout_rate},
      {"rnn_hidden", c.rnn_hidden},
      {"frames", c.frames},
      {"height", c.height},
      {"width", c.width},
  };
}

bool read_model_key(ModelConfig& c, const std::string& key, const json& v,
                    const std::string& path) {
  if (key == "family") {
    c.family = parse_family(need_string(v, path), path);
  } else if (key == "norm") {
    c.norm = parse_norm(need_string(v, path), path);
  } else if (key == "conv2_kernel") {
    c.conv2_kernel = parse_conv2_kernel(need_string(v, path), path);
  } else if (key == "head") {
    c.head = parse_head(need_string(v, path), path);
  } else if (key == "rnn_cell") {
    c.rnn_cell = parse_rnn_cell(need_string(v, path), path);
  } else if (key == "width_multiplier") {
    c.width_multiplier = need_number(v, path);
  } else if (key == "dropout_rate") {
    c.dropout_rate = need_number(v, path);
  } else if (key == "rnn_hidden") {
    c.rnn_hidden = need_count(v, path);
  } else if (key == "frames") {
    c.frames = need_count(v, path);
  } else if (key == "height") {
    c.height = need_count(v, path);
  } else if (key == "width") {
    c.width = need_count(v, path);
  } else {
    return false;
  }
  return true;
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (!read_model_key(c, key, value, key_path(path, key))) {
      throw ConfigError(key_path(path, key), "unknown key");
    }
  }
  validate(c);
  return c;
}

void save_model(Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const layers::StateRefs refs = model.state();
  json manifest = json::array();
  std::vector<unsigned char> blob;
  std::uint64_t offset = 0;
  const auto add = [&](const std::string& name, const char* role, const Tensor& t) {
    manifest.push_back({{"name", name}, {"role", role}, {"shape", t.shape()}, {"offset", offset}});
    for (double v : t.data()) binary::put_f64(blob, v);
    offset += t.numel();
  };
  for (const auto& p : refs.parameters) add(p.name, "parameter", p.var->value());
  for (const auto& b : refs.buffers) add(b.name, "buffer", *b.tensor);
  const json doc = {
      {"format", kFormat},
      {"version", kVersion},
      {"config", to_json(model.config())},
      {"structure", structure_of(model)},
      {"dtype", "float64"},
      {"byte_order", "little"},
      {"element_count", offset},
      {"tensors", manifest},
  };
  std::ofstream out(dir / "model.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "model.json").string());
  out << doc.dump(2) << "\n";
  binary::write_file((dir / "model.bin").string(), blob);
}

Model load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "model.json").string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(e.byte, std::string("model.json: ") + e.what());
  }
  if (doc.value("format", "") != kFormat || doc.value("version", 0) != kVersion) {
    throw FormatError(0, "model.json: unsupported format or version");
  }
  if (doc.value("dtype", "") != "float64" || doc.value("byte_order", "") != "little") {
    throw FormatError(0, "model.json: only little-endian float64 blobs are supported");
  }
  Model model = build_model(model_config_from_json(doc.at("config"), "config"));
  if (structure_of(model) != doc.at("structure")) {
    throw FormatError(0, "model.json: stored structure does not match the rebuilt graph");
  }
  const std::vector<unsigned char> blob = binary::read_file((dir / "model.bin").string());
  const std::uint64_t elements = doc.at("element_count").get<std::uint64_t>();
  if (blob.size() != elements * 8) {
    throw FormatError(blob.size(), "model.bin: expected " + std::to_string(elements * 8) +
                                       " bytes, found " + std::to_string(blob.size()));
  }
  std::map<std::string, Tensor*> targets;
  layers::StateRefs refs = model.state();
  for (auto& p : refs.parameters) targets[p.name] = &p.var->leaf_value();
  for (auto& b : refs.buffers) targets[b.name] = b.tensor;
  const auto& tensors = doc.at("tensors");
  if (tensors.size() != targets.size()) {
    throw FormatError(0, "model.json: manifest lists " + std::to_string(tensors.size()) +
                             " tensors, model has " + std::to_string(targets.size()));
  }
  for (const auto& entry : tensors) {
    const std::string name = entry.at("name").get<std::string>();
    const auto it = targets.find(name);
    if (it == targets.end()) throw FormatError(0, "model.json: unknown tensor " + name);
    Tensor& t = *it->second;
    if (entry.at("shape").get<Shape>() != t.shape()) {
      throw FormatError(0, "model.json: shape mismatch for " + name);
    }
    const std::uint64_t start = entry.at("offset").get<std::uint64_t>() * 8;
    if (start + t.numel() * 8 > blob.size()) {
      throw FormatError(start, "model.bin: tensor " + name + " runs past the end");
    }
    binary::Reader r(blob);
    r.seek(start);
    for (double& v : t.data()) v = r.f64(name.c_str());
  }
  return model;
}

}  // namespace echoreg::models
