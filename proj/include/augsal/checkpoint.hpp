#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "augsal/error.hpp"
#include "augsal/nn.hpp"
#include "augsal/tensor_io.hpp"

namespace augsal {

using Json = nlohmann::ordered_json;

inline void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kData, path.string() + ": " + e.what());
  }
}

/// Named parameter arrays (plus optional optimizer moments) stored as AUGSAL1 files with a JSON manifest.
struct Checkpoint {
  std::map<std::string, RawArray> arrays;
  Json meta = Json::object();

  void put(const nn::Param& p) { arrays[p.name] = {{p.shape.begin(), p.shape.end()}, p.value}; }

  void put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<double> values) {
    arrays[name] = {std::move(shape), std::move(values)};
  }

  bool has(const std::string& name) const { return arrays.count(name) != 0; }

  void get(nn::Param& p) const {
    auto it = arrays.find(p.name);
    require(it != arrays.end(), ErrorCode::kData, "checkpoint lacks parameter " + p.name);
    std::vector<std::uint64_t> shape(p.shape.begin(), p.shape.end());
    require(it->second.shape == shape, ErrorCode::kShapeMismatch, "checkpoint shape mismatch for " + p.name);
    p.value = it->second.values;
  }

  void put_all(const nn::ConstParamList& params) {
    for (const auto* p : params) put(*p);
  }
  void put_all(const nn::ParamList& params) {
    for (const auto* p : params) put(*p);
  }
  void get_all(const nn::ParamList& params) const {
    for (auto* p : params) get(*p);
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    Json manifest;
    manifest["format"] = "AUGSAL1-checkpoint";
    manifest["meta"] = meta;
    manifest["params"] = Json::array();
    for (const auto& [name, arr] : arrays) {
      const std::string file = name + ".aug";
      write_array(arr, dir / file);
      manifest["params"].push_back({{"name", name}, {"shape", arr.shape}, {"file", file}});
    }
    write_json(manifest, dir / "manifest.json");
  }

  static Checkpoint load(const std::filesystem::path& dir) {
    require(std::filesystem::exists(dir / "manifest.json"), ErrorCode::kData,
            "no checkpoint manifest in " + dir.string());
    const Json manifest = read_json(dir / "manifest.json");
    Checkpoint ck;
    ck.meta = manifest.value("meta", Json::object());
    for (const auto& entry : manifest.at("params")) {
      auto arr = read_array(dir / entry.at("file").get<std::string>());
      require(arr.shape == entry.at("shape").get<std::vector<std::uint64_t>>(), ErrorCode::kShapeMismatch,
              "manifest shape disagrees with file for " + entry.at("name").get<std::string>());
      ck.arrays[entry.at("name").get<std::string>()] = std::move(arr);
    }
    return ck;
  }
};

inline void save_optimizer(Checkpoint& ck, const std::string& prefix, nn::AdamW& opt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<std::uint64_t> shape = {params[i]->size()};
    ck.put(prefix + ".m." + params[i]->name, shape, opt.first_moments()[i]);
    ck.put(prefix + ".v." + params[i]->name, shape, opt.second_moments()[i]);
  }
  ck.meta[prefix + ".steps"] = opt.steps();
}

inline bool load_optimizer(const Checkpoint& ck, const std::string& prefix, nn::AdamW& opt) {
  if (!ck.meta.contains(prefix + ".steps")) return false;
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto m = ck.arrays.find(prefix + ".m." + params[i]->name);
    const auto v = ck.arrays.find(prefix + ".v." + params[i]->name);
    require(m != ck.arrays.end() && v != ck.arrays.end(), ErrorCode::kData,
            "checkpoint lacks optimizer state for " + params[i]->name);
    opt.first_moments()[i] = m->second.values;
    opt.second_moments()[i] = v->second.values;
  }
  opt.set_steps(ck.meta.at(prefix + ".steps").get<std::uint64_t>());
  return true;
}

}  // namespace augsal
