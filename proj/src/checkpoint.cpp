#include "premixer/checkpoint.hpp"

#include <fstream>
#include <set>

#include "premixer/error.hpp"
#include "premixer/pmxt.hpp"

namespace premixer::checkpoint {

namespace fs = std::filesystem;

void save(const fs::path& dir, nlohmann::json manifest, const std::vector<Parameter*>& params,
          const std::vector<AdamState>* adam) {
  fs::create_directories(dir);
  if (adam && adam->size() != params.size()) throw CheckpointError("checkpoint: optimizer state count mismatch");
  manifest["version"] = kVersion;
  nlohmann::json entries = nlohmann::json::array();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!seen.insert(p.name).second) throw CheckpointError("checkpoint: duplicate parameter name " + p.name);
    nlohmann::json e;
    e["name"] = p.name;
    e["file"] = p.name + ".pmxt";
    e["shape"] = p.value.shape();
    pmxt::write(dir / (p.name + ".pmxt"), p.value);
    if (adam) {
      e["adam_m"] = p.name + ".adam_m.pmxt";
      e["adam_v"] = p.name + ".adam_v.pmxt";
      e["adam_step"] = (*adam)[i].step;
      pmxt::write(dir / (p.name + ".adam_m.pmxt"), (*adam)[i].m);
      pmxt::write(dir / (p.name + ".adam_v.pmxt"), (*adam)[i].v);
    }
    entries.push_back(std::move(e));
  }
  manifest["params"] = std::move(entries);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw CheckpointError("checkpoint: cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw CheckpointError("checkpoint: missing manifest " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("version", 0) != kVersion) throw CheckpointError("checkpoint: unsupported version in " + path.string());
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint: bad manifest " + path.string() + ": " + e.what());
  }
}

nlohmann::json load(const fs::path& dir, const std::vector<Parameter*>& params, std::vector<AdamState>* adam) {
  nlohmann::json manifest = read_manifest(dir);
  const auto& entries = manifest.at("params");
  if (entries.size() != params.size())
    throw CheckpointError("checkpoint: " + std::to_string(entries.size()) + " stored parameters, model expects " +
                          std::to_string(params.size()));
  std::vector<AdamState> restored;
  bool have_moments = adam != nullptr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    Parameter& p = *params[i];
    if (e.at("name").get<std::string>() != p.name)
      throw CheckpointError("checkpoint: expected parameter " + p.name + ", found " + e.at("name").get<std::string>());
    Tensor v = pmxt::read(dir / e.at("file").get<std::string>());
    if (v.shape() != p.value.shape())
      throw CheckpointError("checkpoint: parameter " + p.name + " has shape " + shape_str(v.shape()) +
                            ", model expects " + shape_str(p.value.shape()));
    p.value = std::move(v);
    p.grad = Tensor(p.value.shape());
    if (have_moments && e.contains("adam_m")) {
      AdamState s;
      s.m = pmxt::read(dir / e.at("adam_m").get<std::string>());
      s.v = pmxt::read(dir / e.at("adam_v").get<std::string>());
      s.step = e.at("adam_step").get<long>();
      restored.push_back(std::move(s));
    } else {
      have_moments = false;
    }
  }
  if (adam) {
    if (have_moments)
      *adam = std::move(restored);
    else
      adam->clear();
  }
  return manifest;
}

void round_to_float(const std::vector<Parameter*>& params) {
  for (Parameter* p : params)
    for (double& v : p->value.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace premixer::checkpoint
