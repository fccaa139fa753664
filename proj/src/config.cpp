#include "premixer/config.hpp"

#include <fstream>
#include <set>

#include "premixer/error.hpp"

namespace premixer {
namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  need(aggregate >= 1, "aggregate must be >= 1");
  need(split.train > 0 && split.val > 0 && split.test > 0, "split weights must be positive");
  need(patch_len > 0 && t_long % patch_len == 0,
       "T_long = " + std::to_string(t_long) + " must be divisible by L = " + std::to_string(patch_len));
  need(steps == patch_len,
       "T = " + std::to_string(steps) + " must equal L = " + std::to_string(patch_len) + " (short input is one patch)");
  need(t_long / patch_len >= 2, "T_long must hold at least two patches");
  need(horizon > 0, "horizon must be positive");
  need(mask_ratio_ok(), "pretrain.mask_ratio must be in (0, 1)");
  need(optimizer.lr > 0 && pretrain.lr > 0, "learning rates must be positive");
  need(optimizer.batch > 0 && pretrain.batch > 0, "batch sizes must be positive");
  need(pretrain.stride > 0 && training.stride > 0, "strides must be positive");
  need(dropout >= 0 && dropout < 1 && pretrain.dropout >= 0 && pretrain.dropout < 1, "dropout must be in [0, 1)");
  need(d_pe % 4 == 0 && d_pe > 0, "d_pe must be a positive multiple of 4");
  need(mape_threshold >= 0, "mape_threshold must be non-negative");
}

bool RunConfig::mask_ratio_ok() const { return pretrain.mask_ratio > 0.0 && pretrain.mask_ratio < 1.0; }

ForecasterConfig RunConfig::forecaster(std::size_t nodes, std::size_t channels) const {
  ForecasterConfig f;
  f.steps = steps;
  f.horizon = horizon;
  f.channels = channels;
  f.nodes = nodes;
  f.patch_len = patch_len;
  f.latent = latent;
  f.d_pe = d_pe;
  f.d_model = d_model;
  f.d_emb = d_emb;
  f.d_ctx = d_ctx;
  f.ff_mult = ff_mult;
  f.spatial_layers = spatial_layers;
  f.mode = mode;
  f.aggregation = aggregation;
  f.dropout = dropout;
  f.ablations = ablations;
  return f;
}

json to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"path", c.data},
               {"aggregate", c.aggregate},
               {"fill_max_gap", c.fill_max_gap},
               {"split", {c.split.train, c.split.val, c.split.test}}};
  j["encoder"] = c.encoder;
  j["window"] = {{"T", c.steps}, {"horizon", c.horizon}, {"L", c.patch_len}, {"T_long", c.t_long}};
  j["model"] = {{"D", c.latent},
                {"d_model", c.d_model},
                {"d_pe", c.d_pe},
                {"d_emb", c.d_emb},
                {"d_ctx", c.d_ctx},
                {"ff_mult", c.ff_mult},
                {"spatial_layers", c.spatial_layers},
                {"spatial_mode", to_string(c.mode)},
                {"aggregation", to_string(c.aggregation)},
                {"dropout", c.dropout}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"batch", c.optimizer.batch},
                    {"epochs", c.optimizer.epochs},
                    {"patience", c.optimizer.patience}};
  j["pretrain"] = {{"lr", c.pretrain.lr},
                   {"batch", c.pretrain.batch},
                   {"epochs", c.pretrain.epochs},
                   {"stride", c.pretrain.stride},
                   {"max_windows", c.pretrain.max_windows},
                   {"mask_ratio", c.pretrain.mask_ratio},
                   {"dropout", c.pretrain.dropout}};
  j["training"] = {{"stride", c.training.stride},
                   {"max_train_windows", c.training.max_train_windows},
                   {"max_eval_windows", c.training.max_eval_windows},
                   {"target_train_mae", c.training.target_train_mae}};
  j["ablations"] = to_json(c.ablations);
  j["seed"] = c.seed;
  j["mape_threshold"] = c.mape_threshold;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"data", "encoder", "window", "model", "optimizer", "pretrain", "training", "ablations", "seed",
                       "mape_threshold", "resolved"},
                   "top level");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"path", "aggregate", "fill_max_gap", "split"}, "data");
      read(d, "path", c.data);
      read(d, "aggregate", c.aggregate);
      read(d, "fill_max_gap", c.fill_max_gap);
      if (d.contains("split")) {
        const auto s = d.at("split").get<std::vector<std::size_t>>();
        if (s.size() != 3) throw ConfigError("config: data.split must have three weights");
        c.split = {s[0], s[1], s[2]};
      }
    }
    read(j, "encoder", c.encoder);
    if (j.contains("window")) {
      const auto& w = j.at("window");
      reject_unknown(w, {"T", "horizon", "L", "T_long"}, "window");
      read(w, "T", c.steps);
      read(w, "horizon", c.horizon);
      read(w, "L", c.patch_len);
      read(w, "T_long", c.t_long);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"D", "d_model", "d_pe", "d_emb", "d_ctx", "ff_mult", "spatial_layers", "spatial_mode",
                         "aggregation", "dropout"},
                     "model");
      read(m, "D", c.latent);
      read(m, "d_model", c.d_model);
      read(m, "d_pe", c.d_pe);
      read(m, "d_emb", c.d_emb);
      read(m, "d_ctx", c.d_ctx);
      read(m, "ff_mult", c.ff_mult);
      read(m, "spatial_layers", c.spatial_layers);
      if (m.contains("spatial_mode")) c.mode = parse_spatial_mode(m.at("spatial_mode").get<std::string>());
      if (m.contains("aggregation")) c.aggregation = parse_aggregation(m.at("aggregation").get<std::string>());
      read(m, "dropout", c.dropout);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"lr", "batch", "epochs", "patience"}, "optimizer");
      read(o, "lr", c.optimizer.lr);
      read(o, "batch", c.optimizer.batch);
      read(o, "epochs", c.optimizer.epochs);
      read(o, "patience", c.optimizer.patience);
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      reject_unknown(p, {"lr", "batch", "epochs", "stride", "max_windows", "mask_ratio", "dropout"}, "pretrain");
      read(p, "lr", c.pretrain.lr);
      read(p, "batch", c.pretrain.batch);
      read(p, "epochs", c.pretrain.epochs);
      read(p, "stride", c.pretrain.stride);
      read(p, "max_windows", c.pretrain.max_windows);
      read(p, "mask_ratio", c.pretrain.mask_ratio);
      read(p, "dropout", c.pretrain.dropout);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown(t, {"stride", "max_train_windows", "max_eval_windows", "target_train_mae"}, "training");
      read(t, "stride", c.training.stride);
      read(t, "max_train_windows", c.training.max_train_windows);
      read(t, "max_eval_windows", c.training.max_eval_windows);
      read(t, "target_train_mae", c.training.target_train_mae);
    }
    if (j.contains("ablations")) {
      reject_unknown(j.at("ablations"), {"no_pretrain", "no_cl", "no_context", "no_stpe"}, "ablations");
      c.ablations = ablations_from_json(j.at("ablations"));
    }
    read(j, "seed", c.seed);
    read(j, "mape_threshold", c.mape_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace premixer
