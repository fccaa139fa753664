#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "premixer/datapipe.hpp"
#include "premixer/forecaster.hpp"

namespace premixer {

struct OptimizerSettings {
  double lr = 0.005;
  std::size_t batch = 32;
  std::size_t epochs = 100;
  std::size_t patience = 10;
};

struct PretrainSettings {
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t epochs = 20;
  std::size_t stride = 12;       // between long-history anchors
  std::size_t max_windows = 0;   // 0 = all
  double mask_ratio = 0.5;
  double dropout = 0.0;
};

struct TrainingSettings {
  std::size_t stride = 1;
  std::size_t max_train_windows = 0;  // 0 = all
  std::size_t max_eval_windows = 0;   // 0 = all
  double target_train_mae = 0.0;      // normalised units; 0 = off
};

/// Everything a run needs. Serialises to a nested JSON document; unknown
/// keys are rejected.
struct RunConfig {
  std::string data;      // series file (.pmxt or .csv)
  std::string encoder;   // PIEncoder checkpoint directory
  std::size_t aggregate = 1;
  std::size_t fill_max_gap = 3;
  SplitSpec split;

  std::size_t steps = 12;    // T
  std::size_t horizon = 12;
  std::size_t patch_len = 12;  // L
  std::size_t t_long = 672;

  std::size_t latent = 96;  // D
  std::size_t d_model = 32;
  std::size_t d_pe = 16;
  std::size_t d_emb = 32;
  std::size_t d_ctx = 64;
  std::size_t ff_mult = 2;
  std::size_t spatial_layers = 2;
  SpatialMode mode = SpatialMode::structured;
  Aggregation aggregation = Aggregation::mean;
  double dropout = 0.1;

  OptimizerSettings optimizer;
  PretrainSettings pretrain;
  TrainingSettings training;
  Ablations ablations;

  std::uint64_t seed = 0;
  double mape_threshold = 1.0;

  void validate() const;
  bool mask_ratio_ok() const;
  ForecasterConfig forecaster(std::size_t nodes, std::size_t channels) const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace premixer
