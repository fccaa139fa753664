#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "premixer/config.hpp"
#include "premixer/datapipe.hpp"
#include "premixer/metrics.hpp"
#include "premixer/piencoder.hpp"

namespace premixer {

/// Loaded, gap-filled, aggregated, split and normalised dataset.
struct PreparedData {
  RawSeries raw;
  Splits splits;
  Normalizer normalizer;
  Tensor train;  // normalised
  Tensor val;
  Tensor test;
  std::size_t nan_count = 0;
  std::size_t filled = 0;

  std::size_t nodes() const { return raw.nodes(); }
  std::size_t channels() const { return raw.channels(); }
};

PreparedData prepare_data(const RunConfig& config, std::ostream& log);

struct SynthResult {
  std::filesystem::path path;
  Shape shape;
  std::uint32_t crc = 0;
};
SynthResult cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out);

struct PretrainResult {
  std::vector<PretrainLosses> epochs;  // this invocation only
  long steps = 0;
  long epochs_done = 0;
  double recon_mse = 0.0;        // per element, eval mode, normalised units
  double baseline_mse = 0.0;     // mean predictor on the same windows
  std::filesystem::path checkpoint;
};

/// Writes <out>/piencoder (checkpoint with Adam moments), <out>/pretrain_log.csv
/// and <out>/config.resolved.json. With `resume`, continues from the
/// checkpoint in <out>/piencoder up to config.pretrain.epochs.
PretrainResult cmd_pretrain(const RunConfig& config, const std::filesystem::path& out, bool resume,
                            std::ostream& log);

struct TrainResult {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool target_reached = false;
  double final_train_mae = 0.0;  // normalised, eval mode, on the training subset
  std::vector<double> epoch_losses;
  MetricsReport val;
  MetricsReport test;
  std::size_t trainable_parameters = 0;
  std::size_t total_parameters = 0;
  bool encoder_frozen = true;
  std::filesystem::path checkpoint;
};

/// Writes <out>/forecaster, train_log.csv, val_history.csv, metrics_val.*,
/// metrics_test.*, parameters.json and config.resolved.json.
TrainResult cmd_train(const RunConfig& config, const std::filesystem::path& out, std::ostream& log);

/// Re-evaluates a forecaster checkpoint on one split ("train", "val" or
/// "test"). `data` overrides the dataset path recorded in the checkpoint.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint, const std::string& split,
                       const std::filesystem::path& out, std::ostream& log, const std::string& data = {});

/// Trains a forecaster on the target dataset around a frozen encoder
/// pre-trained elsewhere.
TrainResult cmd_transfer(const std::filesystem::path& source_encoder, RunConfig target,
                         const std::filesystem::path& out, std::ostream& log);

struct GradRow {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t seeds = 0;
  std::size_t checked = 0;
  bool pass = false;
};

/// Finite-difference comparison for every layer and both full models,
/// `seeds` random instances each.
std::vector<GradRow> run_gradcheck_suite(std::size_t seeds = 10);
std::string gradcheck_table(const std::vector<GradRow>& rows);

}  // namespace premixer
