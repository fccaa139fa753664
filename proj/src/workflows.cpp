#include "premixer/workflows.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "premixer/checkpoint.hpp"
#include "premixer/error.hpp"
#include "premixer/forecaster.hpp"
#include "premixer/pmxt.hpp"

namespace premixer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Rng stream ids, one namespace per purpose.
constexpr std::uint64_t kStreamEncoderInit = 10;
constexpr std::uint64_t kStreamForecasterInit = 30;
constexpr std::uint64_t kStreamSubset = 21;
constexpr std::uint64_t kStreamDropout = 3;
constexpr std::uint64_t kStreamPretrainOrder = 1ull << 32;
constexpr std::uint64_t kStreamPretrainStep = 2ull << 32;
constexpr std::uint64_t kStreamTrainOrder = 3ull << 32;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_out(const fs::path& p, bool append = false) {
  std::ofstream out(p, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

bool unchanged(const std::vector<Parameter*>& params, const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!bit_equal(params[i]->value, snap[i])) return false;
  return true;
}

// Forecasts for every window of `sampler` in order, eval mode.
// Returns normalised predictions and targets, [S × horizon × N × C].
std::pair<Tensor, Tensor> predict_all(const PreMixer& model, const WindowSampler& sampler, std::size_t chunk = 64) {
  const std::size_t total = sampler.size();
  if (total == 0) throw DataError("evaluation split has no windows");
  Tensor preds, truths;
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Batch b = assemble_batch(sampler, idx);
    Tensor yhat = model.forward(b.x, false, nullptr);
    if (begin == 0) {
      Shape s = yhat.shape();
      s[0] = total;
      preds = Tensor(s);
      truths = Tensor(s);
    }
    const std::size_t per = yhat.size() / yhat.dim(0);
    std::copy(yhat.ptr(), yhat.ptr() + yhat.size(), preds.ptr() + begin * per);
    std::copy(b.y.ptr(), b.y.ptr() + b.y.size(), truths.ptr() + begin * per);
  }
  return {std::move(preds), std::move(truths)};
}

MetricsReport evaluate(const PreMixer& model, const WindowSampler& sampler, const Normalizer& norm,
                       const RunConfig& config) {
  auto [pred, truth] = predict_all(model, sampler);
  ReportOptions opt;
  opt.mape_threshold = config.mape_threshold;
  opt.allow_any_horizon = config.horizon != 12;
  return horizon_report(norm.denormalize(pred), norm.denormalize(truth), opt);
}

double normalised_mae(const PreMixer& model, const WindowSampler& sampler) {
  auto [pred, truth] = predict_all(model, sampler);
  return regression_loss(pred, truth);
}

WindowSampler eval_windows(const Tensor& series, const RunConfig& c) {
  WindowSampler s = sample_windows(series, c.steps, c.horizon, c.steps, 1);
  if (c.training.max_eval_windows > 0) s.truncate(c.training.max_eval_windows);
  return s;
}

json parameter_summary(PreMixer& model) {
  json names = json::array();
  for (Parameter* p : model.trainable_parameters()) names.push_back({{"name", p->name}, {"size", p->size()}});
  json j;
  j["trainable"] = model.trainable_count();
  j["total"] = model.total_count();
  j["encoder"] = model.encoder() ? count_parameters(model.encoder()->parameters()) : 0;
  j["optimizer_set"] = std::move(names);
  return j;
}

void write_history(std::ofstream& out, std::size_t epoch, const MetricsReport& r) {
  for (const auto& row : r.rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f\n", epoch, row.label.c_str(), row.values.mae,
                  row.values.rmse, row.values.mape);
    out << buf;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& config, std::ostream& log) {
  if (config.data.empty()) throw ConfigError("no dataset path configured");
  PreparedData d;
  RawSeries raw = load_series(config.data, &d.nan_count);
  log << "[data] " << config.data << ": " << shape_str(raw.values.shape()) << ", " << d.nan_count
      << " missing readings\n";
  d.filled = fill_missing(raw, config.fill_max_gap);
  if (config.aggregate > 1) {
    raw = aggregate(raw, config.aggregate);
    log << "[data] aggregated x" << config.aggregate << " -> " << raw.steps() << " steps of " << raw.interval_minutes
        << " min\n";
  }
  d.splits = split_chronological(raw, config.split);
  d.normalizer = Normalizer::fit(d.splits.train.values);
  d.train = d.normalizer.normalize(d.splits.train.values);
  d.val = d.normalizer.normalize(d.splits.val.values);
  d.test = d.normalizer.normalize(d.splits.test.values);
  log << "[data] split " << d.splits.train.steps() << "/" << d.splits.val.steps() << "/" << d.splits.test.steps()
      << " steps, train mean " << fmt(d.normalizer.mean()[0]) << " std " << fmt(d.normalizer.stddev()[0]) << "\n";
  d.raw = std::move(raw);
  return d;
}

SynthResult cmd_synth(const SyntheticSpec& spec, const fs::path& out) {
  if (spec.nodes == 0 || spec.days == 0 || spec.steps_per_day == 0)
    throw ConfigError("synth: nodes, days and steps per day must be at least 1");
  RawSeries s = generate_synthetic(spec);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_series(out, s);
  return {out, s.values.shape(), pmxt::file_crc32(out)};
}

// ---------------------------------------------------------------------------

PretrainResult cmd_pretrain(const RunConfig& config, const fs::path& out, bool resume, std::ostream& log) {
  config.validate();
  PreparedData data = prepare_data(config, log);
  fs::create_directories(out);
  save_run_config(out / "config.resolved.json", config);

  WindowSampler windows = sample_windows(data.train, config.patch_len, 0, config.t_long, config.pretrain.stride);
  if (windows.empty()) throw DataError("pretrain: training split is shorter than T_long = " + std::to_string(config.t_long));
  if (config.pretrain.max_windows > 0) {
    Rng pick(config.seed, kStreamSubset);
    windows.shuffle(pick);
    windows.truncate(config.pretrain.max_windows);
  }
  std::vector<Tensor> longs;
  longs.reserve(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) longs.push_back(windows.at(k).x_long);

  PIEncoderConfig ecfg{config.patch_len, data.channels(), config.latent, config.pretrain.dropout};
  Rng init(config.seed, kStreamEncoderInit);
  PIEncoder model(ecfg, init);
  Adam optim(model.parameters(), AdamConfig{config.pretrain.lr});
  const fs::path ckpt = out / "piencoder";
  PIEncoderCheckpointInfo info{config.seed, 0, 0, !config.ablations.no_cl};
  if (resume) {
    std::vector<AdamState> states;
    model = load_piencoder(ckpt, &ecfg, &info, &states);
    optim = Adam(model.parameters(), AdamConfig{config.pretrain.lr});
    if (states.empty()) throw CheckpointError("pretrain: checkpoint has no optimizer state to resume from");
    optim.restore(std::move(states), info.step);
    log << "[pretrain] resuming at epoch " << info.epoch << ", step " << info.step << "\n";
  }

  PretrainOptions opt{config.pretrain.mask_ratio, !config.ablations.no_cl};
  auto log_file = open_out(out / "pretrain_log.csv", resume);
  if (!resume) log_file << "epoch,recon,cl,total\n";
  log << "[pretrain] " << longs.size() << " windows of " << config.t_long << " steps, "
      << count_parameters(model.parameters()) << " parameters\n";

  PretrainResult result;
  const std::size_t batch = config.pretrain.batch;
  for (long epoch = info.epoch; epoch < static_cast<long>(config.pretrain.epochs); ++epoch) {
    auto order = permutation(longs.size(), Rng(config.seed, kStreamPretrainOrder + static_cast<std::uint64_t>(epoch)));
    PretrainLosses sum;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::vector<Tensor> chunk;
      for (std::size_t k = b; k < std::min(order.size(), b + batch); ++k) chunk.push_back(longs[order[k]]);
      Rng step_rng(config.seed, kStreamPretrainStep + static_cast<std::uint64_t>(optim.step_count()));
      PretrainLosses l = pretrain_step(chunk, model, optim, step_rng, opt);
      sum.recon += l.recon;
      sum.contrastive += l.contrastive;
      ++batches;
    }
    PretrainLosses mean{sum.recon / static_cast<double>(batches), sum.contrastive / static_cast<double>(batches), 0.0};
    mean.total = mean.recon + mean.contrastive;
    result.epochs.push_back(mean);
    log_file << epoch + 1 << ',' << fmt(mean.recon) << ',' << fmt(mean.contrastive) << ',' << fmt(mean.total) << '\n';
    log_file.flush();
    log << "[pretrain] epoch " << epoch + 1 << " recon " << fmt(mean.recon) << " cl " << fmt(mean.contrastive)
        << " total " << fmt(mean.total) << "\n";
    info.epoch = epoch + 1;
    info.step = optim.step_count();
    save_piencoder(ckpt, model, info, &optim);
  }
  if (!resume || result.epochs.empty()) save_piencoder(ckpt, model, info, &optim);

  // Reconstruction quality against the mean predictor on the same windows.
  std::vector<Tensor> probe(longs.begin(), longs.begin() + std::min<std::size_t>(longs.size(), 64));
  result.recon_mse = reconstruction_mse(probe, model);
  double mean = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const Tensor& w : probe)
    for (double v : w.data()) {
      mean += v;
      ++n;
    }
  mean /= static_cast<double>(n);
  for (const Tensor& w : probe)
    for (double v : w.data()) sq += (v - mean) * (v - mean);
  result.baseline_mse = sq / static_cast<double>(n);
  result.steps = optim.step_count();
  result.epochs_done = info.epoch;
  result.checkpoint = ckpt;
  log << "[pretrain] reconstruction MSE " << fmt(result.recon_mse) << " (mean predictor " << fmt(result.baseline_mse)
      << ")\n";
  return result;
}

// ---------------------------------------------------------------------------

TrainResult cmd_train(const RunConfig& config, const fs::path& out, std::ostream& log) {
  config.validate();
  PreparedData data = prepare_data(config, log);
  fs::create_directories(out);

  std::optional<PIEncoder> encoder;
  if (!config.ablations.no_pretrain) {
    if (config.encoder.empty()) throw ConfigError("train: an encoder checkpoint is required unless no_pretrain is set");
    PIEncoderConfig expect{config.patch_len, data.channels(), config.latent, 0.0};
    encoder = load_piencoder(config.encoder, &expect);
  }
  Rng init(config.seed, kStreamForecasterInit);
  PreMixer model(config.forecaster(data.nodes(), data.channels()), init, std::move(encoder));

  WindowSampler train_windows = sample_windows(data.train, config.steps, config.horizon, config.steps,
                                               config.training.stride);
  if (train_windows.empty()) throw DataError("train: training split has no windows");
  if (config.training.max_train_windows > 0) {
    Rng pick(config.seed, kStreamSubset);
    train_windows.shuffle(pick);
    train_windows.truncate(config.training.max_train_windows);
  }
  WindowSampler val_windows = eval_windows(data.val, config);
  WindowSampler test_windows = eval_windows(data.test, config);
  if (val_windows.empty() || test_windows.empty()) throw DataError("train: validation or test split has no windows");

  json resolved = to_json(config);
  resolved["resolved"] = {{"forecaster", to_json(model.config())}, {"parameters", parameter_summary(model)}};
  {
    auto f = open_out(out / "config.resolved.json");
    f << resolved.dump(2) << '\n';
    auto p = open_out(out / "parameters.json");
    p << resolved["resolved"]["parameters"].dump(2) << '\n';
  }
  log << "[train] N=" << data.nodes() << " windows train/val/test " << train_windows.size() << "/"
      << val_windows.size() << "/" << test_windows.size() << "\n";
  log << "[train] parameters: total " << model.total_count() << ", trainable " << model.trainable_count() << "\n";

  std::vector<Parameter*> trainable = model.trainable_parameters();
  Adam optim(trainable, AdamConfig{config.optimizer.lr});
  std::vector<Parameter*> frozen = model.encoder() ? model.encoder()->parameters() : std::vector<Parameter*>{};
  const std::vector<Tensor> frozen_snapshot = snapshot(frozen);

  auto train_log = open_out(out / "train_log.csv");
  train_log << "epoch,train_loss,val_mae,val_rmse,val_mape_percent\n";
  auto history = open_out(out / "val_history.csv");
  history << "epoch,horizon,mae,rmse,mape_percent\n";

  TrainResult result;
  Rng drop_rng(config.seed, kStreamDropout);
  double best = INFINITY;
  std::vector<Tensor> best_params = snapshot(trainable);
  std::size_t since_best = 0;
  const std::size_t batch = config.optimizer.batch;
  for (std::size_t epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    auto order = permutation(train_windows.size(), Rng(config.seed, kStreamTrainOrder + epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::span<const std::size_t> idx(order.data() + b, std::min(order.size(), b + batch) - b);
      Batch bt = assemble_batch(train_windows, idx);
      PreMixer::Trace trace;
      Tensor yhat = model.forward(bt.x, true, &drop_rng, &trace);
      Tensor grad;
      const double loss = regression_loss(yhat, bt.y, &grad);
      if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      optim.zero_grad();
      model.backward(trace, grad);
      optim.step();
      loss_sum += loss;
      ++batches;
    }
    const double epoch_loss = loss_sum / static_cast<double>(batches);
    result.epoch_losses.push_back(epoch_loss);
    if (!unchanged(frozen, frozen_snapshot)) {
      result.encoder_frozen = false;
      throw NumericError("train: frozen encoder parameters changed during epoch " + std::to_string(epoch + 1));
    }
    MetricsReport val = evaluate(model, val_windows, data.normalizer, config);
    const double val_mae = val.average().mae;
    train_log << epoch + 1 << ',' << fmt(epoch_loss) << ',' << fmt(val_mae) << ',' << fmt(val.average().rmse) << ','
              << fmt(val.average().mape) << '\n';
    train_log.flush();
    write_history(history, epoch + 1, val);
    log << "[train] epoch " << epoch + 1 << " loss " << fmt(epoch_loss) << " val MAE " << fmt(val_mae) << "\n";
    result.epochs_run = epoch + 1;

    if (val_mae < best) {
      best = val_mae;
      best_params = snapshot(trainable);
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= config.optimizer.patience) {
      result.stopped_early = true;
      log << "[train] early stop: no validation improvement for " << since_best << " epochs\n";
      break;
    }
    if (config.training.target_train_mae > 0.0 && epoch_loss < 2.0 * config.training.target_train_mae) {
      result.final_train_mae = normalised_mae(model, train_windows);
      if (result.final_train_mae < config.training.target_train_mae) {
        result.target_reached = true;
        log << "[train] training MAE " << fmt(result.final_train_mae) << " below target\n";
        break;
      }
    }
  }
  if (!result.target_reached) {
    for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = best_params[i];
  }
  // Evaluate exactly what the checkpoint will hold.
  checkpoint::round_to_float(trainable);
  result.final_train_mae = normalised_mae(model, train_windows);
  result.val = evaluate(model, val_windows, data.normalizer, config);
  result.test = evaluate(model, test_windows, data.normalizer, config);
  write_report(out / "metrics_val", result.val);
  write_report(out / "metrics_test", result.test);
  result.trainable_parameters = model.trainable_count();
  result.total_parameters = model.total_count();
  result.encoder_frozen = unchanged(frozen, frozen_snapshot);

  result.checkpoint = out / "forecaster";
  json extra;
  extra["run"] = to_json(config);
  extra["best_epoch"] = result.best_epoch;
  save_forecaster(result.checkpoint, model, data.normalizer, extra);
  log << "[train] val average MAE " << fmt(result.val.average().mae) << ", test average MAE "
      << fmt(result.test.average().mae) << "\n";
  return result;
}

// ---------------------------------------------------------------------------

MetricsReport cmd_eval(const fs::path& checkpoint, const std::string& split, const fs::path& out, std::ostream& log,
                       const std::string& data_path) {
  if (!fs::exists(checkpoint / "manifest.json"))
    throw CheckpointError("eval: no forecaster checkpoint at " + checkpoint.string());
  ForecasterCheckpointInfo info;
  PreMixer model = load_forecaster(checkpoint, &info);
  RunConfig config = run_config_from_json(info.extra.at("run"));
  if (!data_path.empty()) config.data = data_path;
  PreparedData data = prepare_data(config, log);
  if (data.nodes() != model.config().nodes || data.channels() != model.config().channels)
    throw ShapeError("eval: dataset has N=" + std::to_string(data.nodes()) + ", C=" + std::to_string(data.channels()) +
                     " but the checkpoint expects N=" + std::to_string(model.config().nodes) +
                     ", C=" + std::to_string(model.config().channels));
  const RawSeries* series = nullptr;
  if (split == "train")
    series = &data.splits.train;
  else if (split == "val")
    series = &data.splits.val;
  else if (split == "test")
    series = &data.splits.test;
  else
    throw ConfigError("eval: unknown split '" + split + "' (expected train|val|test)");
  const Tensor normalised = info.normalizer.normalize(series->values);
  MetricsReport report = evaluate(model, eval_windows(normalised, config), info.normalizer, config);
  write_report(out / ("metrics_" + split), report);
  log << "[eval] " << split << " average MAE " << fmt(report.average().mae) << "\n";
  return report;
}

TrainResult cmd_transfer(const fs::path& source_encoder, RunConfig target, const fs::path& out, std::ostream& log) {
  if (target.ablations.no_pretrain) throw ConfigError("transfer: no_pretrain leaves nothing to transfer");
  PIEncoderCheckpointInfo info;
  PIEncoder src = load_piencoder(source_encoder, nullptr, &info);
  if (src.config().patch_len != target.patch_len)
    throw CheckpointError("transfer: source encoder has L=" + std::to_string(src.config().patch_len) +
                          ", target configuration has L=" + std::to_string(target.patch_len));
  target.latent = src.config().latent;
  target.encoder = source_encoder.string();
  log << "[transfer] source encoder " << source_encoder << " (L=" << src.config().patch_len
      << ", D=" << src.config().latent << ", seed " << info.seed << ")\n";
  return cmd_train(target, out, log);
}

}  // namespace premixer
