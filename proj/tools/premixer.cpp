// premixer command line: synth | pretrain | train | eval | transfer | gradcheck
#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "premixer/error.hpp"
#include "premixer/workflows.hpp"

namespace pm = premixer;

namespace {

struct Overrides {
  std::string config, data, encoder;
  std::int64_t seed = -1;
  std::int64_t epochs = -1;
  std::string mode, aggregation;
  bool no_pretrain = false, no_cl = false, no_context = false, no_stpe = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run configuration");
  cmd->add_option("--data", o.data, "dataset file (.pmxt or .csv)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--epochs", o.epochs, "epoch count");
  cmd->add_flag("--no-cl", o.no_cl, "drop the contrastive term");
}

void add_model_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--encoder", o.encoder, "PIEncoder checkpoint directory");
  cmd->add_option("--spatial-mode", o.mode, "structured|basic");
  cmd->add_option("--aggregation", o.aggregation, "mean|sum");
  cmd->add_flag("--no-pretrain", o.no_pretrain, "train without the pre-trained encoder");
  cmd->add_flag("--no-context", o.no_context, "ungated spatial mixing, no node embedding");
  cmd->add_flag("--no-stpe", o.no_stpe, "temporal-only positional encoding");
}

pm::RunConfig resolve(const Overrides& o, bool pretraining) {
  pm::RunConfig c = o.config.empty() ? pm::RunConfig{} : pm::load_run_config(o.config);
  if (!o.data.empty()) c.data = o.data;
  if (!o.encoder.empty()) c.encoder = o.encoder;
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (o.epochs >= 0) (pretraining ? c.pretrain.epochs : c.optimizer.epochs) = static_cast<std::size_t>(o.epochs);
  if (!o.mode.empty()) c.mode = pm::parse_spatial_mode(o.mode);
  if (!o.aggregation.empty()) c.aggregation = pm::parse_aggregation(o.aggregation);
  c.ablations.no_pretrain |= o.no_pretrain;
  c.ablations.no_cl |= o.no_cl;
  c.ablations.no_context |= o.no_context;
  c.ablations.no_stpe |= o.no_stpe;
  return c;
}

void print_report(const pm::MetricsReport& r) { std::cout << pm::report_csv(r); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PreMixer spatiotemporal forecasting"};
  app.require_subcommand(1);

  pm::SyntheticSpec synth;
  std::string synth_out = "synthetic.pmxt";
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic traffic dataset");
  c_synth->add_option("--nodes", synth.nodes, "sensor count")->check(CLI::PositiveNumber);
  c_synth->add_option("--days", synth.days, "days of 15-minute data")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed, "random seed");
  c_synth->add_option("--steps-per-day", synth.steps_per_day)->check(CLI::PositiveNumber);
  c_synth->add_option("--noise", synth.noise, "noise as a fraction of base flow")->check(CLI::NonNegativeNumber);
  c_synth->add_option("-o,--out", synth_out, "output .pmxt path");

  Overrides pre_o;
  std::string pre_out = "runs/pretrain";
  bool resume = false;
  auto* c_pre = app.add_subcommand("pretrain", "pre-train the patch-independent encoder");
  add_overrides(c_pre, pre_o);
  c_pre->add_option("-o,--out", pre_out, "output directory");
  c_pre->add_flag("--resume", resume, "continue from <out>/piencoder");

  Overrides train_o;
  std::string train_out = "runs/train";
  auto* c_train = app.add_subcommand("train", "train the forecaster");
  add_overrides(c_train, train_o);
  add_model_overrides(c_train, train_o);
  c_train->add_option("-o,--out", train_out, "output directory");

  std::string eval_ckpt, eval_split = "test", eval_out = ".", eval_data;
  auto* c_eval = app.add_subcommand("eval", "evaluate a forecaster checkpoint");
  c_eval->add_option("--checkpoint", eval_ckpt, "forecaster checkpoint directory")->required();
  c_eval->add_option("--split", eval_split, "train|val|test");
  c_eval->add_option("--data", eval_data, "dataset override");
  c_eval->add_option("-o,--out", eval_out, "directory for metrics_<split>.csv/json");

  Overrides tr_o;
  std::string tr_source, tr_out = "runs/transfer";
  auto* c_tr = app.add_subcommand("transfer", "train on a target dataset with a source encoder");
  c_tr->add_option("--source", tr_source, "source PIEncoder checkpoint")->required();
  add_overrides(c_tr, tr_o);
  add_model_overrides(c_tr, tr_o);
  c_tr->add_option("-o,--out", tr_out, "output directory");

  std::size_t gc_seeds = 10;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of every layer and model");
  c_gc->add_option("--seeds", gc_seeds, "random instances per check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) {
      auto r = pm::cmd_synth(synth, synth_out);
      std::cout << r.path.string() << " " << pm::shape_str(r.shape) << " crc32 " << std::hex << r.crc << std::dec
                << "\n";
    } else if (*c_pre) {
      auto r = pm::cmd_pretrain(resolve(pre_o, true), pre_out, resume, std::cout);
      std::cout << "checkpoint " << r.checkpoint.string() << " after " << r.steps << " steps\n";
    } else if (*c_train) {
      auto r = pm::cmd_train(resolve(train_o, false), train_out, std::cout);
      print_report(r.test);
    } else if (*c_eval) {
      print_report(pm::cmd_eval(eval_ckpt, eval_split, eval_out, std::cout, eval_data));
    } else if (*c_tr) {
      auto r = pm::cmd_transfer(tr_source, resolve(tr_o, false), tr_out, std::cout);
      print_report(r.test);
    } else if (*c_gc) {
      const auto t0 = std::chrono::steady_clock::now();
      auto rows = pm::run_gradcheck_suite(gc_seeds);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << pm::gradcheck_table(rows) << "elapsed " << secs << " s\n";
      for (const auto& r : rows)
        if (!r.pass) return 4;
    }
  } catch (const pm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const pm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const pm::Error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
