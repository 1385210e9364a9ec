#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedad/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string variant = "full";
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool need_config = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
  if (need_config) opt->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--variant", args.variant,
                  "ablation variant: full, w/o_adms, w/o_ppds, w/o_ft, fft");
  cmd->add_option("--seed", args.seed_override, "master seed override");
}

fedad::experiment::ExperimentConfig make_config(const CommonArgs& args) {
  auto cfg = fedad::experiment::load_config_file(args.config_path);
  if (args.seed_override >= 0) {
    cfg.master_seed = static_cast<std::uint64_t>(args.seed_override);
    // reseed the derived component streams
    cfg.synth.seed = fedad::derive_seed(cfg.master_seed, "data");
    cfg.train.seed = fedad::derive_seed(cfg.master_seed, "train");
  }
  fedad::experiment::apply_variant(cfg, args.variant);
  return cfg;
}

int guarded(const char* stage, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated time-series anomaly detection experiment runner"};
  app.require_subcommand(1);

  CommonArgs gen_args, shared_args, train_args, eval_args, report_args, run_args;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-client benchmark");
  add_common(gen, gen_args);
  auto* shared = app.add_subcommand("synth-shared", "train per-client VAEs and pool the shared dataset");
  add_common(shared, shared_args);
  auto* train = app.add_subcommand("train", "run federated training");
  add_common(train, train_args);
  auto* evaluate = app.add_subcommand("evaluate", "score the test splits and write metrics");
  add_common(evaluate, eval_args);
  auto* report = app.add_subcommand("report", "render the metrics table");
  add_common(report, report_args, false);
  auto* run = app.add_subcommand("run", "full pipeline: gen-data, synth-shared, train, evaluate");
  add_common(run, run_args);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    return guarded("gen-data", [&] { stage_gen_data(make_config(gen_args), gen_args.out_dir); });
  }
  if (shared->parsed()) {
    return guarded("synth-shared",
                   [&] { stage_synth_shared(make_config(shared_args), shared_args.out_dir); });
  }
  if (train->parsed()) {
    return guarded("train", [&] { stage_train(make_config(train_args), train_args.out_dir); });
  }
  if (evaluate->parsed()) {
    return guarded("evaluate", [&] {
      const auto evals = stage_evaluate(make_config(eval_args), eval_args.out_dir);
      for (const auto& ev : evals) {
        std::cout << "client " << ev.client_id << ": " << ev.report.text_block();
      }
    });
  }
  if (report->parsed()) {
    return guarded("report",
                   [&] { std::cout << fedad::experiment::stage_report(report_args.out_dir); });
  }
  if (run->parsed()) {
    return guarded("run", [&] {
      const auto cfg = make_config(run_args);
      fedad::experiment::run_all(cfg, run_args.out_dir);
      std::cout << fedad::experiment::stage_report(run_args.out_dir);
    });
  }
  return 0;
}
