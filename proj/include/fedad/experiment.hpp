#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedad/adms.hpp"
#include "fedad/backbone.hpp"
#include "fedad/data.hpp"
#include "fedad/detection.hpp"
#include "fedad/federation.hpp"
#include "fedad/ppds.hpp"

namespace fedad::experiment {

// Composite experiment configuration parsed from a flat key=value file with
// dotted section prefixes. One master seed derives every component stream.
struct ExperimentConfig {
  std::uint64_t master_seed = 42;
  std::string variant = "full";

  std::string data_source = "synth";  // synth | csv
  std::string csv_dir;                // for csv source: client{i}_{train,test,test_labels}.csv
  data::SynthBenchConfig synth;
  std::size_t window_len = 100;

  backbone::BackboneConfig model;
  adms::AdmsConfig adms_cfg;
  ppds::VaeConfig vae;
  fed::TrainConfig train;
  detect::DetectionConfig detection;

  bool use_adms = true;    // variant switches
  bool use_ppds = true;
  bool fine_tune = true;

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonicalizes and applies an ablation variant: full, w/o_adms, w/o_ppds,
// w/o_ft, fft. Unknown names raise ConfigError.
void apply_variant(ExperimentConfig& cfg, const std::string& variant);

struct ClientEval {
  int client_id = 0;
  std::size_t test_len = 0;
  detect::EvalReport report;  // point-adjusted confusion counts + P/R/F1, raw-score AUC
  double auc_pa = 0.0;        // AUC of the adjusted binary predictions
};

// --- pipeline stages; each reads its predecessors' artifacts from out_dir ----

void stage_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);
void stage_synth_shared(const ExperimentConfig& cfg, const std::string& out_dir);
fed::TrainResult stage_train(const ExperimentConfig& cfg, const std::string& out_dir,
                             fed::WireLog* wire = nullptr);
std::vector<ClientEval> stage_evaluate(const ExperimentConfig& cfg, const std::string& out_dir);
std::string stage_report(const std::string& out_dir);

// gen-data -> synth-shared -> train -> evaluate, honoring variant switches.
std::vector<ClientEval> run_all(const ExperimentConfig& cfg, const std::string& out_dir,
                                fed::WireLog* wire = nullptr);

// Evaluation of an arbitrary model against the generated per-client data
// (used for untrained baselines).
std::vector<ClientEval> evaluate_model(const backbone::Model& model, const ExperimentConfig& cfg,
                                       const std::string& out_dir);

// Loads the per-client datasets the train/evaluate stages use.
std::vector<data::RawDataset> load_client_datasets(const ExperimentConfig& cfg,
                                                   const std::string& out_dir);

void write_metrics_csv(const std::string& path, const std::string& variant,
                       const std::vector<ClientEval>& evals);

}  // namespace fedad::experiment
