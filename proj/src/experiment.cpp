#include "fedad/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedad/errors.hpp"
#include "fedad/rng.hpp"

namespace fs = std::filesystem;

namespace fedad::experiment {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct KvConfig {
  std::map<std::string, std::string> values;
  mutable std::set<std::string> consumed;

  bool has(const std::string& key) const { return values.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& def) const {
    consumed.insert(key);
    auto it = values.find(key);
    return it == values.end() ? def : it->second;
  }

  std::string require_string(const std::string& key) const {
    consumed.insert(key);
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("config missing key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double def) const {
    consumed.insert(key);
    auto it = values.find(key);
    if (it == values.end()) return def;
    return parse_double(key, it->second);
  }

  double require_double(const std::string& key) const {
    return parse_double(key, require_string(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    consumed.insert(key);
    auto it = values.find(key);
    if (it == values.end()) return def;
    return parse_u64(key, it->second);
  }

  std::uint64_t require_u64(const std::string& key) const {
    return parse_u64(key, require_string(key));
  }

  bool get_bool(const std::string& key, bool def) const {
    consumed.insert(key);
    auto it = values.find(key);
    if (it == values.end()) return def;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + v);
  }

  void check_unknown() const {
    for (const auto& [k, v] : values) {
      if (!consumed.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  static double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
      throw ConfigError("config key '" + key + "' is not a number: " + v);
    }
    return d;
  }

  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
      throw ConfigError("config key '" + key + "' is not an integer: " + v);
    }
    return static_cast<std::uint64_t>(u);
  }
};

KvConfig parse_kv(const std::string& text) {
  KvConfig kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
    kv.values[key] = value;
  }
  return kv;
}

std::vector<data::AnomalyKind> parse_kinds(const std::string& csv) {
  std::vector<data::AnomalyKind> kinds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "spike")
      kinds.push_back(data::AnomalyKind::spike);
    else if (item == "level_shift")
      kinds.push_back(data::AnomalyKind::level_shift);
    else if (item == "variance_burst")
      kinds.push_back(data::AnomalyKind::variance_burst);
    else
      throw ConfigError("unknown anomaly kind '" + item + "'");
  }
  return kinds;
}

std::string client_file(const std::string& dir, std::size_t i, const char* suffix) {
  return dir + "/client" + std::to_string(i) + "_" + suffix;
}

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data_source != "synth" && data_source != "csv") {
    throw ConfigError("data.source must be 'synth' or 'csv'");
  }
  if (data_source == "csv" && csv_dir.empty()) {
    throw ConfigError("config missing key 'data.csv_dir'");
  }
  if (window_len < model.patch_len) {
    throw ConfigError("data.window must be at least backbone.patch_len");
  }
  synth.validate();
  model.validate();
  adms_cfg.validate();
  vae.validate();
  train.validate();
  detection.validate();
}

ExperimentConfig parse_config_text(const std::string& text) {
  const KvConfig kv = parse_kv(text);
  ExperimentConfig cfg;

  cfg.master_seed = kv.get_u64("seed", 42);

  cfg.data_source = kv.get_string("data.source", "synth");
  cfg.csv_dir = kv.get_string("data.csv_dir", "");
  cfg.synth.n_clients = kv.get_u64("data.n_clients", 4);
  cfg.synth.train_steps = kv.get_u64("data.train_steps", 4000);
  cfg.synth.test_steps = kv.get_u64("data.test_steps", 2000);
  cfg.synth.dim = kv.get_u64("data.dim", 1);
  cfg.synth.anomaly_rate = kv.get_double("data.anomaly_rate", 0.01);
  cfg.synth.kinds = parse_kinds(kv.get_string("data.anomaly_kinds", "spike"));
  cfg.synth.contaminate_train = kv.get_bool("data.contaminate_train", false);
  cfg.synth.base_noise = kv.get_double("data.base_noise", 0.2);
  cfg.synth.freq_scale = kv.get_double("data.freq_scale", 1.0);
  cfg.synth.seed = derive_seed(cfg.master_seed, "data");
  cfg.window_len = kv.get_u64("data.window", 100);

  cfg.model.d_model = kv.get_u64("backbone.d_model", 32);
  cfg.model.n_layers = kv.get_u64("backbone.n_layers", 8);
  cfg.model.n_heads = kv.get_u64("backbone.n_heads", 4);
  cfg.model.d_ff = kv.get_u64("backbone.d_ff", 128);
  cfg.model.patch_len = kv.get_u64("backbone.patch_len", 10);
  cfg.model.input_dim = cfg.synth.dim;
  cfg.model.tune_last_k = kv.get_u64("backbone.tune_last_k", 3);
  cfg.model.max_patches = kv.get_u64("backbone.max_patches", 0);
  if (cfg.model.max_patches == 0 && cfg.model.patch_len > 0) {
    cfg.model.max_patches = std::max<std::size_t>(cfg.window_len / cfg.model.patch_len, 1);
  }

  cfg.adms_cfg.patch_len = cfg.model.patch_len;
  cfg.adms_cfg.mask_ratio = kv.get_double("adms.mask_ratio", 0.20);
  cfg.adms_cfg.beta = kv.get_double("adms.beta", 0.5);
  cfg.adms_cfg.score_threshold = kv.get_double("adms.score_threshold", 0.7);
  cfg.adms_cfg.weight_boost = kv.get_double("adms.weight_boost", 4.0);
  cfg.adms_cfg.ssa_window = kv.get_u64("adms.ssa_window", 0);
  cfg.adms_cfg.energy_tail = kv.get_double("adms.energy_tail", 0.10);

  cfg.vae.latent_dim = kv.get_u64("vae.latent_dim", 8);
  cfg.vae.hidden_dim = kv.get_u64("vae.hidden_dim", 64);
  cfg.vae.alpha1 = kv.get_double("vae.alpha1", 1.0);
  cfg.vae.alpha2 = kv.get_double("vae.alpha2", 0.1);
  cfg.vae.epochs = kv.get_u64("vae.epochs", 200);
  cfg.vae.learning_rate = kv.get_double("vae.learning_rate", 0.02);
  cfg.vae.synth_length = kv.get_u64("vae.synth_length", 100);
  cfg.vae.mi_bins = kv.get_u64("vae.mi_bins", 16);
  cfg.vae.mi_bandwidth = kv.get_double("vae.mi_bandwidth", 0.5);

  cfg.train.n_clients = cfg.synth.n_clients;
  cfg.train.global_rounds = kv.require_u64("train.rounds");
  cfg.train.local_epochs = kv.require_u64("train.local_epochs");
  cfg.train.learning_rate = kv.require_double("train.learning_rate");
  cfg.train.lambda = kv.get_double("train.lambda", 0.0);
  cfg.train.batch_size = kv.get_u64("train.batch_size", 32);
  const std::string opt = kv.get_string("train.optimizer", "sgd");
  if (opt == "sgd")
    cfg.train.optimizer = fed::Optimizer::sgd;
  else if (opt == "adam")
    cfg.train.optimizer = fed::Optimizer::adam;
  else
    throw ConfigError("train.optimizer must be 'sgd' or 'adam'");
  cfg.train.parallel_clients = kv.get_bool("train.parallel", true);
  cfg.train.seed = derive_seed(cfg.master_seed, "train");

  cfg.detection.threshold_pct = kv.get_double("detect.threshold_pct", 1.0);
  cfg.detection.point_adjust = kv.get_bool("detect.point_adjust", true);

  kv.check_unknown();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void apply_variant(ExperimentConfig& cfg, const std::string& variant) {
  std::string v = variant;
  if (v == "wo_adms") v = "w/o_adms";
  if (v == "wo_ppds") v = "w/o_ppds";
  if (v == "wo_ft") v = "w/o_ft";
  if (v == "full_ft") v = "fft";

  if (v == "full") {
    // defaults
  } else if (v == "w/o_adms") {
    cfg.use_adms = false;
  } else if (v == "w/o_ppds") {
    cfg.use_ppds = false;
    cfg.train.lambda = 0.0;
  } else if (v == "w/o_ft") {
    cfg.fine_tune = false;
  } else if (v == "fft") {
    cfg.model.tune_last_k = cfg.model.n_layers;
  } else {
    throw ConfigError("unknown variant '" + variant + "'");
  }
  cfg.variant = v;
}

// --- data plumbing ------------------------------------------------------------

void stage_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.data_source != "synth") {
    throw ConfigError("gen-data requires data.source = synth");
  }
  fs::create_directories(out_dir);
  const auto datasets = data::synth_benchmark(cfg.synth);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const auto& ds = datasets[i];
    data::save_matrix_csv(client_file(out_dir, i, "train.csv"), ds.train);
    data::save_matrix_csv(client_file(out_dir, i, "test.csv"), ds.test);
    data::save_labels(client_file(out_dir, i, "test_labels.csv"), ds.test_labels);
    if (!ds.train_labels.empty()) {
      data::save_labels(client_file(out_dir, i, "train_labels.csv"), ds.train_labels);
    }
  }
}

std::vector<data::RawDataset> load_client_datasets(const ExperimentConfig& cfg,
                                                   const std::string& out_dir) {
  const std::string dir = cfg.data_source == "csv" ? cfg.csv_dir : out_dir;
  std::vector<data::RawDataset> out;
  for (std::size_t i = 0; i < cfg.synth.n_clients; ++i) {
    const std::string train_path = client_file(dir, i, "train.csv");
    if (!fs::exists(train_path)) {
      throw InputError("missing data file " + train_path +
                       (cfg.data_source == "synth" ? " (run gen-data first)" : ""));
    }
    out.push_back(data::load_csv(train_path, client_file(dir, i, "test.csv"),
                                 client_file(dir, i, "test_labels.csv")));
    const std::string tl = client_file(dir, i, "train_labels.csv");
    if (fs::exists(tl)) out.back().train_labels = data::load_labels(tl);
  }
  return out;
}

void stage_synth_shared(const ExperimentConfig& cfg, const std::string& out_dir) {
  auto datasets = load_client_datasets(cfg, out_dir);
  std::vector<std::pair<int, Matrix>> syntheses;
  // the decoder emits windows that stitch into synth_length series, so VAE
  // windows never need to exceed that length
  const std::size_t vae_window = std::min<std::size_t>(cfg.vae.synth_length, cfg.window_len);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    auto& ds = datasets[i];
    data::normalize(ds);
    const auto windows = data::make_windows(ds.train, vae_window);
    const std::uint64_t seed = derive_seed(cfg.master_seed, "vae/client" + std::to_string(i));
    const ppds::VaeModel vae = ppds::train_vae(windows, cfg.vae, seed);
    syntheses.emplace_back(
        static_cast<int>(i),
        ppds::synthesize(vae, cfg.vae.synth_length,
                         derive_seed(cfg.master_seed, "synth/client" + std::to_string(i))));
  }
  const ppds::SharedDataset shared = ppds::pool_shared_dataset(syntheses);
  ppds::save_shared_csv(out_dir + "/shared.csv", shared);
}

namespace {

// Shared series become distillation windows; entries longer than the window
// length are chopped, shorter ones used whole when they fit a patch.
std::vector<Matrix> shared_to_windows(const ppds::SharedDataset& shared,
                                      const ExperimentConfig& cfg) {
  std::vector<Matrix> windows;
  for (const auto& e : shared.entries) {
    if (e.series.rows >= cfg.window_len) {
      for (auto& w : data::make_windows(e.series, cfg.window_len)) windows.push_back(std::move(w));
    } else if (e.series.rows >= cfg.model.patch_len) {
      windows.push_back(e.series);
    }
  }
  return windows;
}

}  // namespace

fed::TrainResult stage_train(const ExperimentConfig& cfg, const std::string& out_dir,
                             fed::WireLog* wire) {
  auto datasets = load_client_datasets(cfg, out_dir);

  std::vector<Matrix> shared_windows;
  if (cfg.train.lambda > 0.0 && cfg.use_ppds) {
    const std::string shared_path = out_dir + "/shared.csv";
    if (!fs::exists(shared_path)) {
      throw InputError("shared dataset file not found: " + shared_path +
                       " (run synth-shared first)");
    }
    shared_windows = shared_to_windows(ppds::load_shared_csv(shared_path), cfg);
  }

  std::vector<fed::ClientData> clients;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    auto& ds = datasets[i];
    data::normalize(ds);
    fed::ClientData cd;
    cd.id = static_cast<int>(i);
    cd.windows = data::make_windows(ds.train, cfg.window_len);
    clients.push_back(std::move(cd));
  }

  fed::TrainConfig tc = cfg.train;
  if (!cfg.use_ppds) tc.lambda = 0.0;
  const std::uint64_t model_seed = derive_seed(cfg.master_seed, "checkpoint");

  fed::TrainResult result =
      fed::run_training(tc, cfg.model, cfg.adms_cfg, clients, shared_windows,
                        cfg.model.tune_last_k, cfg.fine_tune, cfg.use_adms, model_seed, wire);

  fs::create_directories(out_dir);
  backbone::save_checkpoint(out_dir + "/checkpoint.bin", result.global_model);
  fed::export_ledger_csv(out_dir + "/ledger.csv", result.ledger);
  fed::export_losses_csv(out_dir + "/losses.csv", result.ledger);
  return result;
}

std::vector<ClientEval> evaluate_model(const backbone::Model& model, const ExperimentConfig& cfg,
                                       const std::string& out_dir) {
  auto datasets = load_client_datasets(cfg, out_dir);
  std::vector<ClientEval> evals;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    auto& ds = datasets[i];
    data::normalize(ds);
    const std::vector<double> scores = detect::score_series(model, ds.test, cfg.window_len);
    const auto pred = detect::threshold_top_r(scores, cfg.detection.threshold_pct);
    const auto adjusted = cfg.detection.point_adjust ? detect::point_adjust(pred, ds.test_labels)
                                                     : pred;
    ClientEval ev;
    ev.client_id = static_cast<int>(i);
    ev.test_len = ds.test.rows;
    ev.report = detect::metrics(adjusted, ds.test_labels);
    ev.report.auc = detect::auc_roc(scores, ds.test_labels);
    std::vector<double> adj_scores(adjusted.begin(), adjusted.end());
    ev.auc_pa = detect::auc_roc(adj_scores, ds.test_labels);
    evals.push_back(ev);
  }
  return evals;
}

void write_metrics_csv(const std::string& path, const std::string& variant,
                       const std::vector<ClientEval>& evals) {
  std::ofstream os(path);
  if (!os) throw InputError("write_metrics_csv: cannot open " + path);
  os << "variant,client_id,tp,fp,fn,tn,precision,recall,f1,auc,auc_pa\n";
  double wp = 0, wr = 0, wf = 0, wa = 0, wap = 0, total = 0;
  for (const auto& ev : evals) {
    os << variant << "," << ev.client_id << "," << ev.report.csv_row() << ","
       << fmt(ev.auc_pa) << "\n";
    const double w = static_cast<double>(ev.test_len);
    wp += w * ev.report.precision;
    wr += w * ev.report.recall;
    wf += w * ev.report.f1;
    wa += w * ev.report.auc;
    wap += w * ev.auc_pa;
    total += w;
  }
  if (total > 0) {
    os << variant << ",weighted_avg,,,,," << fmt(wp / total) << "," << fmt(wr / total) << ","
       << fmt(wf / total) << "," << fmt(wa / total) << "," << fmt(wap / total) << "\n";
  }
}

std::vector<ClientEval> stage_evaluate(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string ckpt = out_dir + "/checkpoint.bin";
  if (!fs::exists(ckpt)) {
    throw InputError("checkpoint file not found: " + ckpt + " (run train first)");
  }
  const backbone::Model model = backbone::load_checkpoint(ckpt);
  auto evals = evaluate_model(model, cfg, out_dir);
  write_metrics_csv(out_dir + "/metrics.csv", cfg.variant, evals);
  return evals;
}

std::string stage_report(const std::string& out_dir) {
  const std::string path = out_dir + "/metrics.csv";
  std::ifstream is(path);
  if (!is) throw InputError("metrics file not found: " + path + " (run evaluate first)");

  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-12s %8s %8s %8s %8s\n", "variant", "client", "P", "R",
                "AUC", "F1");
  os << line;
  std::string row;
  std::getline(is, row);  // header
  while (std::getline(is, row)) {
    if (row.empty()) continue;
    std::stringstream ss(row);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 11) continue;
    auto pct = [](const std::string& s) -> std::string {
      if (s.empty()) return "-";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", std::strtod(s.c_str(), nullptr) * 100.0);
      return buf;
    };
    std::snprintf(line, sizeof(line), "%-10s %-12s %8s %8s %8s %8s\n", cells[0].c_str(),
                  cells[1].c_str(), pct(cells[6]).c_str(), pct(cells[7]).c_str(),
                  pct(cells[9]).c_str(), pct(cells[8]).c_str());
    os << line;
  }
  return os.str();
}

std::vector<ClientEval> run_all(const ExperimentConfig& cfg, const std::string& out_dir,
                                fed::WireLog* wire) {
  if (cfg.data_source == "synth") stage_gen_data(cfg, out_dir);
  if (cfg.use_ppds && cfg.train.lambda > 0.0) stage_synth_shared(cfg, out_dir);
  stage_train(cfg, out_dir, wire);
  return stage_evaluate(cfg, out_dir);
}

}  // namespace fedad::experiment
