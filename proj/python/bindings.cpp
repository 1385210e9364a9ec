#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "fedad/adms.hpp"
#include "fedad/data.hpp"
#include "fedad/detection.hpp"
#include "fedad/experiment.hpp"
#include "fedad/ppds.hpp"
#include "fedad/rng.hpp"

namespace py = pybind11;
using namespace fedad;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InputError("expected a non-empty 2-D array");
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols) throw InputError("ragged rows in 2-D array");
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c];
  }
  return m;
}

std::vector<std::vector<double>> from_matrix(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) rows[r][c] = m.at(r, c);
  return rows;
}

py::dict report_dict(const experiment::ClientEval& ev) {
  py::dict d;
  d["client_id"] = ev.client_id;
  d["precision"] = ev.report.precision;
  d["recall"] = ev.report.recall;
  d["f1"] = ev.report.f1;
  d["auc"] = ev.report.auc;
  d["auc_point_adjusted"] = ev.auc_pa;
  d["tp"] = ev.report.tp;
  d["fp"] = ev.report.fp;
  d["fn"] = ev.report.fn;
  d["tn"] = ev.report.tn;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "federated time-series anomaly detection core";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ConfigError>(m, "FedadConfigError");
  py::register_exception<InputError>(m, "FedadInputError");

  m.def(
      "wasserstein_1d",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        return ppds::wasserstein_1d(std::span<const double>(x), std::span<const double>(y));
      },
      py::arg("x"), py::arg("y"),
      "1-D Wasserstein distance between two empirical sample sets.");

  m.def(
      "gaussian_kl",
      [](const std::vector<double>& mu, const std::vector<double>& log_var) {
        return ppds::gaussian_kl(mu, log_var);
      },
      py::arg("mu"), py::arg("log_var"),
      "KL divergence of N(mu, exp(log_var)) from the standard normal.");

  m.def(
      "mutual_information",
      [](const std::vector<double>& x, const std::vector<double>& y, std::size_t bins,
         double bandwidth) { return ppds::mutual_information(x, y, bins, bandwidth); },
      py::arg("x"), py::arg("y"), py::arg("bins") = 16, py::arg("bandwidth") = 0.5,
      "Soft-histogram mutual information of index-paired samples; bandwidth 0 "
      "selects hard binning.");

  m.def(
      "ssa_decompose",
      [](const std::vector<double>& channel, std::size_t window, double energy_tail) {
        const auto d = adms::ssa_decompose(channel, window, energy_tail);
        py::dict out;
        out["singular_values"] = d.singular_values;
        out["components"] = d.components;
        out["residual_indices"] = d.residual_indices;
        return out;
      },
      py::arg("channel"), py::arg("window"), py::arg("energy_tail") = 0.10,
      "Singular spectrum analysis of a univariate patch.");

  m.def(
      "patch_scores",
      [](const std::vector<std::vector<double>>& window, std::size_t patch_len, double beta,
         double score_threshold) {
        adms::AdmsConfig cfg;
        cfg.patch_len = patch_len;
        cfg.beta = beta;
        cfg.score_threshold = score_threshold;
        const auto table = adms::score_window(to_matrix(window), cfg);
        std::vector<py::dict> rows;
        for (const auto& r : table.rows) {
          py::dict d;
          d["residual"] = r.residual_raw;
          d["cosine"] = r.cosine_raw;
          d["score"] = r.score;
          d["flagged"] = r.flagged;
          rows.push_back(d);
        }
        return rows;
      },
      py::arg("window"), py::arg("patch_len") = 10, py::arg("beta") = 0.5,
      py::arg("score_threshold") = 0.7,
      "Anomaly-driven patch scores for one window (steps x dims).");

  m.def(
      "threshold_top_r",
      [](const std::vector<double>& scores, double r_pct) {
        const auto pred = detect::threshold_top_r(scores, r_pct);
        return std::vector<int>(pred.begin(), pred.end());
      },
      py::arg("scores"), py::arg("r_pct"),
      "Flags the top r% of scores (ties break toward earlier indices).");

  m.def(
      "point_adjust",
      [](const std::vector<int>& pred, const std::vector<int>& truth) {
        const std::vector<std::uint8_t> p(pred.begin(), pred.end());
        const std::vector<std::uint8_t> t(truth.begin(), truth.end());
        const auto adj = detect::point_adjust(p, t);
        return std::vector<int>(adj.begin(), adj.end());
      },
      py::arg("pred"), py::arg("truth"),
      "Marks whole ground-truth segments detected when any point hits.");

  m.def(
      "metrics",
      [](const std::vector<int>& pred, const std::vector<int>& truth) {
        const std::vector<std::uint8_t> p(pred.begin(), pred.end());
        const std::vector<std::uint8_t> t(truth.begin(), truth.end());
        const auto r = detect::metrics(p, t);
        py::dict d;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["f1"] = r.f1;
        d["tp"] = r.tp;
        d["fp"] = r.fp;
        d["fn"] = r.fn;
        d["tn"] = r.tn;
        return d;
      },
      py::arg("pred"), py::arg("truth"), "Precision/recall/F1 with confusion counts.");

  m.def(
      "auc_roc",
      [](const std::vector<double>& scores, const std::vector<int>& truth) {
        const std::vector<std::uint8_t> t(truth.begin(), truth.end());
        return detect::auc_roc(scores, t);
      },
      py::arg("scores"), py::arg("truth"), "Rank-based AUC-ROC (ties count one half).");

  m.def(
      "generate_benchmark",
      [](std::size_t n_clients, std::size_t train_steps, std::size_t test_steps, std::size_t dim,
         double anomaly_rate, bool contaminate_train, std::uint64_t seed) {
        data::SynthBenchConfig cfg;
        cfg.n_clients = n_clients;
        cfg.train_steps = train_steps;
        cfg.test_steps = test_steps;
        cfg.dim = dim;
        cfg.anomaly_rate = anomaly_rate;
        cfg.contaminate_train = contaminate_train;
        cfg.seed = seed;
        std::vector<py::dict> out;
        for (const auto& ds : data::synth_benchmark(cfg)) {
          py::dict d;
          d["train"] = from_matrix(ds.train);
          d["test"] = from_matrix(ds.test);
          d["test_labels"] = std::vector<int>(ds.test_labels.begin(), ds.test_labels.end());
          d["train_labels"] = std::vector<int>(ds.train_labels.begin(), ds.train_labels.end());
          out.push_back(d);
        }
        return out;
      },
      py::arg("n_clients") = 4, py::arg("train_steps") = 4000, py::arg("test_steps") = 2000,
      py::arg("dim") = 1, py::arg("anomaly_rate") = 0.01, py::arg("contaminate_train") = false,
      py::arg("seed") = 0, "Heterogeneous multi-client benchmark with labeled anomalies.");

  m.def(
      "run_experiment",
      [](const std::string& config_text, const std::string& out_dir, const std::string& variant,
         std::int64_t seed) {
        auto cfg = experiment::parse_config_text(config_text);
        if (seed >= 0) {
          cfg.master_seed = static_cast<std::uint64_t>(seed);
          cfg.synth.seed = derive_seed(cfg.master_seed, "data");
          cfg.train.seed = derive_seed(cfg.master_seed, "train");
        }
        experiment::apply_variant(cfg, variant);
        const auto evals = experiment::run_all(cfg, out_dir);
        std::vector<py::dict> out;
        for (const auto& ev : evals) out.push_back(report_dict(ev));
        return out;
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("variant") = "full",
      py::arg("seed") = -1,
      "Full pipeline: generate data, synthesize the shared set, train "
      "federated, evaluate. Returns per-client metric dicts; artifacts land "
      "in out_dir.");
}
