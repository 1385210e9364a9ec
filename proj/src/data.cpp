#include "fedad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedad/errors.hpp"
#include "fedad/rng.hpp"

namespace fedad::data {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

}  // namespace

Matrix load_matrix_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw InputError("load_csv: empty file " + path);

  // header row: dim_0..dim_{D-1}
  std::size_t cols = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      double v = 0.0;
      if (!parse_double(cell, v)) {
        throw InputError("load_csv: non-numeric cell in " + path + " at row " +
                         std::to_string(lineno) + ", column " + std::to_string(col));
      }
      values.push_back(v);
    }
    if (col != cols) {
      throw InputError("load_csv: inconsistent column count in " + path + " at row " +
                       std::to_string(lineno));
    }
    ++rows;
  }
  if (rows == 0) throw InputError("load_csv: no data rows in " + path);
  return Matrix(rows, cols, std::move(values));
}

void save_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw InputError("save_csv: cannot open " + path);
  for (std::size_t d = 0; d < m.cols; ++d) os << (d ? "," : "") << "dim_" << d;
  os << "\n";
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << fmt_double(m.at(r, c));
    os << "\n";
  }
}

std::vector<std::uint8_t> load_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("load_labels: cannot open " + path);
  std::vector<std::uint8_t> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "0" || line == "0\r") {
      labels.push_back(0);
    } else if (line == "1" || line == "1\r") {
      labels.push_back(1);
    } else {
      throw InputError("load_labels: expected 0/1 in " + path + " at line " +
                       std::to_string(lineno));
    }
  }
  if (labels.empty()) throw InputError("load_labels: empty label file " + path);
  return labels;
}

void save_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream os(path);
  if (!os) throw InputError("save_labels: cannot open " + path);
  for (auto l : labels) os << static_cast<int>(l) << "\n";
}

RawDataset load_csv(const std::string& train_path, const std::string& test_path,
                    const std::string& label_path) {
  RawDataset ds;
  ds.train = load_matrix_csv(train_path);
  ds.test = load_matrix_csv(test_path);
  ds.test_labels = load_labels(label_path);
  if (ds.train.cols != ds.test.cols) {
    throw InputError("load_csv: dimension mismatch between train and test");
  }
  if (ds.test_labels.size() != ds.test.rows) {
    throw InputError("load_csv: label count " + std::to_string(ds.test_labels.size()) +
                     " does not match test steps " + std::to_string(ds.test.rows));
  }
  return ds;
}

NormStats compute_stats(const Matrix& train) {
  if (train.empty()) throw InputError("normalize: empty training split");
  NormStats stats;
  stats.mean.assign(train.cols, 0.0);
  stats.stddev.assign(train.cols, 1.0);
  for (std::size_t c = 0; c < train.cols; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < train.rows; ++r) mu += train.at(r, c);
    mu /= static_cast<double>(train.rows);
    double var = 0.0;
    for (std::size_t r = 0; r < train.rows; ++r) {
      const double d = train.at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(train.rows);
    stats.mean[c] = mu;
    stats.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

void apply_stats(Matrix& m, const NormStats& stats) {
  if (m.cols != stats.mean.size()) throw InputError("apply_stats: dimension mismatch");
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      m.at(r, c) = (m.at(r, c) - stats.mean[c]) / stats.stddev[c];
}

NormStats normalize(RawDataset& ds) {
  NormStats stats = compute_stats(ds.train);
  apply_stats(ds.train, stats);
  apply_stats(ds.test, stats);
  return stats;
}

std::vector<Matrix> make_windows(const Matrix& series, std::size_t window_len) {
  if (window_len == 0) throw InputError("make_windows: window length must be positive");
  if (series.rows < window_len) {
    throw InputError("make_windows: series length " + std::to_string(series.rows) +
                     " shorter than window " + std::to_string(window_len));
  }
  const std::size_t n = series.rows / window_len;
  std::vector<Matrix> windows;
  windows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w(window_len, series.cols);
    std::copy(series.data.begin() + i * window_len * series.cols,
              series.data.begin() + (i + 1) * window_len * series.cols, w.data.begin());
    windows.push_back(std::move(w));
  }
  return windows;
}

// --- synthetic benchmark ----------------------------------------------------------

void SynthBenchConfig::validate() const {
  if (n_clients < 1) throw ConfigError("synth config: n_clients must be >= 1");
  if (dim < 1) throw ConfigError("synth config: dim must be >= 1");
  if (train_steps < 1 || test_steps < 1) throw ConfigError("synth config: steps must be >= 1");
  if (anomaly_rate < 0.0 || anomaly_rate > 0.2) {
    throw ConfigError("synth config: anomaly_rate must be in [0, 0.2]");
  }
  if (kinds.empty()) throw ConfigError("synth config: need at least one anomaly kind");
  if (base_noise <= 0.0) throw ConfigError("synth config: base_noise must be positive");
  if (freq_scale <= 0.0) throw ConfigError("synth config: freq_scale must be positive");
}

namespace {

struct ClientPattern {
  double freq;   // cycles per 100 steps
  double amp;
  double phase;
  double noise;
};

// Per-client base signals differ pairwise in frequency and amplitude, which
// induces the non-IID heterogeneity the federation has to cope with.
ClientPattern pattern_for(std::size_t client, double base_noise, double freq_scale, Rng& rng) {
  ClientPattern p;
  p.freq = freq_scale * (1.0 + 0.37 * static_cast<double>(client));
  p.amp = 0.8 + 0.15 * static_cast<double>(client);
  p.phase = rng.uniform(0.0, 6.283185307179586);
  p.noise = base_noise * (1.0 + 0.1 * static_cast<double>(client));
  return p;
}


// Bounded sensor noise: uniform with standard deviation p.noise. The bounded
// tail keeps (5-8) sigma spikes separable from noise excursions at this data
// volume.
double noise_sample(const ClientPattern& p, Rng& rng) {
  const double half_width = 1.7320508075688772 * p.noise;
  return rng.uniform(-half_width, half_width);
}

Matrix clean_series(const ClientPattern& p, std::size_t steps, std::size_t dim, Rng& rng) {
  Matrix m(steps, dim);
  const double omega = 2.0 * 3.14159265358979323846 * p.freq / 100.0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double base = p.amp * std::sin(omega * static_cast<double>(t) + p.phase + 0.7 * d);
      const double harm = 0.3 * p.amp * std::sin(2.0 * omega * static_cast<double>(t) + 1.3 * d);
      m.at(t, d) = base + harm + noise_sample(p, rng);
    }
  }
  return m;
}

void inject_anomalies(Matrix& series, std::vector<std::uint8_t>& labels, const ClientPattern& p,
                      const std::vector<AnomalyKind>& kinds, double rate, Rng& rng) {
  const std::size_t steps = series.rows;
  labels.assign(steps, 0);
  std::size_t budget = static_cast<std::size_t>(std::llround(rate * static_cast<double>(steps)));
  if (budget == 0) return;

  std::size_t kind_idx = 0;
  int attempts = 0;
  while (budget > 0 && attempts < 10000) {
    ++attempts;
    const AnomalyKind kind = kinds[kind_idx % kinds.size()];
    std::size_t len = 1;
    if (kind != AnomalyKind::spike) {
      len = 20 + rng.uniform_index(31);  // 20..50
      len = std::min(len, budget);
      if (len == 0) break;
    }
    if (len > steps) len = steps;
    const std::size_t start = rng.uniform_index(steps - len + 1);
    bool clash = false;
    for (std::size_t t = start; t < start + len; ++t) {
      if (labels[t]) {
        clash = true;
        break;
      }
    }
    if (clash) continue;
    kind_idx++;

    switch (kind) {
      case AnomalyKind::spike: {
        const double mag = (5.0 + 3.0 * rng.uniform()) * p.noise;
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (std::size_t d = 0; d < series.cols; ++d) series.at(start, d) += sign * mag;
        break;
      }
      case AnomalyKind::level_shift: {
        const double offset =
            (rng.uniform() < 0.5 ? -1.0 : 1.0) * (4.0 + 2.0 * rng.uniform()) * p.noise;
        for (std::size_t t = start; t < start + len; ++t)
          for (std::size_t d = 0; d < series.cols; ++d) series.at(t, d) += offset;
        break;
      }
      case AnomalyKind::variance_burst: {
        for (std::size_t t = start; t < start + len; ++t)
          for (std::size_t d = 0; d < series.cols; ++d)
            series.at(t, d) += 4.0 * noise_sample(p, rng);
        break;
      }
    }
    for (std::size_t t = start; t < start + len; ++t) labels[t] = 1;
    budget -= len;
  }
}

}  // namespace

std::vector<RawDataset> synth_benchmark(const SynthBenchConfig& cfg) {
  cfg.validate();
  std::vector<RawDataset> out;
  out.reserve(cfg.n_clients);
  for (std::size_t i = 0; i < cfg.n_clients; ++i) {
    Rng rng(derive_seed(cfg.seed, "synth_client/" + std::to_string(i)));
    const ClientPattern p = pattern_for(i, cfg.base_noise, cfg.freq_scale, rng);
    RawDataset ds;
    ds.train = clean_series(p, cfg.train_steps, cfg.dim, rng);
    if (cfg.contaminate_train) {
      inject_anomalies(ds.train, ds.train_labels, p, cfg.kinds, cfg.anomaly_rate, rng);
    }
    ds.test = clean_series(p, cfg.test_steps, cfg.dim, rng);
    inject_anomalies(ds.test, ds.test_labels, p, cfg.kinds, cfg.anomaly_rate, rng);
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace fedad::data
