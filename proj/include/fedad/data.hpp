#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedad/matrix.hpp"

namespace fedad::data {

struct RawDataset {
  Matrix train;                       // unlabeled unless contaminated
  Matrix test;
  std::vector<std::uint8_t> test_labels;
  std::vector<std::uint8_t> train_labels;  // empty for clean training splits
};

// train/test CSVs carry a header row (dim_0..dim_{D-1}); the label file has
// one 0/1 per line. Parse failures name the offending file line and column.
RawDataset load_csv(const std::string& train_path, const std::string& test_path,
                    const std::string& label_path);

Matrix load_matrix_csv(const std::string& path);
void save_matrix_csv(const std::string& path, const Matrix& m);
std::vector<std::uint8_t> load_labels(const std::string& path);
void save_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // zero-variance dimensions report 1
};

// Per-dimension z-score with train statistics, applied to both splits.
NormStats normalize(RawDataset& ds);
NormStats compute_stats(const Matrix& train);
void apply_stats(Matrix& m, const NormStats& stats);

std::vector<Matrix> make_windows(const Matrix& series, std::size_t window_len);

enum class AnomalyKind { spike, level_shift, variance_burst };

struct SynthBenchConfig {
  std::size_t n_clients = 4;
  std::size_t train_steps = 4000;
  std::size_t test_steps = 2000;
  std::size_t dim = 1;
  double anomaly_rate = 0.01;
  std::vector<AnomalyKind> kinds = {AnomalyKind::spike};
  bool contaminate_train = false;
  double base_noise = 0.2;
  double freq_scale = 1.0;  // scales every client's base frequency
  std::uint64_t seed = 0;

  void validate() const;
};

// Heterogeneous multi-client benchmark: each client gets its own frequency,
// amplitude, phase, and noise level. Labels mark exactly the perturbed steps.
std::vector<RawDataset> synth_benchmark(const SynthBenchConfig& cfg);

}  // namespace fedad::data
