#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedad/matrix.hpp"
#include "fedad/tensor.hpp"

namespace fedad::ppds {

struct VaeConfig {
  std::size_t latent_dim = 8;
  std::size_t hidden_dim = 64;
  double alpha1 = 1.0;        // weight of the distribution-similarity penalty
  double alpha2 = 0.1;        // weight of the mutual-information penalty
  std::size_t epochs = 200;
  double learning_rate = 0.02;
  std::size_t synth_length = 100;
  std::size_t mi_bins = 16;
  double mi_bandwidth = 0.5;  // soft-binning kernel width, in bin widths

  void validate() const;
};

// 1-D Wasserstein distance between empirical sample sets. Equal sizes reduce
// to the sorted pairing; unequal sizes integrate |F_X - F_Y| exactly over the
// merged support.
double wasserstein_1d(std::span<const double> x, std::span<const double> y);

// Multivariate series: per-dimension distance, averaged.
double wasserstein_1d(const Matrix& x, const Matrix& y);

// KL(N(mu, sigma^2) || N(0, I)) with sigma^2 supplied as log-variance.
double gaussian_kl(std::span<const double> mu, std::span<const double> log_var);

// Soft-histogram plug-in mutual information over index-paired samples.
// bandwidth == 0 selects hard binning. Values are range-normalized per
// argument before binning.
double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins,
                          double bandwidth);

// Graph ops for training: value identical to the plain functions, gradient
// flows into `synth` only (the real batch is data). Flattened values are
// grouped into `channels` interleaved sample sets, matching the per-dimension
// treatment of multivariate series.
Tensor wasserstein_loss(const Tensor& real, const Tensor& synth, std::size_t channels = 1);
Tensor mutual_information_loss(const Tensor& real, const Tensor& synth, std::size_t bins,
                               double bandwidth);

struct VaeModel {
  VaeConfig cfg;
  std::size_t input_dim = 0;   // flattened window width
  std::size_t series_dim = 0;  // original channel count D
  std::size_t window_len = 0;  // steps per training window
  Tensor enc_w1, enc_b1;
  Tensor enc_wmu, enc_bmu;
  Tensor enc_wlv, enc_blv;
  Tensor dec_w1, dec_b1;
  Tensor dec_w2, dec_b2;

  std::vector<Tensor> parameters();
  Tensor decode(const Tensor& z) const;
  Tensor encode_hidden(const Tensor& x) const;
};

// Train on full-batch gradient descent for cfg.epochs passes. Deterministic
// given seed. Throws TrainingError (with the epoch index) if the loss
// diverges to NaN.
VaeModel train_vae(const std::vector<Matrix>& windows, const VaeConfig& cfg, std::uint64_t seed);

// Decode seeded prior draws and stitch windows into a series of exactly
// synth_length steps.
Matrix synthesize(const VaeModel& model, std::size_t synth_length, std::uint64_t seed);

struct SharedDataset {
  struct Entry {
    int client_id = 0;
    Matrix series;
  };
  std::vector<Entry> entries;  // sorted by client id

  std::size_t size() const { return entries.size(); }
};

// Ordered union of the per-client syntheses, keyed and sorted by client id.
SharedDataset pool_shared_dataset(const std::vector<std::pair<int, Matrix>>& syntheses);

void save_shared_csv(const std::string& path, const SharedDataset& ds);
SharedDataset load_shared_csv(const std::string& path);

}  // namespace fedad::ppds
