#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedad/matrix.hpp"
#include "fedad/rng.hpp"

namespace fedad::adms {

struct AdmsConfig {
  std::size_t patch_len = 10;
  double mask_ratio = 0.20;
  double beta = 0.5;              // weight of the residual score vs the similarity score
  double score_threshold = 0.7;   // flag cutoff on the normalized combined score
  double weight_boost = 4.0;      // sampling-weight multiplier for flagged patches
  std::size_t ssa_window = 0;     // Hankel window L; 0 means patch_len / 2
  double energy_tail = 0.10;      // singular-energy fraction treated as residual

  void validate() const;
  std::size_t effective_ssa_window() const { return ssa_window ? ssa_window : patch_len / 2; }
};

// Non-overlapping patches of patch_len steps; a trailing remainder is dropped.
std::vector<Matrix> make_patches(const Matrix& series, std::size_t patch_len);

struct SsaDecomposition {
  std::vector<double> singular_values;            // non-increasing
  std::vector<std::vector<double>> components;    // per rank-1 term, diagonal-averaged series
  std::vector<std::size_t> residual_indices;      // trailing components within the energy tail
};

// Hankel embedding of a univariate channel, SVD, and diagonal averaging of
// each rank-1 term back to a series. The component sum reconstructs the
// input exactly (up to roundoff).
SsaDecomposition ssa_decompose(std::span<const double> channel, std::size_t window,
                               double energy_tail);

// Mean absolute value of the residual reconstruction, across channels.
double residual_score(const Matrix& patch, const AdmsConfig& cfg);

// Cosine similarity of each patch to its predecessor; the first patch and
// zero-norm patches report 1 (no anomaly evidence).
std::vector<double> inter_patch_similarity(const std::vector<Matrix>& patches);

struct PatchScore {
  double residual_raw = 0.0;
  double cosine_raw = 1.0;
  double residual_norm = 0.0;
  double cosine_norm = 0.0;
  double score = 0.0;
  bool flagged = false;
};

struct PatchScoreTable {
  std::vector<PatchScore> rows;
  std::size_t size() const { return rows.size(); }
};

PatchScoreTable score_patches(const std::vector<double>& residuals,
                              const std::vector<double>& cosines, double beta,
                              double score_threshold);

struct MaskPlan {
  std::vector<std::size_t> masked_indices;
  std::vector<double> sampling_weights;
};

// Weighted sampling without replacement of round(n * mask_ratio) patches
// (at least one). Flagged patches carry weight_boost, others weight 1.
MaskPlan select_mask(const PatchScoreTable& table, double mask_ratio, double weight_boost,
                     Rng& rng);

// Full pipeline for one window: patch, score each patch, combine.
PatchScoreTable score_window(const Matrix& window, const AdmsConfig& cfg);

}  // namespace fedad::adms
