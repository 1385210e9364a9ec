#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedad/backbone.hpp"
#include "fedad/matrix.hpp"

namespace fedad::detect {

struct DetectionConfig {
  double threshold_pct = 1.0;  // r: the top r% of scores are flagged
  bool point_adjust = true;

  void validate() const;
};

// Reconstruction-error outlier scores, one per test step. The forward pass
// uses no masking; steps beyond the last full window (or patch) score 0.
std::vector<double> score_series(const backbone::Model& model, const Matrix& test,
                                 std::size_t window_len);

// Exactly ceil(n * r / 100) positives: the highest scores, ties broken toward
// the earlier index.
std::vector<std::uint8_t> threshold_top_r(const std::vector<double>& scores, double r_pct);

// Marks a whole ground-truth anomaly segment detected when any of its points
// is predicted; predictions outside truth segments are left unchanged.
std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& pred,
                                       const std::vector<std::uint8_t>& truth);

struct EvalReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;  // filled separately by auc_roc

  std::string csv_row() const;
  std::string text_block() const;
};

EvalReport metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);

// Rank-based AUC (ties count one half); equal to the ROC integral.
double auc_roc(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth);

}  // namespace fedad::detect
