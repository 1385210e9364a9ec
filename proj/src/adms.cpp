#include "fedad/adms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedad/errors.hpp"
#include "fedad/svd.hpp"

namespace fedad::adms {

void AdmsConfig::validate() const {
  if (patch_len < 2) throw ConfigError("adms config: patch_len must be >= 2");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("adms config: mask_ratio must be in (0, 1)");
  }
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("adms config: beta must be in [0, 1]");
  const std::size_t L = effective_ssa_window();
  if (L < 2 || L > patch_len - 1) {
    throw ConfigError("adms config: ssa_window must be in [2, patch_len - 1]");
  }
  if (!(energy_tail > 0.0 && energy_tail < 1.0)) {
    throw ConfigError("adms config: energy_tail must be in (0, 1)");
  }
  if (weight_boost <= 0.0) throw ConfigError("adms config: weight_boost must be positive");
}

std::vector<Matrix> make_patches(const Matrix& series, std::size_t patch_len) {
  if (series.rows < patch_len) {
    throw InputError("make_patches: series length " + std::to_string(series.rows) +
                     " shorter than patch length " + std::to_string(patch_len));
  }
  const std::size_t n = series.rows / patch_len;
  std::vector<Matrix> patches;
  patches.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix p(patch_len, series.cols);
    std::copy(series.data.begin() + i * patch_len * series.cols,
              series.data.begin() + (i + 1) * patch_len * series.cols, p.data.begin());
    patches.push_back(std::move(p));
  }
  return patches;
}

SsaDecomposition ssa_decompose(std::span<const double> channel, std::size_t window,
                               double energy_tail) {
  const std::size_t len = channel.size();
  if (window < 2 || window > len - 1) {
    throw ConfigError("ssa_decompose: window must be in [2, len - 1]");
  }
  const std::size_t ncols = len - window + 1;

  // Hankel embedding: H[i][j] = x[i + j]
  std::vector<double> hankel(window * ncols);
  for (std::size_t i = 0; i < window; ++i)
    for (std::size_t j = 0; j < ncols; ++j) hankel[i * ncols + j] = channel[i + j];

  const SvdResult svd = svd_small(hankel, window, ncols);

  SsaDecomposition out;
  out.singular_values = svd.s;
  out.components.resize(svd.r);

  // anti-diagonal averaging of each rank-1 term back to a length-len series
  for (std::size_t k = 0; k < svd.r; ++k) {
    std::vector<double> comp(len, 0.0);
    std::vector<double> counts(len, 0.0);
    const double sigma = svd.s[k];
    for (std::size_t i = 0; i < window; ++i) {
      const double ui = svd.u[i * svd.r + k];
      for (std::size_t j = 0; j < ncols; ++j) {
        comp[i + j] += sigma * ui * svd.v[j * svd.r + k];
        counts[i + j] += 1.0;
      }
    }
    for (std::size_t t = 0; t < len; ++t) comp[t] /= counts[t];
    out.components[k] = std::move(comp);
  }

  // residual set: the longest trailing run of singular values whose total
  // energy stays within energy_tail of the spectrum. Broadband patches
  // (spikes) can exceed the tail budget with every component; the last
  // component is still residual then, otherwise strong anomalies would score
  // zero.
  double total = 0.0;
  for (double s : svd.s) total += s * s;
  if (total > 0.0) {
    double tail = 0.0;
    std::size_t start = svd.r;
    for (std::size_t k = svd.r; k-- > 0;) {
      tail += svd.s[k] * svd.s[k];
      if (tail / total <= energy_tail)
        start = k;
      else
        break;
    }
    if (start == svd.r) start = svd.r - 1;
    for (std::size_t k = start; k < svd.r; ++k) out.residual_indices.push_back(k);
  }
  return out;
}

namespace {

// Diagonal averaging is not linear in the patch as a whole, but each SSA
// component sum is; the residual here is the anti-diagonal average of the
// trailing rank-1 terms.
double channel_residual_mean_abs(std::span<const double> channel, std::size_t window,
                                 double energy_tail) {
  const SsaDecomposition d = ssa_decompose(channel, window, energy_tail);
  if (d.residual_indices.empty()) return 0.0;
  const std::size_t len = channel.size();
  double acc = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    double r = 0.0;
    for (std::size_t k : d.residual_indices) r += d.components[k][t];
    acc += std::abs(r);
  }
  return acc / static_cast<double>(len);
}

}  // namespace

double residual_score(const Matrix& patch, const AdmsConfig& cfg) {
  const std::size_t L = cfg.effective_ssa_window();
  std::vector<double> channel(patch.rows);
  double acc = 0.0;
  for (std::size_t c = 0; c < patch.cols; ++c) {
    for (std::size_t t = 0; t < patch.rows; ++t) channel[t] = patch.at(t, c);
    acc += channel_residual_mean_abs(channel, L, cfg.energy_tail);
  }
  return acc / static_cast<double>(patch.cols);
}

std::vector<double> inter_patch_similarity(const std::vector<Matrix>& patches) {
  std::vector<double> sims(patches.size(), 1.0);
  for (std::size_t i = 1; i < patches.size(); ++i) {
    const auto& a = patches[i].data;
    const auto& b = patches[i - 1].data;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      dot += a[j] * b[j];
      na += a[j] * a[j];
      nb += b[j] * b[j];
    }
    sims[i] = (na == 0.0 || nb == 0.0) ? 1.0 : dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return sims;
}

namespace {

// min-max over the window; an all-equal population degenerates to zeros
std::vector<double> min_max_normalize(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  const double range = *hi - *lo;
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  }
  return out;
}

}  // namespace

PatchScoreTable score_patches(const std::vector<double>& residuals,
                              const std::vector<double>& cosines, double beta,
                              double score_threshold) {
  if (residuals.empty() || residuals.size() != cosines.size()) {
    throw InputError("score_patches: need matching non-empty residual and cosine lists");
  }
  const std::vector<double> r_norm = min_max_normalize(residuals);
  // flip monotonicity: low similarity means high anomaly evidence
  std::vector<double> dissim(cosines.size());
  for (std::size_t i = 0; i < cosines.size(); ++i) dissim[i] = (1.0 - cosines[i]) / 2.0;
  const std::vector<double> c_norm = min_max_normalize(dissim);

  PatchScoreTable table;
  table.rows.resize(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    auto& row = table.rows[i];
    row.residual_raw = residuals[i];
    row.cosine_raw = cosines[i];
    row.residual_norm = r_norm[i];
    row.cosine_norm = c_norm[i];
    row.score = beta * r_norm[i] + (1.0 - beta) * c_norm[i];
    row.flagged = row.score > score_threshold;
  }
  return table;
}

MaskPlan select_mask(const PatchScoreTable& table, double mask_ratio, double weight_boost,
                     Rng& rng) {
  const std::size_t n = table.size();
  if (n == 0) throw InputError("select_mask: empty score table");
  std::size_t count = static_cast<std::size_t>(std::llround(static_cast<double>(n) * mask_ratio));
  count = std::max<std::size_t>(count, 1);
  count = std::min(count, n);

  MaskPlan plan;
  plan.sampling_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    plan.sampling_weights[i] = table.rows[i].flagged ? weight_boost : 1.0;
  }

  // sequential weighted sampling without replacement
  std::vector<double> weights = plan.sampling_weights;
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  for (std::size_t draw = 0; draw < count; ++draw) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = npos;
    for (std::size_t i = 0; i < n; ++i) {
      if (weights[i] <= 0.0) continue;
      if (u < weights[i]) {
        pick = i;
        break;
      }
      u -= weights[i];
    }
    if (pick == npos) {
      // roundoff at the upper edge: take the last eligible index
      for (std::size_t i = n; i-- > 0;) {
        if (weights[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    plan.masked_indices.push_back(pick);
    weights[pick] = 0.0;
  }
  std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
  return plan;
}

PatchScoreTable score_window(const Matrix& window, const AdmsConfig& cfg) {
  cfg.validate();
  const std::vector<Matrix> patches = make_patches(window, cfg.patch_len);
  std::vector<double> residuals(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) residuals[i] = residual_score(patches[i], cfg);
  const std::vector<double> cosines = inter_patch_similarity(patches);
  return score_patches(residuals, cosines, cfg.beta, cfg.score_threshold);
}

}  // namespace fedad::adms
