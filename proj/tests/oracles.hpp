#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "fedad/backbone.hpp"
#include "fedad/tensor.hpp"

namespace oracles {

// plain triple-loop matrix product
inline std::vector<double> matmul_brute(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// exact min-cost assignment (Jonker-Volgenant style shortest augmenting
// paths); used as the optimal-coupling oracle for 1-D Wasserstein after
// expanding both samples to a common atom count
inline double assignment_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0);  // match[col] = row (1-based)
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    std::vector<std::size_t> way(n + 1, 0);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    if (match[j]) total += cost[match[j] - 1][j - 1];
  }
  return total;
}

// W1 between empirical measures via the transportation LP: expand both
// multisets to lcm(n, m) equal-mass atoms and solve an exact assignment
inline double wasserstein_coupling_oracle(const std::vector<double>& x,
                                          const std::vector<double>& y) {
  const std::size_t n = x.size(), m = y.size();
  const std::size_t l = std::lcm(n, m);
  std::vector<double> xa, ya;
  xa.reserve(l);
  ya.reserve(l);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < l / n; ++r) xa.push_back(x[i]);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t r = 0; r < l / m; ++r) ya.push_back(y[j]);
  std::vector<std::vector<double>> cost(l, std::vector<double>(l));
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) cost[i][j] = std::abs(xa[i] - ya[j]);
  return assignment_cost(cost) / static_cast<double>(l);
}

// AUC by explicit enumeration of positive/negative pairs, ties half
inline double auc_pairwise(const std::vector<double>& scores,
                           const std::vector<unsigned char>& truth) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!truth[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (truth[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// AUC as the trapezoidal integral of the ROC curve over unique thresholds
inline double auc_trapezoid(const std::vector<double>& scores,
                            const std::vector<unsigned char>& truth) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double n_pos = 0, n_neg = 0;
  for (auto t : truth) (t ? n_pos : n_neg) += 1.0;
  double tp = 0, fp = 0, prev_tpr = 0, prev_fpr = 0, area = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (truth[order[j]])
        tp += 1.0;
      else
        fp += 1.0;
      ++j;
    }
    const double tpr = tp / n_pos;
    const double fpr = fp / n_neg;
    area += 0.5 * (tpr + prev_tpr) * (fpr - prev_fpr);
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

// point adjustment by explicit segment scan
inline std::vector<unsigned char> point_adjust_reference(const std::vector<unsigned char>& pred,
                                                         const std::vector<unsigned char>& truth) {
  std::vector<unsigned char> out = pred;
  const std::size_t n = pred.size();
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  for (std::size_t i = 0; i < n;) {
    if (!truth[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && truth[j]) ++j;
    segments.emplace_back(i, j);
    i = j;
  }
  for (auto [a, b] : segments) {
    bool any = false;
    for (std::size_t t = a; t < b; ++t) any = any || pred[t];
    if (any)
      for (std::size_t t = a; t < b; ++t) out[t] = 1;
  }
  return out;
}

// parameter-count enumeration straight from the config arithmetic
struct BackboneShapeCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;  // for a given tune_last_k
  std::size_t frozen = 0;
};

inline BackboneShapeCounts enumerate_backbone_shapes(std::size_t d_model, std::size_t n_layers,
                                                     std::size_t d_ff, std::size_t patch_len,
                                                     std::size_t input_dim,
                                                     std::size_t max_patches,
                                                     std::size_t tune_last_k) {
  const std::size_t pw = patch_len * input_dim;
  const std::size_t io = (pw * d_model + d_model)      // embedding
                         + max_patches * d_model       // positional table
                         + d_model                     // mask token
                         + (d_model * pw + pw);        // output projection
  const std::size_t attn = 4 * (d_model * d_model + d_model);
  const std::size_t ff = d_model * d_ff + d_ff + d_ff * d_model + d_model;
  const std::size_t ln_per_block = 4 * d_model;  // two norms, gain+bias each
  const std::size_t block = attn + ff + ln_per_block;

  BackboneShapeCounts c;
  c.total = io + n_layers * block + 2 * d_model;  // + final norm
  c.trainable = io + tune_last_k * (attn + ff);
  c.frozen = c.total - c.trainable;
  return c;
}

// central-difference gradient check over every parameter of a model loss
inline double model_grad_check(fedad::backbone::Model& model,
                               const std::function<fedad::Tensor()>& loss_fn, double h) {
  fedad::Tensor loss = loss_fn();
  fedad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [id, t] : model.registry) analytic.push_back(t.grad());

  double worst = 0.0;
  std::size_t pi = 0;
  for (auto& [id, t] : model.registry) {
    auto& vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      double fp, fm;
      {
        fedad::autograd::NoGradGuard guard;
        fp = loss_fn().item();
        vals[i] = orig - h;
        fm = loss_fn().item();
      }
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
    ++pi;
  }
  for (auto& [id, t] : model.registry) t.zero_grad();
  return worst;
}

// 99th percentile of the chi-square distribution (Wilson-Hilferty above df 2)
inline double chi2_crit_99(std::size_t df) {
  if (df == 1) return 6.634896601021214;
  if (df == 2) return 9.21034037197618;
  const double z = 2.3263478740408408;  // Phi^{-1}(0.99)
  const double d = static_cast<double>(df);
  const double t = 1.0 - 2.0 / (9.0 * d) + z * std::sqrt(2.0 / (9.0 * d));
  return d * t * t * t;
}

}  // namespace oracles
