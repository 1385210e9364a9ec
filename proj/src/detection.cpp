#include "fedad/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fedad/adms.hpp"
#include "fedad/errors.hpp"

namespace fedad::detect {

void DetectionConfig::validate() const {
  if (!(threshold_pct > 0.0 && threshold_pct < 100.0)) {
    throw ConfigError("detection config: threshold percentage must be in (0, 100)");
  }
}

std::vector<double> score_series(const backbone::Model& model, const Matrix& test,
                                 std::size_t window_len) {
  const std::size_t l_p = model.cfg.patch_len;
  if (test.rows < l_p) throw InputError("score_series: series shorter than one patch");
  if (test.cols != model.cfg.input_dim) throw InputError("score_series: dimension mismatch");

  std::vector<double> scores(test.rows, 0.0);
  const std::size_t n_windows = test.rows / window_len;
  const std::size_t pw = model.cfg.patch_width();

  autograd::NoGradGuard guard;
  for (std::size_t w = 0; w < n_windows; ++w) {
    const std::size_t base = w * window_len;
    const std::size_t n_patches = window_len / l_p;
    if (n_patches == 0) break;
    std::vector<double> flat(n_patches * pw);
    for (std::size_t p = 0; p < n_patches; ++p) {
      const std::size_t t0 = base + p * l_p;
      for (std::size_t t = 0; t < l_p; ++t)
        for (std::size_t d = 0; d < test.cols; ++d)
          flat[p * pw + t * test.cols + d] = test.at(t0 + t, d);
    }
    const Tensor patches({n_patches, pw}, flat);
    const Tensor recon = backbone::forward(model, patches, {});
    for (std::size_t p = 0; p < n_patches; ++p) {
      for (std::size_t t = 0; t < l_p; ++t) {
        double acc = 0.0;
        for (std::size_t d = 0; d < test.cols; ++d) {
          const std::size_t idx = p * pw + t * test.cols + d;
          acc += std::abs(flat[idx] - recon.values()[idx]);
        }
        scores[base + p * l_p + t] = acc / static_cast<double>(test.cols);
      }
    }
  }
  return scores;
}

std::vector<std::uint8_t> threshold_top_r(const std::vector<double>& scores, double r_pct) {
  if (scores.empty()) throw InputError("threshold_top_r: empty score list");
  const std::size_t n = scores.size();
  auto k = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * r_pct / 100.0 - 1e-12));
  k = std::min(std::max<std::size_t>(k, 0), n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::uint8_t> pred(n, 0);
  for (std::size_t i = 0; i < k; ++i) pred[order[i]] = 1;
  return pred;
}

std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& pred,
                                       const std::vector<std::uint8_t>& truth) {
  if (pred.size() != truth.size()) throw InputError("point_adjust: length mismatch");
  std::vector<std::uint8_t> out = pred;
  const std::size_t n = pred.size();
  std::size_t i = 0;
  while (i < n) {
    if (!truth[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && truth[j]) ++j;
    bool hit = false;
    for (std::size_t t = i; t < j && !hit; ++t) hit = pred[t] != 0;
    if (hit) {
      for (std::size_t t = i; t < j; ++t) out[t] = 1;
    }
    i = j;
  }
  return out;
}

EvalReport metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
  if (pred.size() != truth.size()) throw InputError("metrics: length mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i])
      ++r.tp;
    else if (pred[i] && !truth[i])
      ++r.fp;
    else if (!pred[i] && truth[i])
      ++r.fn;
    else
      ++r.tn;
  }
  r.precision = (r.tp + r.fp) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall > 0.0)
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double auc_roc(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth) {
  if (scores.size() != truth.size()) throw InputError("auc_roc: length mismatch");
  std::size_t n_pos = 0;
  for (auto t : truth) n_pos += t ? 1 : 0;
  const std::size_t n_neg = truth.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("auc_roc: truth must contain both classes");
  }

  // average ranks (ties share their mid-rank), then Mann-Whitney
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) rank[order[t]] = mid;
    i = j;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    if (truth[t]) rank_sum_pos += rank[t];
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::string EvalReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g", tp, fp, fn, tn,
                precision, recall, f1, auc);
  return buf;
}

std::string EvalReport::text_block() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "precision %.4f  recall %.4f  f1 %.4f  auc %.4f\n", precision,
                recall, f1, auc);
  os << line;
  os << "tp " << tp << "  fp " << fp << "  fn " << fn << "  tn " << tn << "\n";
  return os.str();
}

}  // namespace fedad::detect
