#include "fedad/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedad/errors.hpp"

namespace fedad {

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols), column-major work buffers.
SvdResult svd_tall(std::vector<double> w, std::size_t m, std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  auto col = [&](std::vector<double>& buf, std::size_t rows, std::size_t j) {
    return buf.data() + j * rows;
  };

  const double tol = 1e-15;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = col(w, m, p);
        double* wq = col(w, m, q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += wp[i] * wp[i];
          beta += wq[i] * wq[i];
          gamma += wp[i] * wq[i];
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double a = wp[i], b = wq[i];
          wp[i] = c * a - s * b;
          wq[i] = s * a + c * b;
        }
        double* vp = col(v, n, p);
        double* vq = col(v, n, q);
        for (std::size_t i = 0; i < n; ++i) {
          const double a = vp[i], b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }

  SvdResult out;
  out.m = m;
  out.n = n;
  out.r = n;
  out.s.resize(n);
  std::vector<double> u(m * n, 0.0);  // column-major for now
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    const double* wj = col(w, m, j);
    for (std::size_t i = 0; i < m; ++i) norm += wj[i] * wj[i];
    norm = std::sqrt(norm);
    out.s[j] = norm;
    if (norm > 0.0) {
      const double inv = 1.0 / norm;
      for (std::size_t i = 0; i < m; ++i) u[j * m + i] = wj[i] * inv;
    }
  }

  // sort singular values descending, permuting U and V columns to match
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.s[a] > out.s[b]; });

  SvdResult sorted;
  sorted.m = m;
  sorted.n = n;
  sorted.r = n;
  sorted.s.resize(n);
  sorted.u.assign(m * n, 0.0);
  sorted.v.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    sorted.s[k] = out.s[j];
    for (std::size_t i = 0; i < m; ++i) sorted.u[i * n + k] = u[j * m + i];
    for (std::size_t i = 0; i < n; ++i) sorted.v[i * n + k] = v[j * n + i];
  }
  return sorted;
}

}  // namespace

SvdResult svd_small(const std::vector<double>& a, std::size_t m, std::size_t n) {
  if (m == 0 || n == 0 || a.size() != m * n) throw ShapeError("svd_small: bad dimensions");
  if (m >= n) {
    // row-major to column-major
    std::vector<double> w(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) w[j * m + i] = a[i * n + j];
    return svd_tall(std::move(w), m, n);
  }
  // svd of the transpose, then swap factors
  std::vector<double> w(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) w[i * n + j] = a[i * n + j];  // A^T column-major == A row-major
  SvdResult t = svd_tall(std::move(w), n, m);
  SvdResult out;
  out.m = m;
  out.n = n;
  out.r = t.r;
  out.s = t.s;
  out.u = t.v;  // (A^T = U' S V'^T)  =>  A = V' S U'^T
  out.v = t.u;
  return out;
}

}  // namespace fedad
