#pragma once

#include <cstddef>
#include <vector>

namespace fedad {

// Thin SVD A = U diag(s) V^T with singular values sorted descending.
// u is m x r and v is n x r, both row-major, r = min(m, n).
struct SvdResult {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t r = 0;
  std::vector<double> u;
  std::vector<double> s;
  std::vector<double> v;
};

// Dense SVD via one-sided Jacobi rotations. Intended for the small matrices
// that arise from patch embeddings (dimensions on the order of tens).
SvdResult svd_small(const std::vector<double>& a, std::size_t m, std::size_t n);

}  // namespace fedad
