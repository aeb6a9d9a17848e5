#pragma once

#include <cmath>
#include <stdexcept>

#include "prospec/rng.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

struct OrthoReport {
  bool completed_rank_deficiency = false;  // a row was replaced by a seeded random direction
  int replaced_rows = 0;
};

// Re-projects W (m x n, m <= n) onto the nearest-by-construction matrix with
// orthonormal rows spanning the same row space: QR of W^T via modified
// Gram-Schmidt with a second orthogonalization pass. The sign convention
// fixes diag(R) > 0, which makes the operation idempotent.
//
// Rank-deficient rows are replaced by directions drawn from a fixed-seed
// stream and re-orthogonalized, so the completion is deterministic.
inline OrthoReport orthonormalize_rows(Tensor& w, double rank_tol = 1e-10, uint64_t completion_seed = 0x5eedbeef) {
  const int m = w.rows();
  const int n = w.cols();
  if (m > n) throw std::invalid_argument("orthonormalize_rows: requires rows <= cols");
  OrthoReport report;
  Rng completion(completion_seed);
  for (int i = 0; i < m; ++i) {
    for (int attempt = 0;; ++attempt) {
      // Two projection passes; one is not enough near loss of orthogonality.
      for (int pass = 0; pass < 2; ++pass) {
        for (int k = 0; k < i; ++k) {
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += w.at(k, j) * w.at(i, j);
          for (int j = 0; j < n; ++j) w.at(i, j) -= dot * w.at(k, j);
        }
      }
      double norm2 = 0.0;
      for (int j = 0; j < n; ++j) norm2 += w.at(i, j) * w.at(i, j);
      const double norm = std::sqrt(norm2);
      if (norm > rank_tol) {
        const double inv = 1.0 / norm;
        for (int j = 0; j < n; ++j) w.at(i, j) *= inv;
        break;
      }
      if (attempt > n) throw std::runtime_error("orthonormalize_rows: basis completion failed");
      report.completed_rank_deficiency = true;
      if (attempt == 0) ++report.replaced_rows;
      for (int j = 0; j < n; ++j) w.at(i, j) = completion.normal();
    }
  }
  return report;
}

// max |W W^T - I|, the orthonormality residual.
inline double row_orthonormality_residual(const Tensor& w) {
  const int m = w.rows();
  const int n = w.cols();
  double worst = 0.0;
  for (int i = 0; i < m; ++i)
    for (int k = i; k < m; ++k) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += w.at(i, j) * w.at(k, j);
      worst = std::max(worst, std::abs(dot - (i == k ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace prospec
