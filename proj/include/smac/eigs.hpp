#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace smac {

struct EigOptions {
  // Dense full decomposition below this size; shift-invert Lanczos above.
  int dense_threshold = 600;
  // Relative residual tolerance ||A x - lambda x|| / scale.
  double tol = 1e-9;
  // Operator-application budget = budget_multiplier * k.
  int budget_multiplier = 50;
  bool force_iterative = false;
};

struct EigPairs {
  Eigen::VectorXd values;  // ascending
  Eigen::MatrixXd vectors; // orthonormal columns
  int ops = 0;
  double max_residual = 0;
};

// Smallest k eigenpairs of a symmetric PSD sparse matrix.
EigPairs smallest_eigs_sym(const Eigen::SparseMatrix<double>& A, int k,
                           const EigOptions& opts = {});

} // namespace smac
