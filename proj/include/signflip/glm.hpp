#pragma once

#include <Eigen/Dense>

#include "signflip/family.hpp"

namespace signflip {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One response's GLM: E(y) = g^{-1}(offset + x*beta + z*gamma).
// z must carry its own intercept column; none is added.
struct ModelSpec {
  Family family;
  Link link;
  VectorXd y;
  VectorXd x;
  MatrixXd z;
  double beta0 = 0.0;
  // Optional fixed offset; empty means zero.
  VectorXd offset;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index nuisance_count() const { return z.cols(); }
};

struct FitOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  // When false an exhausted iteration budget returns converged == false
  // instead of throwing NonConvergence.
  bool throw_on_nonconvergence = true;
};

// Constrained fit under H0: beta fixed at beta0, gamma estimated.
// Diagonals are evaluated at (beta0, gamma_hat) with a(phi) = 1.
struct NullFit {
  VectorXd gamma_hat;
  VectorXd mu_hat;
  VectorXd eta_hat;
  VectorXd w_diag;
  VectorXd d_diag;
  VectorXd v_diag;
  // Gaussian: RSS / (n - (k-1)). Otherwise 1.
  double dispersion = 1.0;
  double loglik = 0.0;
  double max_nuisance_score = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct FullFit {
  double beta_hat = 0.0;
  VectorXd gamma_hat;
  double loglik = 0.0;
  double beta_se = 0.0;
  double dispersion = 1.0;
  bool converged = false;
  int iterations = 0;
};

// Checks the ModelSpec invariants; throws InvalidArgument or SingularDesign.
void validate_spec(const ModelSpec& spec);

NullFit fit_null(const ModelSpec& spec, const FitOptions& options = {});
FullFit fit_full(const ModelSpec& spec, const FitOptions& options = {});

// Log-likelihood of y at the given means. For the gaussian family sigma^2 is
// profiled out (sigma^2 = RSS / n), which keeps likelihood ratios between
// nested gaussian fits equal to n log(RSS0 / RSS1).
double log_likelihood(const Family& family, const VectorXd& y, const VectorXd& mu);

// Numerical rank of a matrix via column-pivoted QR.
Eigen::Index numerical_rank(const MatrixXd& a, double relative_threshold = 1e-10);

}  // namespace signflip
