#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "signflip/flip_plan.hpp"
#include "signflip/glm.hpp"

namespace signflip {

enum class Alternative { two_sided, greater, less };

Alternative alternative_from_name(std::string_view name);
std::string_view alternative_name(Alternative alt);

// Per-observation pieces of the effective score for one response, with the
// nuisance projection kept in factored form (W^{1/2}Z and the Cholesky factor
// of Z'WZ) so that no n x n matrix is ever built.
struct ScoreDecomposition {
  // nu_i = a_i (y_i - mu_i); sum(nu) / sqrt(n) is the effective score.
  VectorXd nu;
  // a = X'W^{1/2}(I-P)V^{-1/2}, stored as a vector.
  VectorXd a;
  // b = (I-P)W^{1/2}x.
  VectorXd b;
  // W^{1/2}Z, n x (k-1).
  MatrixXd zw;
  // Lower Cholesky factor of Z'WZ.
  MatrixXd chol_lower;

  Eigen::Index n() const { return nu.size(); }
  double effective_score() const;
  // Var{S*} for the identity flip: b'b / n.
  double variance() const;
  double standardized_score() const;
};

struct DecomposeOptions {
  // Score an unconverged NullFit instead of throwing NonConvergence.
  bool allow_unconverged = false;
  // b is treated as exactly zero when ||b|| <= this times ||W^{1/2}x||,
  // i.e. when x lies numerically in span(Z).
  double collinearity_tolerance = 1e-10;
};

ScoreDecomposition decompose(const ModelSpec& spec, const NullFit& fit, const DecomposeOptions& options = {});

// Relative threshold: a flipped quadratic form u'(I-P)u at or below
// kDegenerateVariance * ||b||^2 cannot be standardized.
inline constexpr double kDegenerateVariance = 1e-12;

// n^{-1} X'W^{1/2}(I-P)G(I-P)G(I-P)W^{1/2}X, evaluated as
// n^{-1}(||Gb||^2 - ||L^{-1} Z_w'Gb||^2). Throws DegenerateVariance.
double flip_variance(const ScoreDecomposition& dec, std::span<const std::int8_t> g);

// n^{-1/2} sum_i g_i nu_i, optionally divided by sqrt(flip_variance).
double flipped_stat(const ScoreDecomposition& dec, std::span<const std::int8_t> g, bool standardized);

// w x m matrix of flipped statistics. Row 0 is the identity flip. Cells whose
// variance is degenerate hold NaN and are counted.
struct FlipStatMatrix {
  MatrixXd stats;
  bool standardized = true;
  Alternative alternative = Alternative::two_sided;
  Eigen::Index degenerate_cells = 0;
  // Hypotheses whose observed (identity-flip) statistic is a sentinel.
  std::vector<Eigen::Index> degenerate_observed;

  Eigen::Index flips() const { return stats.rows(); }
  Eigen::Index hypotheses() const { return stats.cols(); }
  // Throws DegenerateVariance naming the hypotheses with a sentinel in row 0.
  void require_observed() const;
};

double apply_alternative(double stat, Alternative alt);

// Every response is flipped with the same plan row, preserving the
// dependence between responses.
FlipStatMatrix build_matrix(std::span<const ScoreDecomposition> decs, const FlipPlan& plan, bool standardized = true,
                            Alternative alternative = Alternative::two_sided);

}  // namespace signflip
