#pragma once

#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "signflip/score.hpp"

namespace signflip {

enum class Method { maxt_single, maxt_stepdown, closed, global_only };

Method method_from_name(std::string_view name);
std::string_view method_name(Method method);

// Non-decreasing map from the per-hypothesis statistics of one flip to a
// global statistic. The statistics are taken as stored in the FlipStatMatrix,
// i.e. already |S| for two-sided tests; for one-sided matrices sum_square only
// counts positive entries so that every kind stays non-decreasing.
struct CombiningFunction {
  enum class Kind { max_abs, sum_abs, sum_square, mahalanobis };

  Kind kind = Kind::max_abs;
  // Only used by Kind::mahalanobis: covariance of the signed effective scores.
  MatrixXd covariance;

  static CombiningFunction max_abs() { return {Kind::max_abs, {}}; }
  static CombiningFunction sum_abs() { return {Kind::sum_abs, {}}; }
  static CombiningFunction sum_square() { return {Kind::sum_square, {}}; }
  static CombiningFunction mahalanobis(MatrixXd cov) { return {Kind::mahalanobis, std::move(cov)}; }
  static CombiningFunction from_name(std::string_view name);

  std::string_view name() const;
  double identity_element() const;
  double accumulate(double acc, double stat) const;
};

struct TestResult {
  VectorXd raw_stat;
  VectorXd raw_p;
  VectorXd adj_p;
  std::vector<bool> rejected;
  Method method = Method::maxt_stepdown;
  double alpha = 0.05;
  Eigen::Index flips = 0;
  // Set by global-only analyses.
  double global_p = std::numeric_limits<double>::quiet_NaN();
  bool global_rejected = false;

  Eigen::Index hypotheses() const { return raw_p.size(); }
  Eigen::Index rejections() const;
};

// floor(alpha * w): the number of flips that may reach the observed value
// while still rejecting, which reproduces "reject iff T_1 > T_(ceil((1-alpha)w))".
Eigen::Index rejection_budget(double alpha, Eigen::Index w);

// #{j : column[j] >= column[0]} / w. Ties, including numerical ties within a
// relative 1e-12, count against rejection. NaN cells count as exceeding.
double perm_pvalue(const Eigen::Ref<const VectorXd>& column);

double global_test(const FlipStatMatrix& M, std::span<const Eigen::Index> subset, const CombiningFunction& psi);

TestResult maxt_single_step(const FlipStatMatrix& M, double alpha);
TestResult maxt_step_down(const FlipStatMatrix& M, double alpha);

inline constexpr Eigen::Index kMaxClosedHypotheses = 20;
TestResult closed_testing(const FlipStatMatrix& M, const CombiningFunction& psi, double alpha);

// Global test over all hypotheses; individual adjusted p-values are 1.
TestResult global_only(const FlipStatMatrix& M, const CombiningFunction& psi, double alpha);

// T_j = s_j' cov^{-1} s_j for every flip row, one factorization for all rows;
// returns perm_pvalue of T.
double mahalanobis_global(const MatrixXd& raw_scores, const MatrixXd& cov);

// Empirical covariance of the flipped score rows plus a 1e-8 * trace / m ridge.
MatrixXd flip_covariance(const MatrixXd& raw_scores);

VectorXd bonferroni_holm(const VectorXd& pvalues);

}  // namespace signflip
