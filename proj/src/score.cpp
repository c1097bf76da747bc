#include "signflip/score.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "signflip/errors.hpp"
#include "signflip/parallel.hpp"

namespace signflip {

namespace {

constexpr Eigen::Index kRowBlock = 256;

double quadratic_residual(const ScoreDecomposition& dec, const VectorXd& u) {
  double qf = u.squaredNorm();
  if (dec.zw.cols() > 0) {
    const VectorXd t = dec.zw.transpose() * u;
    const VectorXd s = dec.chol_lower.triangularView<Eigen::Lower>().solve(t);
    qf -= s.squaredNorm();
  }
  return qf;
}

bool degenerate(double qf, double b_norm2) { return !(qf > kDegenerateVariance * b_norm2); }

}  // namespace

Alternative alternative_from_name(std::string_view name) {
  if (name == "two-sided" || name == "two_sided") return Alternative::two_sided;
  if (name == "greater") return Alternative::greater;
  if (name == "less") return Alternative::less;
  throw InvalidArgument("unknown alternative '" + std::string(name) + "'");
}

std::string_view alternative_name(Alternative alt) {
  switch (alt) {
    case Alternative::two_sided: return "two-sided";
    case Alternative::greater: return "greater";
    case Alternative::less: return "less";
  }
  return "?";
}

double ScoreDecomposition::effective_score() const { return nu.sum() / std::sqrt(static_cast<double>(n())); }

double ScoreDecomposition::variance() const { return b.squaredNorm() / static_cast<double>(n()); }

double ScoreDecomposition::standardized_score() const {
  const double v = variance();
  if (degenerate(b.squaredNorm(), b.squaredNorm()) || !(v > 0.0)) {
    throw DegenerateVariance("effective score has zero variance");
  }
  return effective_score() / std::sqrt(v);
}

ScoreDecomposition decompose(const ModelSpec& spec, const NullFit& fit, const DecomposeOptions& options) {
  const Eigen::Index n = spec.n();
  if (fit.mu_hat.size() != n || fit.w_diag.size() != n || fit.v_diag.size() != n || spec.x.size() != n) {
    throw InvalidArgument("null fit does not match the model dimensions");
  }
  if (!fit.converged && !options.allow_unconverged) {
    throw NonConvergence("refusing to score an unconverged null fit");
  }
  const Eigen::Index q = spec.z.cols();

  ScoreDecomposition dec;
  const VectorXd sw = fit.w_diag.cwiseSqrt();
  const VectorXd xw = sw.cwiseProduct(spec.x);
  dec.zw = q > 0 ? MatrixXd(sw.asDiagonal() * spec.z) : MatrixXd(n, 0);
  dec.b = xw;
  if (q > 0) {
    Eigen::LLT<MatrixXd> llt(dec.zw.transpose() * dec.zw);
    if (llt.info() != Eigen::Success) throw SingularDesign("Z'WZ is not positive definite");
    dec.chol_lower = llt.matrixL();
    dec.b -= dec.zw * llt.solve(dec.zw.transpose() * xw);
    // One refinement sweep keeps b orthogonal to W^{1/2}Z to rounding level.
    dec.b -= dec.zw * llt.solve(dec.zw.transpose() * dec.b);
  } else {
    dec.chol_lower = MatrixXd(0, 0);
  }
  if (dec.b.norm() <= options.collinearity_tolerance * xw.norm()) dec.b.setZero();

  dec.a = dec.b.cwiseQuotient(fit.v_diag.cwiseSqrt());
  dec.nu = dec.a.cwiseProduct(spec.y - fit.mu_hat);
  return dec;
}

double flip_variance(const ScoreDecomposition& dec, std::span<const std::int8_t> g) {
  const Eigen::Index n = dec.n();
  if (static_cast<Eigen::Index>(g.size()) != n) throw InvalidArgument("flip length does not match n");
  VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i) u[i] = g[i] * dec.b[i];
  const double qf = quadratic_residual(dec, u);
  if (degenerate(qf, dec.b.squaredNorm())) throw DegenerateVariance("flipped variance is degenerate");
  return qf / static_cast<double>(n);
}

double flipped_stat(const ScoreDecomposition& dec, std::span<const std::int8_t> g, bool standardized) {
  const Eigen::Index n = dec.n();
  if (static_cast<Eigen::Index>(g.size()) != n) throw InvalidArgument("flip length does not match n");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += g[i] * dec.nu[i];
  const double stat = sum / std::sqrt(static_cast<double>(n));
  if (!standardized) return stat;
  return stat / std::sqrt(flip_variance(dec, g));
}

double apply_alternative(double stat, Alternative alt) {
  switch (alt) {
    case Alternative::two_sided: return std::abs(stat);
    case Alternative::greater: return stat;
    case Alternative::less: return -stat;
  }
  return stat;
}

void FlipStatMatrix::require_observed() const {
  if (degenerate_observed.empty()) return;
  std::string ids;
  for (std::size_t i = 0; i < degenerate_observed.size(); ++i) {
    if (i) ids += ",";
    ids += std::to_string(degenerate_observed[i] + 1);
  }
  throw DegenerateVariance("observed statistic has degenerate variance for hypotheses " + ids);
}

FlipStatMatrix build_matrix(std::span<const ScoreDecomposition> decs, const FlipPlan& plan, bool standardized,
                            Alternative alternative) {
  const Eigen::Index m = static_cast<Eigen::Index>(decs.size());
  const Eigen::Index n = plan.n();
  const Eigen::Index w = plan.flips();
  for (const auto& d : decs) {
    if (d.n() != n) throw InvalidArgument("decomposition length does not match the flip plan");
  }

  // Columns per response: nu, then b_i * zw_i for the projected part.
  std::vector<Eigen::Index> offsets(m + 1, 0);
  for (Eigen::Index l = 0; l < m; ++l) {
    offsets[l + 1] = offsets[l] + 1 + (standardized ? decs[l].zw.cols() : 0);
  }
  MatrixXd loadings(n, offsets[m]);
  std::vector<double> b_norm2(m);
  for (Eigen::Index l = 0; l < m; ++l) {
    const auto& d = decs[l];
    loadings.col(offsets[l]) = d.nu;
    if (standardized) {
      for (Eigen::Index c = 0; c < d.zw.cols(); ++c) loadings.col(offsets[l] + 1 + c) = d.zw.col(c).cwiseProduct(d.b);
    }
    b_norm2[l] = d.b.squaredNorm();
  }

  FlipStatMatrix out;
  out.standardized = standardized;
  out.alternative = alternative;
  out.stats.resize(w, m);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double nan = std::numeric_limits<double>::quiet_NaN();

  const Eigen::Index blocks = (w + kRowBlock - 1) / kRowBlock;
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t blk) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(blk) * kRowBlock;
    const Eigen::Index rows = std::min(kRowBlock, w - r0);
    const MatrixXd g = plan.signs.middleRows(r0, rows).cast<double>();
    const MatrixXd proj = g * loadings;
    VectorXd t;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index l = 0; l < m; ++l) {
        double stat = proj(r, offsets[l]) / sqrt_n;
        if (standardized) {
          const auto& d = decs[l];
          const Eigen::Index q = d.zw.cols();
          double qf = b_norm2[l];
          if (q > 0) {
            t = proj.row(r).segment(offsets[l] + 1, q).transpose();
            d.chol_lower.triangularView<Eigen::Lower>().solveInPlace(t);
            qf -= t.squaredNorm();
          }
          if (degenerate(qf, b_norm2[l])) {
            out.stats(r0 + r, l) = nan;
            continue;
          }
          stat /= std::sqrt(qf / static_cast<double>(n));
        }
        out.stats(r0 + r, l) = apply_alternative(stat, alternative);
      }
    }
  });

  for (Eigen::Index l = 0; l < m; ++l) {
    for (Eigen::Index j = 0; j < w; ++j) {
      if (std::isnan(out.stats(j, l))) {
        ++out.degenerate_cells;
        if (j == 0) out.degenerate_observed.push_back(l);
      }
    }
  }
  return out;
}

}  // namespace signflip
