#include "signflip/glm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "signflip/errors.hpp"

namespace signflip {

namespace {

constexpr double kSeparationMu = 1e-10;
constexpr double kSeparationCondition = 1e12;
constexpr int kMaxHalvings = 30;
constexpr double kStepTolerance = 1e-6;

struct IrlsResult {
  VectorXd coef;
  VectorXd eta;
  VectorXd mu;
  double loglik = 0.0;
  double max_score = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct Weights {
  VectorXd d;
  VectorXd v;
  VectorXd w;
};

Weights weights_at(const Family& family, const Link& link, const VectorXd& eta, const VectorXd& mu) {
  const Eigen::Index n = eta.size();
  Weights out{VectorXd(n), VectorXd(n), VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.d[i] = link.mu_eta(eta[i]);
    out.v[i] = family.variance(mu[i]);
    out.w[i] = out.d[i] * out.d[i] / out.v[i];
  }
  return out;
}

VectorXd inverse_link(const Link& link, const VectorXd& eta) {
  return eta.unaryExpr([&](double e) { return link.inverse(e); });
}

bool means_valid(const Family& family, const VectorXd& mu) {
  return mu.unaryExpr([&](double m) { return family.valid_mean(m) ? 0.0 : 1.0; }).sum() == 0.0;
}

double condition_number(const MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

void check_separation(const Family& family, const MatrixXd& design, const VectorXd& mu, const VectorXd& w) {
  if (family.kind() != FamilyKind::binomial || design.cols() == 0) return;
  const bool pinned = (mu.array() < kSeparationMu).any() || (mu.array() > 1.0 - kSeparationMu).any();
  if (!pinned) return;
  // Singular either relative to itself (some directions lost all weight) or
  // relative to the unweighted design (every observation lost its weight).
  const MatrixXd info = design.transpose() * w.asDiagonal() * design;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(design.transpose() * design, Eigen::EigenvaluesOnly);
  const bool vanished = info.diagonal().maxCoeff() <= es.eigenvalues().maxCoeff() / kSeparationCondition;
  if (vanished || condition_number(info) > kSeparationCondition) {
    throw SeparationDetected("fitted probabilities at 0 or 1 with singular information matrix");
  }
}

// max_j |sum_i A_ij (y_i - mu_i) d_i / v_i| against a scale that keeps the
// tolerance meaningful for responses far from unit magnitude.
std::pair<double, double> score_and_scale(const MatrixXd& design, const VectorXd& y, const VectorXd& mu,
                                          const Weights& wt) {
  if (design.cols() == 0) return {0.0, 1.0};
  const VectorXd ratio = wt.d.cwiseQuotient(wt.v);
  const VectorXd score = design.transpose() * (ratio.cwiseProduct(y - mu));
  const VectorXd magnitude = design.cwiseAbs().transpose() * (ratio.cwiseAbs().cwiseProduct(y.cwiseAbs() + mu.cwiseAbs()));
  return {score.cwiseAbs().maxCoeff(), std::max(1.0, magnitude.maxCoeff())};
}

IrlsResult irls(const Family& family, const Link& link, const VectorXd& y, const MatrixXd& design,
                const VectorXd& offset, const FitOptions& options) {
  const Eigen::Index p = design.cols();
  IrlsResult res;

  if (p == 0) {
    res.coef = VectorXd(0);
    res.eta = offset;
    res.mu = inverse_link(link, res.eta);
    if (!means_valid(family, res.mu)) throw InvalidArgument("offset gives means outside the family's domain");
    res.loglik = log_likelihood(family, y, res.mu);
    res.converged = true;
    return res;
  }

  VectorXd mu = y.unaryExpr([&](double v) { return family.initial_mean(v); });
  VectorXd eta = mu.unaryExpr([&](double m) { return link.link(m); });
  VectorXd coef_old;
  double loglik_old = -std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    const Weights wt = weights_at(family, link, eta, mu);
    const VectorXd working = (eta - offset) + (y - mu).cwiseQuotient(wt.d);
    const MatrixXd info = design.transpose() * wt.w.asDiagonal() * design;
    Eigen::LLT<MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
      check_separation(family, design, mu, wt.w);
      throw SingularDesign("weighted cross-product matrix is not positive definite");
    }
    VectorXd coef = llt.solve(design.transpose() * wt.w.cwiseProduct(working));

    VectorXd eta_new = offset + design * coef;
    VectorXd mu_new = inverse_link(link, eta_new);
    double loglik = means_valid(family, mu_new) ? log_likelihood(family, y, mu_new)
                                                 : -std::numeric_limits<double>::infinity();
    if (coef_old.size() == p) {
      const double slack = 1e-10 * (1.0 + std::abs(loglik_old));
      for (int h = 0; h < kMaxHalvings && !(loglik >= loglik_old - slack); ++h) {
        coef = 0.5 * (coef + coef_old);
        eta_new = offset + design * coef;
        mu_new = inverse_link(link, eta_new);
        loglik = means_valid(family, mu_new) ? log_likelihood(family, y, mu_new)
                                             : -std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(loglik)) throw NonConvergence("step halving failed to find a valid step");
    } else if (!std::isfinite(loglik)) {
      // First step left the mean domain: halve toward the least-squares
      // projection of the starting linear predictor, if that one is valid.
      const VectorXd start = design.colPivHouseholderQr().solve(eta - offset);
      const VectorXd mu_start = inverse_link(link, offset + design * start);
      if (!means_valid(family, mu_start)) throw NonConvergence("initial IRLS step left the family's mean domain");
      for (int h = 0; h < kMaxHalvings && !std::isfinite(loglik); ++h) {
        coef = 0.5 * (coef + start);
        eta_new = offset + design * coef;
        mu_new = inverse_link(link, eta_new);
        loglik = means_valid(family, mu_new) ? log_likelihood(family, y, mu_new)
                                             : -std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(loglik)) throw NonConvergence("initial IRLS step left the family's mean domain");
    }

    const double step = coef_old.size() == p ? (coef - coef_old).cwiseAbs().maxCoeff()
                                             : std::numeric_limits<double>::infinity();
    eta = std::move(eta_new);
    mu = std::move(mu_new);
    coef_old = coef;
    loglik_old = loglik;

    const Weights at_new = weights_at(family, link, eta, mu);
    check_separation(family, design, mu, at_new.w);
    const auto [score, scale] = score_and_scale(design, y, mu, at_new);
    res.iterations = iter;
    res.max_score = score;
    // A small score alone is not enough: under separation the score decays
    // while the coefficients keep drifting, so the step must settle too.
    if (score <= options.tolerance * scale && step <= kStepTolerance * (1.0 + coef.cwiseAbs().maxCoeff())) {
      res.converged = true;
      break;
    }
  }

  res.coef = coef_old;
  res.eta = eta;
  res.mu = mu;
  res.loglik = loglik_old;
  if (!res.converged && options.throw_on_nonconvergence) {
    throw NonConvergence("IRLS did not converge in " + std::to_string(options.max_iterations) + " iterations");
  }
  return res;
}

VectorXd offset_of(const ModelSpec& spec) {
  return spec.offset.size() == 0 ? VectorXd::Zero(spec.n()) : spec.offset;
}

}  // namespace

Eigen::Index numerical_rank(const MatrixXd& a, double relative_threshold) {
  if (a.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
  qr.setThreshold(relative_threshold);
  return qr.rank();
}

double log_likelihood(const Family& family, const VectorXd& y, const VectorXd& mu) {
  const Eigen::Index n = y.size();
  if (family.kind() == FamilyKind::gaussian) {
    const double rss = std::max((y - mu).squaredNorm(), std::numeric_limits<double>::min());
    const double sigma2 = rss / static_cast<double>(n);
    return -0.5 * static_cast<double>(n) * (std::log(2.0 * M_PI * sigma2) + 1.0);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += family.log_density(y[i], mu[i]);
  return total;
}

void validate_spec(const ModelSpec& spec) {
  const Eigen::Index n = spec.n();
  if (spec.x.size() != n) throw InvalidArgument("x and y lengths differ");
  if (spec.z.cols() > 0 && spec.z.rows() != n) throw InvalidArgument("z and y row counts differ");
  if (spec.offset.size() != 0 && spec.offset.size() != n) throw InvalidArgument("offset and y lengths differ");
  const Eigen::Index k = spec.z.cols() + 1;
  if (n < k + 1) throw InvalidArgument("need n >= k + 1 observations");
  if (!spec.x.allFinite() || (spec.z.size() > 0 && !spec.z.allFinite()) || !std::isfinite(spec.beta0)) {
    throw InvalidArgument("non-finite covariate values");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!spec.family.valid_response(spec.y[i])) {
      throw InvalidArgument("response " + std::to_string(i) + " outside the " + std::string(spec.family.name()) +
                            " support");
    }
  }
  if (numerical_rank(spec.z) < spec.z.cols()) throw SingularDesign("nuisance design z is rank deficient");
}

NullFit fit_null(const ModelSpec& spec, const FitOptions& options) {
  validate_spec(spec);
  const VectorXd offset = offset_of(spec) + spec.beta0 * spec.x;
  const MatrixXd z = spec.z.cols() == 0 ? MatrixXd(spec.n(), 0) : spec.z;
  const IrlsResult res = irls(spec.family, spec.link, spec.y, z, offset, options);

  NullFit fit;
  fit.gamma_hat = res.coef;
  fit.eta_hat = res.eta;
  fit.mu_hat = res.mu;
  const Weights wt = weights_at(spec.family, spec.link, res.eta, res.mu);
  fit.d_diag = wt.d;
  fit.v_diag = wt.v;
  fit.w_diag = wt.w;
  fit.loglik = res.loglik;
  fit.max_nuisance_score = res.max_score;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  if (spec.family.kind() == FamilyKind::gaussian) {
    const double df = static_cast<double>(spec.n() - z.cols());
    fit.dispersion = (spec.y - res.mu).squaredNorm() / df;
  }
  return fit;
}

FullFit fit_full(const ModelSpec& spec, const FitOptions& options) {
  validate_spec(spec);
  const Eigen::Index n = spec.n();
  const Eigen::Index q = spec.z.cols();
  MatrixXd design(n, q + 1);
  design.col(0) = spec.x;
  if (q > 0) design.rightCols(q) = spec.z;
  if (numerical_rank(design) < q + 1) throw SingularDesign("target x lies in the span of the nuisance design");

  const IrlsResult res = irls(spec.family, spec.link, spec.y, design, offset_of(spec), options);

  // Observed information: A' diag(d^2/v - (y - mu) d(d/v)/d eta) A.
  VectorXd obs_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eta = res.eta[i];
    const double mu = res.mu[i];
    const double d = spec.link.mu_eta(eta);
    const double v = spec.family.variance(mu);
    const double dd = spec.link.mu_eta_derivative(eta);
    const double dv = spec.family.variance_derivative(mu);
    const double ratio_deriv = (dd * v - d * d * dv) / (v * v);
    obs_w[i] = d * d / v - (spec.y[i] - mu) * ratio_deriv;
  }
  const MatrixXd info = design.transpose() * obs_w.asDiagonal() * design;
  Eigen::LDLT<MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success) throw SingularDesign("observed information is singular");
  const MatrixXd cov = ldlt.solve(MatrixXd::Identity(q + 1, q + 1));

  FullFit fit;
  fit.beta_hat = res.coef[0];
  fit.gamma_hat = res.coef.tail(q);
  fit.loglik = res.loglik;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  if (spec.family.kind() == FamilyKind::gaussian) {
    fit.dispersion = (spec.y - res.mu).squaredNorm() / static_cast<double>(n - q - 1);
  }
  if (!(cov(0, 0) > 0.0)) throw SingularDesign("observed information is not positive definite");
  fit.beta_se = std::sqrt(fit.dispersion * cov(0, 0));
  return fit;
}

}  // namespace signflip
