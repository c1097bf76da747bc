#pragma once

// Test-only reference implementations. Everything here follows the textbook
// formulas with explicit n x n matrices or brute-force enumeration and shares
// no code path with the library internals it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "signflip/signflip.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd diag_from_signs(std::span<const std::int8_t> g) {
  MatrixXd G = MatrixXd::Zero(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) G(i, i) = g[i];
  return G;
}

// P = W^{1/2} Z (Z'WZ)^{-1} Z' W^{1/2}, formed explicitly.
inline MatrixXd projection(const MatrixXd& z, const VectorXd& w) {
  const Eigen::Index n = w.size();
  if (z.cols() == 0) return MatrixXd::Zero(n, n);
  const MatrixXd sw = w.cwiseSqrt().asDiagonal();
  const MatrixXd zwz = z.transpose() * w.asDiagonal() * z;
  return sw * z * zwz.inverse() * z.transpose() * sw;
}

struct Dense {
  MatrixXd P;
  MatrixXd IminusP;
  MatrixXd sw;
  MatrixXd v_inv_sqrt;
  VectorXd resid;
  VectorXd x;
  Eigen::Index n;
};

inline Dense dense(const signflip::ModelSpec& spec, const signflip::NullFit& fit) {
  Dense d;
  d.n = spec.n();
  d.P = projection(spec.z, fit.w_diag);
  d.IminusP = MatrixXd::Identity(d.n, d.n) - d.P;
  d.sw = fit.w_diag.cwiseSqrt().asDiagonal();
  d.v_inv_sqrt = fit.v_diag.cwiseSqrt().cwiseInverse().asDiagonal();
  d.resid = spec.y - fit.mu_hat;
  d.x = spec.x;
  return d;
}

// n^{-1/2} X'W^{1/2}(I-P)V^{-1/2} G (y - mu)
inline double effective_stat(const Dense& d, std::span<const std::int8_t> g) {
  const MatrixXd G = diag_from_signs(g);
  const double v = (d.x.transpose() * d.sw * d.IminusP * d.v_inv_sqrt * G * d.resid)(0, 0);
  return v / std::sqrt(static_cast<double>(d.n));
}

// n^{-1} X'W^{1/2}(I-P)G(I-P)G(I-P)W^{1/2}X
inline double flip_variance(const Dense& d, std::span<const std::int8_t> g) {
  const MatrixXd G = diag_from_signs(g);
  const MatrixXd& Q = d.IminusP;
  const double v = (d.x.transpose() * d.sw * Q * G * Q * G * Q * d.sw * d.x)(0, 0);
  return v / static_cast<double>(d.n);
}

// n^{-1} X'W^{1/2}(I-P)W^{1/2}X
inline double unflipped_variance(const Dense& d) {
  return (d.x.transpose() * d.sw * d.IminusP * d.sw * d.x)(0, 0) / static_cast<double>(d.n);
}

// Per-observation contributions X'W^{1/2}(I-P)V^{-1/2} diag(y - mu).
inline VectorXd contributions(const Dense& d) {
  const VectorXd row = (d.x.transpose() * d.sw * d.IminusP * d.v_inv_sqrt).transpose();
  return row.cwiseProduct(d.resid);
}

struct NewtonFit {
  VectorXd coef;
  MatrixXd cov;
  double loglik = 0.0;
};

// Plain Newton-Raphson for logistic regression with an offset, using the
// analytic Hessian, no step control. For well-conditioned test data only.
inline NewtonFit newton_logistic(const VectorXd& y, const MatrixXd& a, const VectorXd& offset) {
  NewtonFit f;
  f.coef = VectorXd::Zero(a.cols());
  for (int it = 0; it < 200; ++it) {
    const VectorXd eta = offset + a * f.coef;
    const VectorXd p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
    const VectorXd grad = a.transpose() * (y - p);
    const VectorXd wt = p.cwiseProduct(VectorXd::Ones(p.size()) - p);
    const MatrixXd hess = a.transpose() * wt.asDiagonal() * a;
    const VectorXd step = hess.fullPivLu().solve(grad);
    f.coef += step;
    if (step.cwiseAbs().maxCoeff() < 1e-14) break;
  }
  const VectorXd eta = offset + a * f.coef;
  const VectorXd p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
  const VectorXd wt = p.cwiseProduct(VectorXd::Ones(p.size()) - p);
  f.cov = (a.transpose() * wt.asDiagonal() * a).inverse();
  f.loglik = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) f.loglik += y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
  return f;
}

// #{j : col[j] >= col[0]} / w counted by brute force with exact comparison.
inline double brute_pvalue(const std::vector<double>& col) {
  double c = 0;
  for (double v : col) c += v >= col[0] - 1e-12 * std::max(1.0, std::abs(col[0])) ? 1 : 0;
  return c / static_cast<double>(col.size());
}

// Holm from the definition: adj_(i) = max_{s <= i} min(1, (m - s + 1) p_(s)).
inline VectorXd holm(const VectorXd& p) {
  const Eigen::Index m = p.size();
  VectorXd adj(m);
  for (Eigen::Index l = 0; l < m; ++l) {
    // Rank of p[l] with ties broken by index.
    double best = 0.0;
    for (Eigen::Index s = 0; s < m; ++s) {
      const bool before = p[s] < p[l] || (p[s] == p[l] && s <= l);
      if (!before) continue;
      Eigen::Index rank = 0;
      for (Eigen::Index t = 0; t < m; ++t) rank += (p[t] < p[s] || (p[t] == p[s] && t < s)) ? 1 : 0;
      best = std::max(best, std::min(1.0, static_cast<double>(m - rank) * p[s]));
    }
    adj[l] = best;
  }
  return adj;
}

// max-statistic global p-value for a subset, by brute force.
inline double subset_max_pvalue(const MatrixXd& M, const std::vector<Eigen::Index>& subset) {
  std::vector<double> t(static_cast<std::size_t>(M.rows()));
  for (Eigen::Index j = 0; j < M.rows(); ++j) {
    double mx = -INFINITY;
    for (auto l : subset) mx = std::max(mx, M(j, l));
    t[j] = mx;
  }
  return brute_pvalue(t);
}

// Closed testing with the max statistic over every subset, enumerated.
inline VectorXd closed_max_adjusted(const MatrixXd& M) {
  const Eigen::Index m = M.cols();
  VectorXd adj = VectorXd::Zero(m);
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << m); ++mask) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index l = 0; l < m; ++l) {
      if (mask >> l & 1U) s.push_back(l);
    }
    const double p = subset_max_pvalue(M, s);
    for (auto l : s) adj[l] = std::max(adj[l], p);
  }
  return adj;
}

// Literal step-down: reject with single-step max-T on the remaining columns,
// drop rejected columns, repeat until nothing new is rejected.
inline std::vector<bool> iterative_stepdown_rejections(const MatrixXd& M, double alpha) {
  const Eigen::Index m = M.cols();
  const Eigen::Index w = M.rows();
  const auto budget = static_cast<Eigen::Index>(std::floor(alpha * static_cast<double>(w) + 1e-9));
  std::vector<bool> rejected(static_cast<std::size_t>(m), false);
  for (;;) {
    std::vector<Eigen::Index> remaining;
    for (Eigen::Index l = 0; l < m; ++l) {
      if (!rejected[l]) remaining.push_back(l);
    }
    if (remaining.empty()) break;
    // Quantile rule: reject if observed > m_(ceil((1-alpha) w)).
    std::vector<double> maxima(static_cast<std::size_t>(w));
    for (Eigen::Index j = 0; j < w; ++j) {
      double mx = -INFINITY;
      for (auto l : remaining) mx = std::max(mx, M(j, l));
      maxima[j] = mx;
    }
    std::sort(maxima.begin(), maxima.end());
    const Eigen::Index q = w - budget;  // ceil((1-alpha) w), 1-based
    const double threshold = maxima[static_cast<std::size_t>(q - 1)];
    bool any = false;
    for (auto l : remaining) {
      if (M(0, l) > threshold * (1 + 1e-12) + 1e-12) {
        rejected[l] = true;
        any = true;
      }
    }
    if (!any) break;
  }
  return rejected;
}

// Step-down adjusted p-values by direct subset recursion: for the ordering by
// decreasing observed statistic, p_(r) = max_{s <= r} P(max over {o_s..o_m}).
inline VectorXd stepdown_adjusted(const MatrixXd& M) {
  const Eigen::Index m = M.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return M(0, a) > M(0, b); });
  VectorXd adj(m);
  double running = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    std::vector<Eigen::Index> suffix(order.begin() + r, order.end());
    std::vector<double> t(static_cast<std::size_t>(M.rows()));
    for (Eigen::Index j = 0; j < M.rows(); ++j) {
      double mx = -INFINITY;
      for (auto l : suffix) mx = std::max(mx, M(j, l));
      t[j] = mx;
    }
    // Observed value is that of o_r, the largest observed in the suffix.
    double c = 0;
    for (double v : t) c += v >= M(0, order[r]) - 1e-12 * std::max(1.0, std::abs(M(0, order[r]))) ? 1 : 0;
    running = std::max(running, c / static_cast<double>(M.rows()));
    adj[order[r]] = running;
  }
  return adj;
}

// Random small model for property tests: intercept plus k-2 normal columns.
inline signflip::ModelSpec random_model(std::mt19937_64& rng, signflip::FamilyKind family, Eigen::Index n,
                                        Eigen::Index k) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  signflip::ModelSpec s;
  s.family = signflip::Family(family);
  s.link = s.family.canonical_link();
  s.x = VectorXd(n);
  s.z = MatrixXd(n, k - 1);
  s.y = VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.x[i] = normal(rng);
    if (k > 1) s.z(i, 0) = 1.0;
    for (Eigen::Index c = 1; c < k - 1; ++c) s.z(i, c) = normal(rng);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double eta = 0.3 * s.x[i];
    for (Eigen::Index c = 1; c < k - 1; ++c) eta += 0.4 * s.z(i, c);
    if (family == signflip::FamilyKind::binomial) {
      s.y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    } else if (family == signflip::FamilyKind::poisson) {
      std::poisson_distribution<int> pois(std::exp(eta));
      s.y[i] = pois(rng);
    } else {
      s.y[i] = eta + normal(rng);
    }
  }
  return s;
}

}  // namespace oracle
