#include "signflip/multitest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "signflip/errors.hpp"

namespace signflip {

namespace {

constexpr double kTieTolerance = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return std::isnan(v) ? kInf : v; }

bool at_least(double value, double observed) {
  if (std::isnan(value)) return true;
  return value >= observed - kTieTolerance * std::max(1.0, std::abs(observed));
}

Eigen::Index count_at_least(const Eigen::Ref<const VectorXd>& values, double observed) {
  Eigen::Index c = 0;
  for (Eigen::Index j = 0; j < values.size(); ++j) c += at_least(values[j], observed) ? 1 : 0;
  return c;
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
}

TestResult base_result(const FlipStatMatrix& M, Method method, double alpha) {
  check_alpha(alpha);
  if (M.flips() < 1 || M.hypotheses() < 1) throw InvalidArgument("empty flip statistic matrix");
  M.require_observed();
  TestResult r;
  const Eigen::Index m = M.hypotheses();
  r.method = method;
  r.alpha = alpha;
  r.flips = M.flips();
  r.raw_stat = M.stats.row(0).transpose();
  r.raw_p.resize(m);
  for (Eigen::Index l = 0; l < m; ++l) r.raw_p[l] = perm_pvalue(M.stats.col(l));
  r.adj_p = VectorXd::Ones(m);
  r.rejected.assign(static_cast<std::size_t>(m), false);
  return r;
}

void decide(TestResult& r) {
  const auto w = static_cast<double>(r.flips);
  const Eigen::Index budget = rejection_budget(r.alpha, r.flips);
  for (Eigen::Index l = 0; l < r.hypotheses(); ++l) {
    const auto count = static_cast<Eigen::Index>(std::llround(r.adj_p[l] * w));
    r.rejected[l] = count <= budget;
  }
}

VectorXd row_maxima(const FlipStatMatrix& M) {
  VectorXd out(M.flips());
  for (Eigen::Index j = 0; j < M.flips(); ++j) {
    double mx = -kInf;
    for (Eigen::Index l = 0; l < M.hypotheses(); ++l) mx = std::max(mx, finite_or_inf(M.stats(j, l)));
    out[j] = mx;
  }
  return out;
}

}  // namespace

Method method_from_name(std::string_view name) {
  if (name == "maxt") return Method::maxt_single;
  if (name == "maxt-sd") return Method::maxt_stepdown;
  if (name == "closed") return Method::closed;
  if (name == "global" || name == "mahalanobis") return Method::global_only;
  throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::maxt_single: return "maxt";
    case Method::maxt_stepdown: return "maxt-sd";
    case Method::closed: return "closed";
    case Method::global_only: return "global";
  }
  return "?";
}

CombiningFunction CombiningFunction::from_name(std::string_view name) {
  if (name == "maxabs") return max_abs();
  if (name == "sumabs") return sum_abs();
  if (name == "sumsq") return sum_square();
  throw InvalidArgument("unknown combining function '" + std::string(name) + "'");
}

std::string_view CombiningFunction::name() const {
  switch (kind) {
    case Kind::max_abs: return "maxabs";
    case Kind::sum_abs: return "sumabs";
    case Kind::sum_square: return "sumsq";
    case Kind::mahalanobis: return "mahalanobis";
  }
  return "?";
}

double CombiningFunction::identity_element() const { return kind == Kind::max_abs ? -kInf : 0.0; }

double CombiningFunction::accumulate(double acc, double stat) const {
  const double s = finite_or_inf(stat);
  switch (kind) {
    case Kind::max_abs: return std::max(acc, s);
    case Kind::sum_abs: return acc + s;
    case Kind::sum_square: return s > 0.0 ? acc + s * s : acc;
    case Kind::mahalanobis: break;
  }
  throw InvalidArgument("mahalanobis is not a coordinate-wise combining function");
}

Eigen::Index TestResult::rejections() const {
  return static_cast<Eigen::Index>(std::count(rejected.begin(), rejected.end(), true));
}

Eigen::Index rejection_budget(double alpha, Eigen::Index w) {
  return static_cast<Eigen::Index>(std::floor(alpha * static_cast<double>(w) + 1e-9));
}

double perm_pvalue(const Eigen::Ref<const VectorXd>& column) {
  if (column.size() == 0) throw InvalidArgument("empty flip column");
  const double observed = column[0];
  if (std::isnan(observed)) throw DegenerateVariance("observed statistic is a degenerate sentinel");
  return static_cast<double>(count_at_least(column, observed)) / static_cast<double>(column.size());
}

double global_test(const FlipStatMatrix& M, std::span<const Eigen::Index> subset, const CombiningFunction& psi) {
  if (subset.empty()) throw InvalidArgument("global test needs a nonempty subset");
  for (auto l : subset) {
    if (l < 0 || l >= M.hypotheses()) throw InvalidArgument("subset index out of range");
  }
  if (psi.kind == CombiningFunction::Kind::mahalanobis) {
    const auto k = static_cast<Eigen::Index>(subset.size());
    MatrixXd sub(M.flips(), k);
    MatrixXd cov(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      sub.col(a) = M.stats.col(subset[a]);
      for (Eigen::Index b = 0; b < k; ++b) cov(a, b) = psi.covariance(subset[a], subset[b]);
    }
    return mahalanobis_global(sub, cov);
  }
  VectorXd t(M.flips());
  for (Eigen::Index j = 0; j < M.flips(); ++j) {
    double acc = psi.identity_element();
    for (auto l : subset) acc = psi.accumulate(acc, M.stats(j, l));
    t[j] = acc;
  }
  return perm_pvalue(t);
}

TestResult maxt_single_step(const FlipStatMatrix& M, double alpha) {
  TestResult r = base_result(M, Method::maxt_single, alpha);
  const VectorXd maxima = row_maxima(M);
  for (Eigen::Index l = 0; l < M.hypotheses(); ++l) {
    r.adj_p[l] = static_cast<double>(count_at_least(maxima, M.stats(0, l))) / static_cast<double>(M.flips());
  }
  decide(r);
  return r;
}

TestResult maxt_step_down(const FlipStatMatrix& M, double alpha) {
  TestResult r = base_result(M, Method::maxt_stepdown, alpha);
  const Eigen::Index m = M.hypotheses();
  const Eigen::Index w = M.flips();

  // Hypotheses by decreasing observed statistic; the successive maxima over
  // the not-yet-rejected suffix give the step-down null distributions.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return M.stats(0, a) > M.stats(0, b); });

  VectorXd suffix_max = VectorXd::Constant(w, -kInf);
  std::vector<double> stepwise(static_cast<std::size_t>(m));
  for (Eigen::Index r_idx = m - 1; r_idx >= 0; --r_idx) {
    const Eigen::Index l = order[r_idx];
    for (Eigen::Index j = 0; j < w; ++j) suffix_max[j] = std::max(suffix_max[j], finite_or_inf(M.stats(j, l)));
    stepwise[r_idx] = static_cast<double>(count_at_least(suffix_max, M.stats(0, l))) / static_cast<double>(w);
  }
  double running = 0.0;
  for (Eigen::Index r_idx = 0; r_idx < m; ++r_idx) {
    running = std::max(running, stepwise[r_idx]);
    r.adj_p[order[r_idx]] = running;
  }
  decide(r);
  return r;
}

TestResult closed_testing(const FlipStatMatrix& M, const CombiningFunction& psi, double alpha) {
  const Eigen::Index m = M.hypotheses();
  if (m > kMaxClosedHypotheses) {
    throw TooManyHypotheses("closed testing limited to m <= " + std::to_string(kMaxClosedHypotheses));
  }
  TestResult r = base_result(M, Method::closed, alpha);
  const Eigen::Index w = M.flips();
  r.adj_p.setZero();

  std::vector<Eigen::Index> members;
  members.reserve(static_cast<std::size_t>(m));

  if (psi.kind == CombiningFunction::Kind::mahalanobis) {
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << m); ++mask) {
      members.clear();
      for (Eigen::Index l = 0; l < m; ++l) {
        if (mask >> l & 1U) members.push_back(l);
      }
      const double p = global_test(M, members, psi);
      for (auto l : members) r.adj_p[l] = std::max(r.adj_p[l], p);
    }
  } else {
    // Depth-first over subsets, carrying the combined column of the parent.
    std::vector<VectorXd> stack(static_cast<std::size_t>(m) + 1, VectorXd(w));
    stack[0].setConstant(psi.identity_element());
    auto visit = [&](auto&& self, Eigen::Index start, std::size_t depth) -> void {
      for (Eigen::Index l = start; l < m; ++l) {
        VectorXd& cur = stack[depth + 1];
        const VectorXd& parent = stack[depth];
        for (Eigen::Index j = 0; j < w; ++j) cur[j] = psi.accumulate(parent[j], M.stats(j, l));
        members.push_back(l);
        const double p = perm_pvalue(cur);
        for (auto h : members) r.adj_p[h] = std::max(r.adj_p[h], p);
        self(self, l + 1, depth + 1);
        members.pop_back();
      }
    };
    visit(visit, 0, 0);
  }
  decide(r);
  return r;
}

TestResult global_only(const FlipStatMatrix& M, const CombiningFunction& psi, double alpha) {
  TestResult r = base_result(M, Method::global_only, alpha);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(M.hypotheses()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  r.global_p = global_test(M, all, psi);
  const auto count = static_cast<Eigen::Index>(std::llround(r.global_p * static_cast<double>(r.flips)));
  r.global_rejected = count <= rejection_budget(alpha, r.flips);
  return r;
}

double mahalanobis_global(const MatrixXd& raw_scores, const MatrixXd& cov) {
  const Eigen::Index m = raw_scores.cols();
  if (cov.rows() != m || cov.cols() != m) throw InvalidArgument("covariance does not match the score columns");
  if (raw_scores.rows() < 1 || m < 1) throw InvalidArgument("empty score matrix");
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularCovariance("covariance estimate is not positive definite");
  const VectorXd diag = MatrixXd(llt.matrixL()).diagonal();
  if (diag.minCoeff() <= 1e-7 * diag.maxCoeff()) {
    throw SingularCovariance("covariance estimate is numerically singular");
  }
  // Solve L Y = S' for all rows at once: T_j = ||Y_j||^2.
  const MatrixXd solved = llt.matrixL().solve(raw_scores.transpose());
  const VectorXd t = solved.colwise().squaredNorm().transpose();
  return perm_pvalue(t);
}

MatrixXd flip_covariance(const MatrixXd& raw_scores) {
  const Eigen::Index w = raw_scores.rows();
  const Eigen::Index m = raw_scores.cols();
  if (w < 2) throw InvalidArgument("need at least two flips to estimate a covariance");
  const MatrixXd centered = raw_scores.rowwise() - raw_scores.colwise().mean();
  MatrixXd cov = centered.transpose() * centered / static_cast<double>(w - 1);
  const double ridge = 1e-8 * cov.trace() / static_cast<double>(m);
  cov.diagonal().array() += ridge;
  return cov;
}

VectorXd bonferroni_holm(const VectorXd& pvalues) {
  const Eigen::Index m = pvalues.size();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(pvalues[i] >= 0.0 && pvalues[i] <= 1.0)) throw InvalidArgument("p-values must lie in [0, 1]");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return pvalues[a] < pvalues[b]; });
  VectorXd adj(m);
  double running = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double scaled = std::min(1.0, static_cast<double>(m - i) * pvalues[order[i]]);
    running = std::max(running, scaled);
    adj[order[i]] = running;
  }
  return adj;
}

}  // namespace signflip
