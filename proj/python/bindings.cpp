#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "signflip/signflip.hpp"

namespace py = pybind11;
using namespace signflip;

namespace {

ModelSpec make_spec(const VectorXd& y, const VectorXd& x, const std::optional<MatrixXd>& z, const std::string& family,
                    const std::optional<std::string>& link, double beta0) {
  ModelSpec s;
  s.family = Family::from_name(family);
  s.link = link ? Link::from_name(*link) : s.family.canonical_link();
  s.y = y;
  s.x = x;
  s.z = z ? *z : MatrixXd(y.size(), 0);
  s.beta0 = beta0;
  return s;
}

AnalysisData make_data(const MatrixXd& y, const VectorXd& x, const std::optional<MatrixXd>& z,
                       const std::optional<std::vector<std::string>>& ids) {
  AnalysisData d;
  d.y = y;
  d.x = x;
  d.z = z ? *z : MatrixXd(y.rows(), 0);
  if (ids) {
    if (static_cast<Eigen::Index>(ids->size()) != y.cols()) throw InvalidArgument("ids must name every column of y");
    d.ids = *ids;
  } else {
    for (Eigen::Index l = 0; l < y.cols(); ++l) d.ids.push_back("H" + std::to_string(l + 1));
  }
  return d;
}

FlipStatMatrix wrap(const MatrixXd& stats) {
  FlipStatMatrix M;
  M.stats = stats;
  for (Eigen::Index l = 0; l < stats.cols(); ++l) {
    for (Eigen::Index j = 0; j < stats.rows(); ++j) {
      if (std::isnan(stats(j, l))) {
        ++M.degenerate_cells;
        if (j == 0) M.degenerate_observed.push_back(l);
      }
    }
  }
  return M;
}

py::dict result_dict(const TestResult& r) {
  py::dict d;
  d["raw_stat"] = r.raw_stat;
  d["raw_p"] = r.raw_p;
  d["adj_p"] = r.adj_p;
  d["rejected"] = r.rejected;
  d["method"] = std::string(method_name(r.method));
  d["alpha"] = r.alpha;
  d["flips"] = r.flips;
  d["global_p"] = r.global_p;
  d["global_rejected"] = r.global_rejected;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sign-flip score tests for many GLMs fitted in parallel";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<NonConvergence>(m, "NonConvergence", base.ptr());
  py::register_exception<SeparationDetected>(m, "SeparationDetected", base.ptr());
  py::register_exception<SingularDesign>(m, "SingularDesign", base.ptr());
  py::register_exception<DegenerateVariance>(m, "DegenerateVariance", base.ptr());
  py::register_exception<TooLarge>(m, "TooLarge", base.ptr());
  py::register_exception<TooManyHypotheses>(m, "TooManyHypotheses", base.ptr());
  py::register_exception<SingularCovariance>(m, "SingularCovariance", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());

  m.attr("FLIP_GENERATOR") = std::string(kFlipGenerator);

  m.def("set_thread_count", &set_thread_count, py::arg("threads"));

  m.def(
      "make_plan",
      [](Eigen::Index n, Eigen::Index w, std::uint64_t seed) { return make_plan(n, w, seed).signs; },
      py::arg("n"), py::arg("flips") = kDefaultFlips, py::arg("seed") = 0,
      "w x n int8 sign matrix; row 0 is the identity flip.");
  m.def(
      "make_exhaustive", [](Eigen::Index n) { return make_exhaustive(n).signs; }, py::arg("n"));

  m.def(
      "fit_null",
      [](const VectorXd& y, const VectorXd& x, const std::optional<MatrixXd>& z, const std::string& family,
         const std::optional<std::string>& link, double beta0) {
        const NullFit f = fit_null(make_spec(y, x, z, family, link, beta0));
        py::dict d;
        d["gamma_hat"] = f.gamma_hat;
        d["mu_hat"] = f.mu_hat;
        d["w_diag"] = f.w_diag;
        d["dispersion"] = f.dispersion;
        d["loglik"] = f.loglik;
        d["converged"] = f.converged;
        d["iterations"] = f.iterations;
        return d;
      },
      py::arg("y"), py::arg("x"), py::arg("z") = py::none(), py::arg("family") = "gaussian",
      py::arg("link") = py::none(), py::arg("beta0") = 0.0);

  m.def(
      "flip_matrix",
      [](const MatrixXd& y, const VectorXd& x, const std::optional<MatrixXd>& z, const std::string& family,
         const std::optional<std::string>& link, Eigen::Index flips, std::uint64_t seed, bool standardized,
         const std::string& alternative, double beta0, bool exhaustive) {
        std::vector<ScoreDecomposition> decs;
        for (Eigen::Index l = 0; l < y.cols(); ++l) {
          const ModelSpec s = make_spec(y.col(l), x, z, family, link, beta0);
          decs.push_back(decompose(s, fit_null(s)));
        }
        const FlipPlan plan = exhaustive ? make_exhaustive(y.rows()) : make_plan(y.rows(), flips, seed);
        return build_matrix(decs, plan, standardized, alternative_from_name(alternative)).stats;
      },
      py::arg("y"), py::arg("x"), py::arg("z") = py::none(), py::arg("family") = "gaussian",
      py::arg("link") = py::none(), py::arg("flips") = kDefaultFlips, py::arg("seed") = 0,
      py::arg("standardized") = true, py::arg("alternative") = "two-sided", py::arg("beta0") = 0.0,
      py::arg("exhaustive") = false,
      "w x m matrix of flipped statistics; row 0 holds the observed values, NaN marks degenerate cells.");

  m.def(
      "perm_pvalue", [](const VectorXd& column) { return perm_pvalue(column); }, py::arg("column"));
  m.def(
      "maxt",
      [](const MatrixXd& stats, double alpha, bool step_down) {
        const FlipStatMatrix M = wrap(stats);
        return result_dict(step_down ? maxt_step_down(M, alpha) : maxt_single_step(M, alpha));
      },
      py::arg("stats"), py::arg("alpha") = 0.05, py::arg("step_down") = true);
  m.def(
      "closed_testing",
      [](const MatrixXd& stats, const std::string& psi, double alpha) {
        return result_dict(closed_testing(wrap(stats), CombiningFunction::from_name(psi), alpha));
      },
      py::arg("stats"), py::arg("psi") = "maxabs", py::arg("alpha") = 0.05);
  m.def(
      "global_test",
      [](const MatrixXd& stats, const std::vector<Eigen::Index>& subset, const std::string& psi) {
        return global_test(wrap(stats), subset, CombiningFunction::from_name(psi));
      },
      py::arg("stats"), py::arg("subset"), py::arg("psi") = "maxabs");
  m.def("mahalanobis_global", &mahalanobis_global, py::arg("raw_scores"), py::arg("cov"));
  m.def("flip_covariance", &flip_covariance, py::arg("raw_scores"));
  m.def("bonferroni_holm", &bonferroni_holm, py::arg("pvalues"));

  m.def(
      "competitor_tests",
      [](const VectorXd& y, const VectorXd& x, const std::optional<MatrixXd>& z, const std::string& family,
         const std::optional<std::string>& link, double beta0) {
        const CompetitorPValues p = competitor_tests(make_spec(y, x, z, family, link, beta0));
        py::dict d;
        d["wald"] = p.wald;
        d["score"] = p.score;
        d["lrt"] = p.lrt;
        return d;
      },
      py::arg("y"), py::arg("x"), py::arg("z") = py::none(), py::arg("family") = "gaussian",
      py::arg("link") = py::none(), py::arg("beta0") = 0.0);

  m.def(
      "analyze",
      [](const MatrixXd& y, const VectorXd& x, const std::optional<MatrixXd>& z, const std::string& family,
         const std::optional<std::string>& link, const std::string& method, const std::string& psi,
         const std::string& alternative, double alpha, Eigen::Index flips, std::uint64_t seed, double beta0,
         bool standardized, const std::optional<std::vector<std::string>>& ids) {
        AnalysisConfig cfg;
        cfg.y_file = "<memory>";
        cfg.x_file = "<memory>";
        cfg.family = Family::from_name(family);
        cfg.link = link ? Link::from_name(*link) : cfg.family.canonical_link();
        cfg.method = method;
        cfg.psi = psi;
        cfg.alternative = alternative_from_name(alternative);
        cfg.alpha = alpha;
        cfg.flips = flips;
        cfg.seed = seed;
        cfg.beta0 = beta0;
        cfg.standardized = standardized;
        const AnalysisData data = make_data(y, x, z, ids);
        const Diagnostics diag = validate_data(data, cfg.family);
        if (!diag.empty()) throw InvalidArgument("input validation failed:\n" + diag.summary());
        const AnalysisOutcome out = analyze(data, cfg);
        py::dict d = result_dict(out.result);
        d["ids"] = out.ids;
        d["convergence_failures"] = out.convergence_failures;
        d["degenerate_cells"] = out.degenerate_cells;
        std::ostringstream report;
        write_report(report, cfg, out);
        d["report"] = report.str();
        return d;
      },
      py::arg("y"), py::arg("x"), py::arg("z") = py::none(), py::arg("family") = "gaussian",
      py::arg("link") = py::none(), py::arg("method") = "maxt-sd", py::arg("psi") = "maxabs",
      py::arg("alternative") = "two-sided", py::arg("alpha") = 0.05, py::arg("flips") = kDefaultFlips,
      py::arg("seed") = 0, py::arg("beta0") = 0.0, py::arg("standardized") = true, py::arg("ids") = py::none());

  m.def(
      "simulate",
      [](const std::string& config) {
        std::istringstream in(config);
        const ScenarioConfig cfg = parse_config(in);
        std::ostringstream out;
        {
          py::gil_scoped_release release;
          run_study(cfg).write_csv(out);
        }
        return out.str();
      },
      py::arg("config"), "Run a study from config text; returns the CSV report.");
}
