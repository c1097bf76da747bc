#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "signflip/glm.hpp"
#include "signflip/score.hpp"

namespace signflip {

// A nuisance setting of the simulation grid: true gamma and corr(X, Z).
struct NuisanceSetting {
  double gamma = 0.0;
  double rho_xz = 0.0;
};

struct ScenarioConfig {
  std::string study = "univariate";
  Eigen::Index n = 50;
  Eigen::Index m = 1;
  Family family = Family::binomial();
  double beta_alt = 0.0;
  double frac_alt = 0.0;
  double gamma_true = 0.0;
  double intercept = 0.0;
  double rho_xz = 0.0;
  double rho_y = 0.0;
  Eigen::Index n_sims = 10000;
  Eigen::Index w = 2000;
  std::vector<double> alpha_grid{0.05, 0.005, 0.0005, 0.00005};
  std::uint64_t seed = 1;
  Alternative alternative = Alternative::two_sided;
  // Nuisance design: an intercept column and/or the simulated Z column.
  bool include_intercept = true;
  bool include_z = true;
  // Use all 2^n flips instead of w random ones.
  bool exhaustive = false;
  // Copy the first response into every column (perfect dependence).
  bool duplicate_response = false;
  // Study sweeps. Empty settings means the single (gamma_true, rho_xz);
  // empty rho_y_grid means the single rho_y.
  std::vector<NuisanceSetting> settings;
  std::vector<double> rho_y_grid;

  // Number of non-null responses, frac_alt * m. Throws if not an integer.
  Eigen::Index alternatives() const;
  void validate() const;
};

ScenarioConfig parse_config(std::istream& in);
ScenarioConfig load_config(const std::string& path);

struct Dataset {
  MatrixXd y;
  VectorXd x;
  // Nuisance design as used in the fitted models (intercept first, then Z).
  MatrixXd z;
  // True beta per response.
  VectorXd beta;
};

// (X, Z) bivariate standard normal with correlation rho_xz; responses drawn
// through an exchangeable Gaussian copula with latent correlation rho_y.
Dataset gen_dataset(const ScenarioConfig& cfg, std::uint64_t replicate_seed);

ModelSpec response_spec(const ScenarioConfig& cfg, const Dataset& data, Eigen::Index response);

struct CompetitorPValues {
  double wald = 1.0;
  double score = 1.0;
  double lrt = 1.0;
};

// Parametric Wald, score and likelihood-ratio tests of beta = beta0, all
// referred to chi-square(1).
CompetitorPValues competitor_tests(const ModelSpec& spec);
CompetitorPValues competitor_tests(const ModelSpec& spec, const NullFit& null_fit, const ScoreDecomposition& dec);

double chi_square1_sf(double stat);

struct StudyRow {
  std::string study;
  double gamma = 0.0;
  double rho_xz = 0.0;
  double rho_y = 0.0;
  std::string method;
  double alpha = 0.0;
  // "size" for univariate rows, "fwer" for multivariate rows.
  std::string metric;
  double rate = 0.0;
  double ratio = 0.0;
  double monte_carlo_se = 0.0;
  // Half-width of the 95% band around the nominal level, in ratio units.
  double band_half_width = 0.0;
  double power = std::numeric_limits<double>::quiet_NaN();
  double power_se = std::numeric_limits<double>::quiet_NaN();
  double avg_response_correlation = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index replicates = 0;
  Eigen::Index failed = 0;
  bool valid = true;
};

struct StudyReport {
  std::vector<StudyRow> rows;

  const StudyRow& find(const std::string& method, double alpha, double gamma, double rho_xz,
                       double rho_y = 0.0) const;
  void write_csv(std::ostream& out) const;
};

double monte_carlo_se(double rate, Eigen::Index replicates);

StudyReport run_univariate_study(const ScenarioConfig& cfg);
StudyReport run_multivariate_study(const ScenarioConfig& cfg);
StudyReport run_study(const ScenarioConfig& cfg);

}  // namespace signflip
