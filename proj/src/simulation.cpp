#include "signflip/simulation.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "signflip/errors.hpp"
#include "signflip/flip_plan.hpp"
#include "signflip/multitest.hpp"
#include "signflip/parallel.hpp"

namespace signflip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

Eigen::Index to_count(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || std::floor(d) != d) throw ParseError("config key '" + key + "': expected a count, got '" + v + "'");
  return static_cast<Eigen::Index>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) out.push_back(to_double(key, item));
  return out;
}

// Average pairwise Pearson correlation between response columns, skipping
// constant columns.
double average_correlation(const MatrixXd& y) {
  const Eigen::Index n = y.rows();
  MatrixXd c = y.rowwise() - y.colwise().mean();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index l = 0; l < c.cols(); ++l) {
    const double s = c.col(l).norm();
    if (s > 0.0) {
      c.col(l) /= s;
      keep.push_back(l);
    }
  }
  if (keep.size() < 2 || n < 2) return std::numeric_limits<double>::quiet_NaN();
  MatrixXd kept(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) kept.col(static_cast<Eigen::Index>(i)) = c.col(keep[i]);
  const MatrixXd r = kept.transpose() * kept;
  const auto k = static_cast<double>(keep.size());
  return (r.sum() - r.trace()) / (k * (k - 1.0));
}

FlipPlan plan_for(const ScenarioConfig& cfg, std::uint64_t flip_seed) {
  return cfg.exhaustive ? make_exhaustive(cfg.n) : make_plan(cfg.n, cfg.w, flip_seed);
}

struct SettingPoint {
  NuisanceSetting setting;
  double rho_y = 0.0;
};

std::vector<NuisanceSetting> settings_of(const ScenarioConfig& cfg) {
  if (!cfg.settings.empty()) return cfg.settings;
  return {NuisanceSetting{cfg.gamma_true, cfg.rho_xz}};
}

std::vector<double> rho_levels_of(const ScenarioConfig& cfg) {
  if (!cfg.rho_y_grid.empty()) return cfg.rho_y_grid;
  return {cfg.rho_y};
}

ScenarioConfig at_point(const ScenarioConfig& cfg, const SettingPoint& pt) {
  ScenarioConfig c = cfg;
  c.gamma_true = pt.setting.gamma;
  c.rho_xz = pt.setting.rho_xz;
  c.rho_y = pt.rho_y;
  return c;
}

double half_width_ratio(double alpha, Eigen::Index reps) {
  return 1.96 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(reps)) / alpha;
}

constexpr double kMaxFailedFraction = 0.01;

}  // namespace

Eigen::Index ScenarioConfig::alternatives() const {
  const double count = frac_alt * static_cast<double>(m);
  const double rounded = std::round(count);
  if (std::abs(count - rounded) > 1e-9) throw InvalidArgument("frac_alt * m must be an integer");
  return static_cast<Eigen::Index>(rounded);
}

void ScenarioConfig::validate() const {
  if (study != "univariate" && study != "multivariate") throw InvalidArgument("study must be univariate or multivariate");
  if (n < 3 || m < 1 || n_sims < 1) throw InvalidArgument("scenario needs n >= 3, m >= 1, n_sims >= 1");
  if (!exhaustive && w < 2) throw InvalidArgument("scenario needs w >= 2");
  if (frac_alt < 0.0 || frac_alt > 1.0) throw InvalidArgument("frac_alt must lie in [0, 1]");
  alternatives();
  auto check_rho_y = [](double r) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("rho_y must lie in [0, 1)");
  };
  check_rho_y(rho_y);
  for (double r : rho_y_grid) check_rho_y(r);
  auto check_rho_xz = [](double r) {
    if (!(r > -1.0 && r < 1.0)) throw InvalidArgument("rho_xz must lie in (-1, 1)");
  };
  check_rho_xz(rho_xz);
  for (const auto& s : settings) check_rho_xz(s.rho_xz);
  if (alpha_grid.empty()) throw InvalidArgument("alpha_grid must not be empty");
  for (double a : alpha_grid) {
    if (!(a > 0.0 && a < 1.0)) throw InvalidArgument("alpha values must lie in (0, 1)");
  }
  if (family.kind() == FamilyKind::poisson) throw InvalidArgument("simulation supports binomial and gaussian only");
}

ScenarioConfig parse_config(std::istream& in) {
  ScenarioConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "study") cfg.study = v;
    else if (key == "n") cfg.n = to_count(key, v);
    else if (key == "m") cfg.m = to_count(key, v);
    else if (key == "family") cfg.family = Family::from_name(v);
    else if (key == "beta_alt") cfg.beta_alt = to_double(key, v);
    else if (key == "frac_alt") cfg.frac_alt = to_double(key, v);
    else if (key == "gamma_true" || key == "gamma") cfg.gamma_true = to_double(key, v);
    else if (key == "intercept") cfg.intercept = to_double(key, v);
    else if (key == "rho_xz") cfg.rho_xz = to_double(key, v);
    else if (key == "rho_y") cfg.rho_y = to_double(key, v);
    else if (key == "n_sims") cfg.n_sims = to_count(key, v);
    else if (key == "w" || key == "flips") cfg.w = to_count(key, v);
    else if (key == "alpha_grid") cfg.alpha_grid = to_list(key, v);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_count(key, v));
    else if (key == "alternative") cfg.alternative = alternative_from_name(v);
    else if (key == "include_intercept") cfg.include_intercept = to_bool(key, v);
    else if (key == "include_z") cfg.include_z = to_bool(key, v);
    else if (key == "exhaustive") cfg.exhaustive = to_bool(key, v);
    else if (key == "duplicate_response") cfg.duplicate_response = to_bool(key, v);
    else if (key == "rho_y_grid") cfg.rho_y_grid = to_list(key, v);
    else if (key == "settings") {
      // gamma:rho_xz pairs separated by commas, e.g. "0:0, 1:0, 0:0.5, 1:0.5"
      cfg.settings.clear();
      for (const auto& pair : split(v, ',')) {
        const auto colon = pair.find(':');
        if (colon == std::string::npos) throw ParseError("settings entry '" + pair + "' must be gamma:rho_xz");
        cfg.settings.push_back({to_double(key, trim(pair.substr(0, colon))), to_double(key, trim(pair.substr(colon + 1)))});
      }
    } else {
      throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  return parse_config(in);
}

Dataset gen_dataset(const ScenarioConfig& cfg, std::uint64_t replicate_seed) {
  const Eigen::Index n = cfg.n;
  const Eigen::Index m = cfg.m;
  const Eigen::Index n_alt = cfg.alternatives();
  boost::random::mt19937_64 rng(replicate_seed);
  boost::random::normal_distribution<double> normal;

  Dataset d;
  d.x.resize(n);
  VectorXd zcov(n);
  const double s = std::sqrt(1.0 - cfg.rho_xz * cfg.rho_xz);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e1 = normal(rng);
    const double e2 = normal(rng);
    d.x[i] = e1;
    zcov[i] = cfg.rho_xz * e1 + s * e2;
  }
  const Eigen::Index q = (cfg.include_intercept ? 1 : 0) + (cfg.include_z ? 1 : 0);
  d.z.resize(n, q);
  Eigen::Index col = 0;
  if (cfg.include_intercept) d.z.col(col++).setOnes();
  if (cfg.include_z) d.z.col(col++) = zcov;

  d.beta = VectorXd::Zero(m);
  d.beta.head(n_alt).setConstant(cfg.beta_alt);

  const Eigen::Index generated = cfg.duplicate_response ? 1 : m;
  d.y.resize(n, m);
  VectorXd common(n);
  for (Eigen::Index i = 0; i < n; ++i) common[i] = normal(rng);
  const double load = std::sqrt(cfg.rho_y);
  const double idio = std::sqrt(1.0 - cfg.rho_y);
  const boost::math::normal_distribution<double> std_normal;
  const Link link = cfg.family.canonical_link();

  for (Eigen::Index l = 0; l < generated; ++l) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double latent = load * common[i] + idio * normal(rng);
      const double eta = cfg.intercept + d.x[i] * d.beta[l] + zcov[i] * cfg.gamma_true;
      if (cfg.family.kind() == FamilyKind::binomial) {
        const double p = link.inverse(eta);
        d.y(i, l) = latent < boost::math::quantile(std_normal, p) ? 1.0 : 0.0;
      } else {
        d.y(i, l) = eta + latent;
      }
    }
  }
  for (Eigen::Index l = generated; l < m; ++l) d.y.col(l) = d.y.col(0);
  if (cfg.duplicate_response) d.beta.setConstant(d.beta[0]);
  return d;
}

ModelSpec response_spec(const ScenarioConfig& cfg, const Dataset& data, Eigen::Index response) {
  ModelSpec spec;
  spec.family = cfg.family;
  spec.link = cfg.family.canonical_link();
  spec.y = data.y.col(response);
  spec.x = data.x;
  spec.z = data.z;
  return spec;
}

double chi_square1_sf(double stat) {
  if (!(stat > 0.0)) return 1.0;
  return std::erfc(std::sqrt(stat / 2.0));
}

CompetitorPValues competitor_tests(const ModelSpec& spec, const NullFit& null_fit, const ScoreDecomposition& dec) {
  const FullFit full = fit_full(spec);
  CompetitorPValues p;
  const double z = (full.beta_hat - spec.beta0) / full.beta_se;
  p.wald = chi_square1_sf(z * z);
  const double info = dec.b.squaredNorm();
  if (!(info > 0.0)) throw DegenerateVariance("score test variance is zero");
  const double u = dec.nu.sum();
  p.score = chi_square1_sf(u * u / (info * null_fit.dispersion));
  p.lrt = chi_square1_sf(2.0 * (full.loglik - null_fit.loglik));
  return p;
}

CompetitorPValues competitor_tests(const ModelSpec& spec) {
  const NullFit null_fit = fit_null(spec);
  const ScoreDecomposition dec = decompose(spec, null_fit);
  return competitor_tests(spec, null_fit, dec);
}

double monte_carlo_se(double rate, Eigen::Index replicates) {
  if (replicates <= 0) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(rate * (1.0 - rate) / static_cast<double>(replicates));
}

const StudyRow& StudyReport::find(const std::string& method, double alpha, double gamma, double rho_xz,
                                  double rho_y) const {
  for (const auto& r : rows) {
    if (r.method == method && std::abs(r.alpha - alpha) < 1e-15 && std::abs(r.gamma - gamma) < 1e-12 &&
        std::abs(r.rho_xz - rho_xz) < 1e-12 && std::abs(r.rho_y - rho_y) < 1e-12) {
      return r;
    }
  }
  throw InvalidArgument("no study row for method " + method);
}

void StudyReport::write_csv(std::ostream& out) const {
  out << "study,gamma,rho_xz,rho_y,method,alpha,metric,rate,ratio,monte_carlo_se,band_half_width,"
         "power,power_se,avg_response_correlation,replicates,failed,valid\n";
  auto num = [&](double v) {
    std::ostringstream s;
    if (std::isnan(v)) s << "NA";
    else s << std::setprecision(10) << v;
    return s.str();
  };
  for (const auto& r : rows) {
    out << r.study << ',' << num(r.gamma) << ',' << num(r.rho_xz) << ',' << num(r.rho_y) << ',' << r.method << ','
        << num(r.alpha) << ',' << r.metric << ',' << num(r.rate) << ',' << num(r.ratio) << ','
        << num(r.monte_carlo_se) << ',' << num(r.band_half_width) << ',' << num(r.power) << ','
        << num(r.power_se) << ',' << num(r.avg_response_correlation) << ',' << r.replicates << ',' << r.failed
        << ',' << (r.valid ? "true" : "false") << '\n';
  }
}

StudyReport run_univariate_study(const ScenarioConfig& base) {
  base.validate();
  if (base.m != 1) throw InvalidArgument("univariate study needs m = 1");
  static const std::vector<std::string> kMethods{"flipscores", "wald", "score", "lrt"};

  StudyReport report;
  const auto settings = settings_of(base);
  for (std::size_t s = 0; s < settings.size(); ++s) {
    ScenarioConfig cfg = at_point(base, {settings[s], base.rho_y});
    cfg.beta_alt = 0.0;
    cfg.frac_alt = 0.0;
    const std::uint64_t key = counter_hash(base.seed, s);
    const auto reps = static_cast<std::size_t>(cfg.n_sims);

    // p-values per replicate: flipscores, wald, score, lrt. NaN marks failure.
    std::vector<std::array<double, 4>> pvals(reps);
    parallel_for(reps, [&](std::size_t rep) {
      try {
        const Dataset data = gen_dataset(cfg, counter_hash(key, 2 * rep));
        const ModelSpec spec = response_spec(cfg, data, 0);
        const NullFit nf = fit_null(spec);
        const ScoreDecomposition dec = decompose(spec, nf);
        const FlipPlan plan = plan_for(cfg, counter_hash(key, 2 * rep + 1));
        const std::array<ScoreDecomposition, 1> decs{dec};
        const FlipStatMatrix M = build_matrix(decs, plan, true, cfg.alternative);
        M.require_observed();
        const CompetitorPValues comp = competitor_tests(spec, nf, dec);
        pvals[rep] = {perm_pvalue(M.stats.col(0)), comp.wald, comp.score, comp.lrt};
      } catch (const Error&) {
        pvals[rep].fill(std::numeric_limits<double>::quiet_NaN());
      }
    });

    Eigen::Index failed = 0;
    for (const auto& p : pvals) failed += std::isnan(p[0]) ? 1 : 0;
    const Eigen::Index used = cfg.n_sims - failed;
    const bool valid = static_cast<double>(failed) < kMaxFailedFraction * static_cast<double>(cfg.n_sims);
    if (failed > 0) {
      std::clog << "univariate setting gamma=" << cfg.gamma_true << " rho_xz=" << cfg.rho_xz << ": " << failed
                << " failed replicates excluded\n";
    }

    for (std::size_t k = 0; k < kMethods.size(); ++k) {
      for (double alpha : cfg.alpha_grid) {
        Eigen::Index hits = 0;
        for (const auto& p : pvals) {
          if (!std::isnan(p[0]) && p[k] <= alpha) ++hits;
        }
        StudyRow row;
        row.study = "univariate";
        row.gamma = cfg.gamma_true;
        row.rho_xz = cfg.rho_xz;
        row.rho_y = cfg.rho_y;
        row.method = kMethods[k];
        row.alpha = alpha;
        row.metric = "size";
        row.rate = used > 0 ? static_cast<double>(hits) / static_cast<double>(used) : 0.0;
        row.ratio = row.rate / alpha;
        row.monte_carlo_se = monte_carlo_se(row.rate, used);
        row.band_half_width = half_width_ratio(alpha, used);
        row.replicates = used;
        row.failed = failed;
        row.valid = valid;
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

StudyReport run_multivariate_study(const ScenarioConfig& base) {
  base.validate();
  if (base.m < 2) throw InvalidArgument("multivariate study needs m >= 2");
  static const std::vector<std::string> kMethods{"flipscores", "wald", "score", "lrt"};
  const double alpha = base.alpha_grid.front();

  StudyReport report;
  const auto settings = settings_of(base);
  const auto levels = rho_levels_of(base);
  std::size_t point_index = 0;
  for (const auto& setting : settings) {
    for (double rho_y : levels) {
      const ScenarioConfig cfg = at_point(base, {setting, rho_y});
      const std::uint64_t key = counter_hash(base.seed, point_index++);
      const Eigen::Index m = cfg.m;
      const Eigen::Index n_alt = cfg.alternatives();
      const auto reps = static_cast<std::size_t>(cfg.n_sims);

      struct Outcome {
        bool failed = false;
        std::array<bool, 4> false_rejection{};
        std::array<double, 4> power{};
        double correlation = 0.0;
      };
      std::vector<Outcome> outcomes(reps);

      parallel_for(reps, [&](std::size_t rep) {
        Outcome& out = outcomes[rep];
        try {
          const Dataset data = gen_dataset(cfg, counter_hash(key, 2 * rep));
          out.correlation = average_correlation(data.y);
          std::vector<ScoreDecomposition> decs(static_cast<std::size_t>(m));
          std::array<VectorXd, 3> comp_p{VectorXd(m), VectorXd(m), VectorXd(m)};
          for (Eigen::Index l = 0; l < m; ++l) {
            const ModelSpec spec = response_spec(cfg, data, l);
            const NullFit nf = fit_null(spec);
            decs[l] = decompose(spec, nf);
            const CompetitorPValues c = competitor_tests(spec, nf, decs[l]);
            comp_p[0][l] = c.wald;
            comp_p[1][l] = c.score;
            comp_p[2][l] = c.lrt;
          }
          const FlipPlan plan = plan_for(cfg, counter_hash(key, 2 * rep + 1));
          const FlipStatMatrix M = build_matrix(decs, plan, true, cfg.alternative);
          const TestResult flip = maxt_step_down(M, alpha);

          std::array<std::vector<bool>, 4> rejected;
          rejected[0] = flip.rejected;
          for (int k = 0; k < 3; ++k) {
            const VectorXd adj = bonferroni_holm(comp_p[k]);
            rejected[k + 1].resize(static_cast<std::size_t>(m));
            for (Eigen::Index l = 0; l < m; ++l) rejected[k + 1][l] = adj[l] <= alpha;
          }
          for (int k = 0; k < 4; ++k) {
            bool any_false = false;
            Eigen::Index true_hits = 0;
            for (Eigen::Index l = 0; l < m; ++l) {
              if (data.beta[l] == 0.0) any_false = any_false || rejected[k][l];
              else true_hits += rejected[k][l] ? 1 : 0;
            }
            out.false_rejection[k] = any_false;
            const Eigen::Index alt_count = (data.beta.array() != 0.0).count();
            out.power[k] = alt_count > 0 ? static_cast<double>(true_hits) / static_cast<double>(alt_count)
                                         : std::numeric_limits<double>::quiet_NaN();
          }
        } catch (const Error&) {
          out.failed = true;
        }
      });

      Eigen::Index failed = 0;
      double corr_sum = 0.0;
      Eigen::Index corr_count = 0;
      for (const auto& o : outcomes) {
        if (o.failed) {
          ++failed;
        } else if (!std::isnan(o.correlation)) {
          corr_sum += o.correlation;
          ++corr_count;
        }
      }
      const Eigen::Index used = cfg.n_sims - failed;
      const bool valid = static_cast<double>(failed) < kMaxFailedFraction * static_cast<double>(cfg.n_sims);
      if (failed > 0) {
        std::clog << "multivariate setting gamma=" << cfg.gamma_true << " rho_xz=" << cfg.rho_xz
                  << " rho_y=" << rho_y << ": " << failed << " failed replicates excluded\n";
      }

      for (int k = 0; k < 4; ++k) {
        Eigen::Index fw = 0;
        double pw = 0.0;
        double pw2 = 0.0;
        for (const auto& o : outcomes) {
          if (o.failed) continue;
          fw += o.false_rejection[k] ? 1 : 0;
          pw += o.power[k];
          pw2 += o.power[k] * o.power[k];
        }
        StudyRow row;
        row.study = "multivariate";
        row.gamma = cfg.gamma_true;
        row.rho_xz = cfg.rho_xz;
        row.rho_y = rho_y;
        row.method = k == 0 ? "flipscores-maxt-sd" : kMethods[k] + "-holm";
        row.alpha = alpha;
        row.metric = "fwer";
        const auto u = static_cast<double>(used);
        row.rate = used > 0 ? static_cast<double>(fw) / u : 0.0;
        row.ratio = row.rate / alpha;
        row.monte_carlo_se = monte_carlo_se(row.rate, used);
        row.band_half_width = half_width_ratio(alpha, used);
        if (n_alt > 0 && used > 0) {
          // Per-replicate power is a fraction, so use its sample spread.
          row.power = pw / u;
          const double var = used > 1 ? std::max(0.0, (pw2 - u * row.power * row.power) / (u - 1.0)) : 0.0;
          row.power_se = std::sqrt(var / u);
        }
        row.avg_response_correlation = corr_count > 0 ? corr_sum / static_cast<double>(corr_count)
                                                      : std::numeric_limits<double>::quiet_NaN();
        row.replicates = used;
        row.failed = failed;
        row.valid = valid;
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

StudyReport run_study(const ScenarioConfig& cfg) {
  return cfg.study == "multivariate" ? run_multivariate_study(cfg) : run_univariate_study(cfg);
}

}  // namespace signflip
