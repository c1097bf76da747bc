#include "signflip/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "signflip/errors.hpp"
#include "signflip/flip_plan.hpp"
#include "signflip/glm.hpp"
#include "signflip/parallel.hpp"

namespace signflip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool is_missing(const std::string& tok) {
  return tok.empty() || tok == "NA" || tok == "NaN" || tok == "nan" || tok == "na";
}

bool parse_number(const std::string& tok, double& value) {
  if (is_missing(tok)) {
    value = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  const char* begin = tok.c_str();
  char* end = nullptr;
  value = std::strtod(begin, &end);
  return end != begin && *end == '\0';
}

std::string format12(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

double parse12(const std::string& tok) {
  double v = 0.0;
  if (!parse_number(tok, v)) throw ParseError("report: malformed number '" + tok + "'");
  return v;
}

}  // namespace

NumericTable read_table(std::istream& in, char delimiter) {
  NumericTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  bool first = true;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (first && delimiter == 0) delimiter = line.find('\t') != std::string::npos ? '\t' : ',';
    const auto tokens = split_line(line, delimiter);
    std::vector<double> values(tokens.size());
    bool numeric = true;
    for (std::size_t i = 0; i < tokens.size(); ++i) numeric = parse_number(tokens[i], values[i]) && numeric;
    if (first) {
      width = tokens.size();
      first = false;
      if (!numeric) {
        table.header = tokens;
        continue;
      }
    }
    if (tokens.size() != width) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields, found " +
                       std::to_string(tokens.size()));
    }
    if (!numeric) throw ParseError("line " + std::to_string(lineno) + ": non-numeric field");
    rows.push_back(std::move(values));
  }
  table.delimiter = delimiter == 0 ? ',' : delimiter;
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) table.values(r, c) = rows[r][c];
  }
  return table;
}

NumericTable read_table_file(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return read_table(in, delimiter);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void AnalysisConfig::validate() const {
  if (y_file.empty() || x_file.empty()) throw InvalidArgument("--y and --x are required");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (flips < 2) throw InvalidArgument("need at least 2 flips");
  if (method != "maxt" && method != "maxt-sd" && method != "closed" && method != "mahalanobis" &&
      method != "global") {
    throw InvalidArgument("unknown method '" + method + "'");
  }
  CombiningFunction::from_name(psi);
  if (delimiter != 0 && delimiter != ',' && delimiter != '\t') throw InvalidArgument("delimiter must be comma or tab");
}

AnalysisData load_inputs(const AnalysisConfig& cfg) {
  const NumericTable y = read_table_file(cfg.y_file, cfg.delimiter);
  const NumericTable x = read_table_file(cfg.x_file, cfg.delimiter);
  AnalysisData data;
  data.y = y.values;
  if (x.values.cols() != 1) throw ParseError(cfg.x_file + ": target covariate file must have exactly one column");
  data.x = x.values.col(0);
  if (!cfg.z_file.empty()) {
    data.z = read_table_file(cfg.z_file, cfg.delimiter).values;
  } else {
    data.z = MatrixXd(data.y.rows(), 0);
  }
  if (data.y.rows() != data.x.size() || data.z.rows() != data.y.rows()) {
    throw ParseError("row-count mismatch: y has " + std::to_string(data.y.rows()) + ", x has " +
                     std::to_string(data.x.size()) + ", z has " + std::to_string(data.z.rows()));
  }
  if (data.y.cols() == 0 || data.y.rows() == 0) throw ParseError(cfg.y_file + ": no responses");
  for (Eigen::Index l = 0; l < data.y.cols(); ++l) {
    if (!y.header.empty()) data.ids.push_back(y.header[l]);
    else data.ids.push_back("H" + std::to_string(l + 1));
  }
  return data;
}

bool Diagnostics::has(const std::string& code) const {
  for (const auto& d : items) {
    if (d.code == code) return true;
  }
  return false;
}

std::string Diagnostics::summary() const {
  std::string s;
  for (const auto& d : items) s += d.code + ": " + d.message + "\n";
  return s;
}

Diagnostics validate_data(const AnalysisData& data, const Family& family) {
  Diagnostics diag;
  auto missing_in = [](const auto& m) { return m.size() > 0 && m.array().isNaN().any(); };
  if (missing_in(data.y) || missing_in(data.x) || missing_in(data.z)) {
    diag.items.push_back({"missing-values", "missing values are not supported; remove or impute them upstream"});
  }
  const Eigen::Index q = data.z.cols();
  const bool covariates_ok = data.x.allFinite() && (q == 0 || data.z.allFinite());
  if (covariates_ok && q > 0) {
    const Eigen::Index rank_z = numerical_rank(data.z);
    if (rank_z < q) {
      diag.items.push_back({"rank-deficient-nuisance",
                            "nuisance design z has rank " + std::to_string(rank_z) + " < " + std::to_string(q)});
    }
    MatrixXd xz(data.z.rows(), q + 1);
    xz.col(0) = data.x;
    xz.rightCols(q) = data.z;
    if (numerical_rank(xz) <= rank_z) {
      diag.items.push_back({"target-collinear", "target collinear with nuisance: x lies in span(z)"});
    }
  } else if (covariates_ok && data.x.norm() == 0.0) {
    diag.items.push_back({"target-collinear", "target covariate is identically zero"});
  }
  if (data.y.rows() < q + 2) {
    diag.items.push_back({"too-few-observations", "need n >= k + 1 observations"});
  }
  std::string bad;
  for (Eigen::Index l = 0; l < data.y.cols(); ++l) {
    for (Eigen::Index i = 0; i < data.y.rows(); ++i) {
      const double v = data.y(i, l);
      if (!std::isnan(v) && !family.valid_response(v)) {
        if (!bad.empty()) bad += ",";
        bad += data.ids.empty() ? std::to_string(l + 1) : data.ids[l];
        break;
      }
    }
  }
  if (!bad.empty()) {
    diag.items.push_back({"support-violation",
                          "responses outside the " + std::string(family.name()) + " support: " + bad});
  }
  return diag;
}

Diagnostics validate_inputs(const AnalysisConfig& cfg) {
  try {
    return validate_data(load_inputs(cfg), cfg.family);
  } catch (const Error& e) {
    Diagnostics d;
    d.items.push_back({"parse-error", e.what()});
    return d;
  }
}

AnalysisOutcome analyze(const AnalysisData& data, const AnalysisConfig& cfg) {
  cfg.validate();
  const Eigen::Index m = data.y.cols();
  const Eigen::Index n = data.y.rows();

  FitOptions fit_opts;
  fit_opts.throw_on_nonconvergence = !cfg.allow_unconverged;
  DecomposeOptions dec_opts;
  dec_opts.allow_unconverged = cfg.allow_unconverged;

  std::vector<ScoreDecomposition> decs(static_cast<std::size_t>(m));
  std::vector<std::string> errors(static_cast<std::size_t>(m));
  std::vector<char> unconverged(static_cast<std::size_t>(m), 0);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t l) {
    try {
      ModelSpec spec;
      spec.family = cfg.family;
      spec.link = cfg.link;
      spec.y = data.y.col(static_cast<Eigen::Index>(l));
      spec.x = data.x;
      spec.z = data.z;
      spec.beta0 = cfg.beta0;
      const NullFit fit = fit_null(spec, fit_opts);
      unconverged[l] = fit.converged ? 0 : 1;
      decs[l] = decompose(spec, fit, dec_opts);
    } catch (const Error& e) {
      errors[l] = e.what();
    }
  });
  std::string failures;
  for (Eigen::Index l = 0; l < m; ++l) {
    if (!errors[l].empty()) failures += "hypothesis " + data.ids[l] + " (" + std::to_string(l + 1) + "): " + errors[l] + "\n";
  }
  if (!failures.empty()) throw Error("model fitting failed:\n" + failures);

  const FlipPlan plan = make_plan(n, cfg.flips, cfg.seed);
  const FlipStatMatrix M = build_matrix(decs, plan, cfg.standardized, cfg.alternative);
  if (!M.degenerate_observed.empty()) {
    std::string ids;
    for (auto l : M.degenerate_observed) ids += " " + data.ids[l];
    throw DegenerateVariance("observed statistic has degenerate variance for hypotheses:" + ids);
  }

  AnalysisOutcome out;
  out.ids = data.ids;
  out.n = n;
  out.degenerate_cells = M.degenerate_cells;
  for (char u : unconverged) out.convergence_failures += u;

  if (cfg.method == "maxt") {
    out.result = maxt_single_step(M, cfg.alpha);
  } else if (cfg.method == "maxt-sd") {
    out.result = maxt_step_down(M, cfg.alpha);
  } else if (cfg.method == "closed") {
    out.result = closed_testing(M, CombiningFunction::from_name(cfg.psi), cfg.alpha);
  } else if (cfg.method == "global") {
    out.result = global_only(M, CombiningFunction::from_name(cfg.psi), cfg.alpha);
  } else {
    // Full standardization uses the signed effective scores.
    const FlipStatMatrix raw = build_matrix(decs, plan, false, Alternative::greater);
    out.result = global_only(M, CombiningFunction::max_abs(), cfg.alpha);
    out.result.global_p = mahalanobis_global(raw.stats, flip_covariance(raw.stats));
    const auto count = static_cast<Eigen::Index>(std::llround(out.result.global_p * static_cast<double>(plan.flips())));
    out.result.global_rejected = count <= rejection_budget(cfg.alpha, plan.flips());
  }
  return out;
}

void write_report(std::ostream& out, const AnalysisConfig& cfg, const AnalysisOutcome& o) {
  const TestResult& r = o.result;
  out << "# signflip report\n";
  out << "# generator\t" << kFlipGenerator << '\n';
  out << "# seed\t" << cfg.seed << '\n';
  out << "# flips\t" << r.flips << '\n';
  out << "# method\t" << cfg.method << '\n';
  out << "# psi\t" << cfg.psi << '\n';
  out << "# alternative\t" << alternative_name(cfg.alternative) << '\n';
  out << "# standardized\t" << (cfg.standardized ? 1 : 0) << '\n';
  out << "# alpha\t" << format12(r.alpha) << '\n';
  out << "# family\t" << cfg.family.name() << '\n';
  out << "# link\t" << cfg.link.name() << '\n';
  out << "# beta0\t" << format12(cfg.beta0) << '\n';
  out << "# n\t" << o.n << '\n';
  out << "# m\t" << r.hypotheses() << '\n';
  out << "# convergence_failures\t" << o.convergence_failures << '\n';
  out << "# degenerate_cells\t" << o.degenerate_cells << '\n';
  out << "# global_p\t" << format12(r.global_p) << '\n';
  out << "# global_rejected\t" << (std::isnan(r.global_p) ? "NA" : (r.global_rejected ? "1" : "0")) << '\n';
  out << "hypothesis_id\tobserved_stat\traw_p\tadj_p\trejected\n";
  for (Eigen::Index l = 0; l < r.hypotheses(); ++l) {
    out << o.ids[l] << '\t' << format12(r.raw_stat[l]) << '\t' << format12(r.raw_p[l]) << '\t' << format12(r.adj_p[l])
        << '\t' << (r.rejected[l] ? 1 : 0) << '\n';
  }
}

ParsedReport read_report(std::istream& in) {
  ParsedReport rep;
  std::string line;
  bool seen_columns = false;
  std::vector<double> obs, raw, adj;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto tab = line.find('\t');
      if (tab != std::string::npos) rep.header[line.substr(2, tab - 2)] = line.substr(tab + 1);
      continue;
    }
    const auto fields = split_line(line, '\t');
    if (!seen_columns) {
      if (fields.size() != 5 || fields[0] != "hypothesis_id") throw ParseError("report: missing column header");
      seen_columns = true;
      continue;
    }
    if (fields.size() != 5) throw ParseError("report: expected 5 fields");
    rep.ids.push_back(fields[0]);
    obs.push_back(parse12(fields[1]));
    raw.push_back(parse12(fields[2]));
    adj.push_back(parse12(fields[3]));
    rep.rejected.push_back(fields[4] == "1");
  }
  rep.observed_stat = Eigen::Map<VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  rep.raw_p = Eigen::Map<VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  rep.adj_p = Eigen::Map<VectorXd>(adj.data(), static_cast<Eigen::Index>(adj.size()));
  return rep;
}

AnalysisOutcome run_analysis(const AnalysisConfig& cfg) {
  cfg.validate();
  const AnalysisData data = load_inputs(cfg);
  const Diagnostics diag = validate_data(data, cfg.family);
  if (!diag.empty()) throw InvalidArgument("input validation failed:\n" + diag.summary());
  AnalysisOutcome outcome = analyze(data, cfg);
  if (cfg.out.empty() || cfg.out == "-") {
    write_report(std::cout, cfg, outcome);
  } else {
    std::ofstream f(cfg.out);
    if (!f) throw Error("cannot write '" + cfg.out + "'");
    write_report(f, cfg, outcome);
  }
  return outcome;
}

}  // namespace signflip
