#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "signflip/family.hpp"
#include "signflip/multitest.hpp"
#include "signflip/score.hpp"

namespace signflip {

// A delimited numeric file. Missing cells ("", NA, NaN) are kept as NaN so
// validation can report them.
struct NumericTable {
  std::vector<std::string> header;
  MatrixXd values;
  char delimiter = ',';
};

// delimiter 0 auto-detects tab vs comma from the first line. A first line
// containing a non-numeric, non-missing token is taken as a header.
NumericTable read_table(std::istream& in, char delimiter = 0);
NumericTable read_table_file(const std::string& path, char delimiter = 0);

struct AnalysisConfig {
  std::string y_file;
  std::string x_file;
  // Optional; without it the model has no nuisance covariates (not even an
  // intercept).
  std::string z_file;
  Family family = Family::gaussian();
  Link link = Link::identity();
  // maxt | maxt-sd | closed | mahalanobis | global
  std::string method = "maxt-sd";
  // maxabs | sumabs | sumsq (closed and global methods)
  std::string psi = "maxabs";
  Alternative alternative = Alternative::two_sided;
  double alpha = 0.05;
  Eigen::Index flips = 2000;
  std::uint64_t seed = 0;
  double beta0 = 0.0;
  std::string out;
  char delimiter = 0;
  bool standardized = true;
  bool allow_unconverged = false;

  void validate() const;
};

struct AnalysisData {
  MatrixXd y;
  VectorXd x;
  MatrixXd z;
  std::vector<std::string> ids;
};

// Throws ParseError on unreadable files, ragged rows or mismatched row counts.
AnalysisData load_inputs(const AnalysisConfig& cfg);

struct Diagnostic {
  std::string code;
  std::string message;
};

struct Diagnostics {
  std::vector<Diagnostic> items;

  bool empty() const { return items.empty(); }
  bool has(const std::string& code) const;
  std::string summary() const;
};

// Rank deficiency of Z, x in span(Z), response support violations and missing
// values. Never throws for data problems.
Diagnostics validate_data(const AnalysisData& data, const Family& family);
Diagnostics validate_inputs(const AnalysisConfig& cfg);

struct AnalysisOutcome {
  TestResult result;
  std::vector<std::string> ids;
  Eigen::Index n = 0;
  Eigen::Index convergence_failures = 0;
  Eigen::Index degenerate_cells = 0;
};

AnalysisOutcome analyze(const AnalysisData& data, const AnalysisConfig& cfg);

void write_report(std::ostream& out, const AnalysisConfig& cfg, const AnalysisOutcome& outcome);

struct ParsedReport {
  std::map<std::string, std::string> header;
  std::vector<std::string> ids;
  VectorXd observed_stat;
  VectorXd raw_p;
  VectorXd adj_p;
  std::vector<bool> rejected;
};

ParsedReport read_report(std::istream& in);

// load_inputs + validate + analyze + write_report to cfg.out.
AnalysisOutcome run_analysis(const AnalysisConfig& cfg);

}  // namespace signflip
