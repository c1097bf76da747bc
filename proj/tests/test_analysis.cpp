#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "signflip/analysis.hpp"
#include "signflip/errors.hpp"
#include "signflip/parallel.hpp"

using namespace signflip;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = SIGNFLIP_FIXTURE_DIR;

AnalysisConfig fixture_config() {
  AnalysisConfig cfg;
  cfg.y_file = kFixtures + "/logistic_y.csv";
  cfg.x_file = kFixtures + "/logistic_x.csv";
  cfg.z_file = kFixtures + "/logistic_z.csv";
  cfg.family = Family::binomial();
  cfg.link = Link::logit();
  cfg.seed = 17;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string report_text(const AnalysisConfig& cfg) {
  std::ostringstream out;
  write_report(out, cfg, analyze(load_inputs(cfg), cfg));
  return out.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("signflip_test_" + std::to_string(std::rand()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    std::ofstream(p) << content;
    return p.string();
  }
};

}  // namespace

TEST_CASE("read_table") {
  SUBCASE("header, comma delimiter, missing cells") {
    std::istringstream in("a,b,c\n1,2,3\n4,NA,6\r\n\n7,,9\n");
    const NumericTable t = read_table(in);
    CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
    CHECK(t.delimiter == ',');
    REQUIRE(t.values.rows() == 3);
    CHECK(t.values(1, 0) == 4.0);
    CHECK(std::isnan(t.values(1, 1)));
    CHECK(std::isnan(t.values(2, 1)));
  }
  SUBCASE("tab detection without header") {
    std::istringstream in("1.5\t-2e-3\n3\t4\n");
    const NumericTable t = read_table(in);
    CHECK(t.header.empty());
    CHECK(t.delimiter == '\t');
    CHECK(t.values(0, 1) == -2e-3);
  }
  SUBCASE("ragged rows and junk are parse errors") {
    std::istringstream ragged("1,2\n3\n");
    CHECK_THROWS_AS(read_table(ragged), ParseError);
    std::istringstream junk("1,2\n3,abc\n");
    CHECK_THROWS_AS(read_table(junk), ParseError);
  }
  SUBCASE("missing files") { CHECK_THROWS_AS(read_table_file("/nonexistent/y.csv"), ParseError); }
}

TEST_CASE("load_inputs checks row counts and names hypotheses") {
  TempDir dir;
  AnalysisConfig cfg;
  cfg.y_file = dir.file("y.csv", "1,2\n3,4\n5,6\n");
  cfg.x_file = dir.file("x.csv", "1\n2\n");
  CHECK_THROWS_AS(load_inputs(cfg), ParseError);
  cfg.x_file = dir.file("x2.csv", "1\n2\n3\n");
  const AnalysisData d = load_inputs(cfg);
  CHECK(d.ids == std::vector<std::string>{"H1", "H2"});
  CHECK(d.z.cols() == 0);
  cfg.x_file = dir.file("x3.csv", "1,1\n2,2\n3,3\n");
  CHECK_THROWS_AS(load_inputs(cfg), ParseError);
}

TEST_CASE("validate_inputs") {
  SUBCASE("clean fixture") { CHECK(validate_inputs(fixture_config()).empty()); }
  TempDir dir;
  AnalysisConfig cfg;
  cfg.family = Family::binomial();
  cfg.y_file = dir.file("y.csv", "g1,g2\n1,0\n0,2\n1,1\n0,0\n1,0\n");
  cfg.x_file = dir.file("x.csv", "0.1\n0.5\n-0.2\n0.9\n1.3\n");
  cfg.z_file = dir.file("z.csv", "1,0.1\n1,0.5\n1,-0.2\n1,0.9\n1,1.3\n");
  SUBCASE("x equal to a z column and y outside the support") {
    const Diagnostics d = validate_inputs(cfg);
    CHECK(d.has("target-collinear"));
    CHECK(d.has("support-violation"));
    CHECK(d.summary().find("g2") != std::string::npos);
    CHECK(d.summary().find("target collinear with nuisance") != std::string::npos);
  }
  SUBCASE("rank-deficient z and missing values") {
    cfg.z_file = dir.file("z2.csv", "1,2\n1,2\n1,2\n1,2\n1,NA\n");
    const Diagnostics d = validate_inputs(cfg);
    CHECK(d.has("missing-values"));
    cfg.z_file = dir.file("z3.csv", "1,2\n1,2\n1,2\n1,2\n1,2\n");
    CHECK(validate_inputs(cfg).has("rank-deficient-nuisance"));
  }
  SUBCASE("unreadable input is reported, not thrown") {
    cfg.y_file = "/nonexistent/y.csv";
    CHECK(validate_inputs(cfg).has("parse-error"));
  }
}

TEST_CASE("single response reduces to the univariate flip test") {
  const AnalysisConfig cfg = fixture_config();
  AnalysisData data = load_inputs(cfg);
  data.y = data.y.col(2).eval();
  data.ids = {data.ids[2]};
  const AnalysisOutcome out = analyze(data, cfg);
  ModelSpec s;
  s.family = cfg.family;
  s.link = cfg.link;
  s.y = data.y.col(0);
  s.x = data.x;
  s.z = data.z;
  const ScoreDecomposition dec = decompose(s, fit_null(s));
  const FlipPlan plan = make_plan(s.n(), cfg.flips, cfg.seed);
  const FlipStatMatrix M = build_matrix(std::span(&dec, 1), plan);
  REQUIRE(out.result.hypotheses() == 1);
  CHECK(out.result.raw_p[0] == perm_pvalue(M.stats.col(0)));
  CHECK(out.result.adj_p[0] == out.result.raw_p[0]);
}

TEST_CASE("fixture p-values agree with the dense oracle") {
  AnalysisConfig cfg = fixture_config();
  cfg.flips = 200;
  const AnalysisData data = load_inputs(cfg);
  const AnalysisOutcome out = analyze(data, cfg);
  const FlipPlan plan = make_plan(data.y.rows(), cfg.flips, cfg.seed);
  for (Eigen::Index l = 0; l < 3; ++l) {
    ModelSpec s;
    s.family = cfg.family;
    s.link = cfg.link;
    s.y = data.y.col(l);
    s.x = data.x;
    s.z = data.z;
    const oracle::Dense D = oracle::dense(s, fit_null(s));
    std::vector<double> col(static_cast<std::size_t>(plan.flips()));
    for (Eigen::Index j = 0; j < plan.flips(); ++j) {
      col[j] = std::abs(oracle::effective_stat(D, plan.row(j))) / std::sqrt(oracle::flip_variance(D, plan.row(j)));
    }
    CHECK(out.result.raw_p[l] == oracle::brute_pvalue(col));
  }
}

TEST_CASE("duplicated response columns give identical rows") {
  const AnalysisConfig cfg = fixture_config();
  AnalysisData data = load_inputs(cfg);
  data.y.col(7) = data.y.col(3);
  const AnalysisOutcome out = analyze(data, cfg);
  CHECK(out.result.raw_stat[7] == out.result.raw_stat[3]);
  CHECK(out.result.raw_p[7] == out.result.raw_p[3]);
  CHECK(out.result.adj_p[7] == out.result.adj_p[3]);
  CHECK(out.result.rejected[7] == out.result.rejected[3]);
}

TEST_CASE("report round trip at 12 significant digits") {
  for (const char* method : {"maxt", "maxt-sd", "global", "mahalanobis"}) {
    AnalysisConfig cfg = fixture_config();
    cfg.method = method;
    cfg.flips = 500;
    const AnalysisOutcome out = analyze(load_inputs(cfg), cfg);
    std::ostringstream text;
    write_report(text, cfg, out);
    std::istringstream in(text.str());
    const ParsedReport rep = read_report(in);
    CHECK(rep.ids == out.ids);
    CHECK(rep.header.at("seed") == "17");
    CHECK(rep.header.at("flips") == "500");
    CHECK(rep.header.at("method") == method);
    CHECK(rep.header.at("generator") == std::string(kFlipGenerator));
    for (Eigen::Index l = 0; l < out.result.hypotheses(); ++l) {
      char buf[64];
      for (auto [parsed, value] : {std::pair{rep.observed_stat[l], out.result.raw_stat[l]},
                                   std::pair{rep.raw_p[l], out.result.raw_p[l]},
                                   std::pair{rep.adj_p[l], out.result.adj_p[l]}}) {
        std::snprintf(buf, sizeof buf, "%.12g", value);
        CHECK(parsed == std::strtod(buf, nullptr));
        CHECK(std::abs(parsed - value) <= 5e-12 * std::abs(value));
      }
      CHECK(rep.rejected[l] == out.result.rejected[l]);
    }
    if (std::string(method) == "mahalanobis" || std::string(method) == "global") {
      CHECK(rep.header.at("global_p") != "NA");
    }
  }
}

TEST_CASE("golden report for the logistic fixture") {
  const AnalysisConfig cfg = fixture_config();
  const std::string first = report_text(cfg);
  CHECK(first == slurp(kFixtures + "/logistic_report.tsv"));
  set_thread_count(3);
  const std::string second = report_text(cfg);
  set_thread_count(0);
  CHECK(first == second);
}

TEST_CASE("fit failures name the hypothesis") {
  const AnalysisConfig cfg = fixture_config();
  AnalysisData data = load_inputs(cfg);
  data.y.col(5).setOnes();
  try {
    analyze(data, cfg);
    FAIL("expected a fit failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("gene06") != std::string::npos);
  }
}

#ifdef SIGNFLIP_CLI
TEST_CASE("command-line exit codes") {
  TempDir dir;
  const std::string cli = SIGNFLIP_CLI;
  const std::string fixture_args = " --y " + kFixtures + "/logistic_y.csv --x " + kFixtures + "/logistic_x.csv --z " +
                                   kFixtures + "/logistic_z.csv --family binomial";
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " >" + (dir.path / "stdout").string() + " 2>" +
                            (dir.path / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  const std::string out = (dir.path / "report.tsv").string();
  CHECK(run("analyze" + fixture_args + " --seed 17 --out " + out) == 0);
  CHECK(slurp(out) == slurp(kFixtures + "/logistic_report.tsv"));
  CHECK(run("validate" + fixture_args) == 0);
  CHECK(run("analyze --y /nonexistent.csv --x " + kFixtures + "/logistic_x.csv") == 2);
  CHECK(run("analyze" + fixture_args + " --method bogus") == 2);
  CHECK(run("analyze" + fixture_args + " --alpha 1.5") == 2);
  CHECK(run("frobnicate") == 2);

  const std::string bad_y = dir.file("bad.csv", "1,0\n2,1\n");
  const std::string two_x = dir.file("x.csv", "0.1\n0.2\n");
  CHECK(run("validate --family binomial --y " + bad_y + " --x " + two_x) == 3);
  CHECK(slurp((dir.path / "stdout").string()).find("support-violation") != std::string::npos);

  // 21 hypotheses exceed the closed-testing limit.
  std::string wide;
  for (int i = 0; i < 30; ++i) {
    for (int l = 0; l < 21; ++l) wide += std::to_string((i * 7 + l * 3) % 5 == 0 ? 1.5 * l : -0.5 * i) + (l < 20 ? "," : "\n");
  }
  std::string x;
  for (int i = 0; i < 30; ++i) x += std::to_string(0.1 * i - 1.0) + "\n";
  CHECK(run("analyze --method closed --flips 50 --y " + dir.file("wide.csv", wide) + " --x " + dir.file("x30.csv", x) +
            " --out -") == 1);
  CHECK(slurp((dir.path / "stderr").string()).find("closed testing") != std::string::npos);

  // A constant binomial column cannot be fitted with an intercept.
  std::string y = "a,b\n";
  std::string z = "one\n";
  for (int i = 0; i < 30; ++i) {
    y += std::string(i % 3 == 0 ? "1" : "0") + ",1\n";
    z += "1\n";
  }
  CHECK(run("analyze --family binomial --flips 50 --y " + dir.file("y1.csv", y) + " --x " + dir.file("x1.csv", x) +
            " --z " + dir.file("z1.csv", z) + " --out -") == 1);
  CHECK(slurp((dir.path / "stderr").string()).find("hypothesis b") != std::string::npos);

  const std::string config = dir.file("sim.cfg", "study = univariate\nn = 30\nw = 20\nn_sims = 20\nalpha_grid = 0.05\n");
  CHECK(run("simulate --config " + config + " --out " + (dir.path / "sim").string()) == 0);
  CHECK(slurp((dir.path / "sim" / "univariate.csv").string()).rfind("study,", 0) == 0);
}
#endif
