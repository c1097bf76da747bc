#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <string>

#include "signflip/signflip.hpp"

namespace {

// Exit codes: 0 success, 1 analysis failure (fit, variance, size limits),
// 2 unusable input or invalid options, 3 validation found problems.
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;
constexpr int kExitDiagnostics = 3;

char parse_delimiter(const std::string& s) {
  if (s.empty() || s == "auto") return 0;
  if (s == "tab" || s == "\\t") return '\t';
  if (s == "comma") return ',';
  if (s.size() == 1) return s[0];
  throw signflip::InvalidArgument("delimiter must be auto, tab, comma or a single character");
}

struct InputFlags {
  std::string y, x, z;
  std::string family = "gaussian";
  std::string link;
  std::string delimiter = "auto";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--y", y, "response matrix, n rows x m columns")->required();
    cmd->add_option("--x", x, "target covariate, n x 1")->required();
    cmd->add_option("--z", z, "nuisance design, n x (k-1); include an intercept column explicitly");
    cmd->add_option("--family", family, "gaussian | binomial | poisson")->capture_default_str();
    cmd->add_option("--link", link, "identity | logit | log (default: canonical)");
    cmd->add_option("--delimiter", delimiter, "auto | tab | comma | <char>")->capture_default_str();
  }

  void apply(signflip::AnalysisConfig& cfg) const {
    cfg.y_file = y;
    cfg.x_file = x;
    cfg.z_file = z;
    cfg.family = signflip::Family::from_name(family);
    cfg.link = link.empty() ? cfg.family.canonical_link() : signflip::Link::from_name(link);
    cfg.delimiter = parse_delimiter(delimiter);
  }
};

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const signflip::ParseError& e) {
    std::cerr << "signflip: parse error: " << e.what() << '\n';
    return kExitInput;
  } catch (const signflip::InvalidArgument& e) {
    std::cerr << "signflip: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "signflip: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sign-flip score tests for many GLMs with familywise error control"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all cores)");

  InputFlags analyze_in;
  signflip::AnalysisConfig cfg;
  std::string alternative = "two-sided";
  bool effective = false;
  auto* analyze = app.add_subcommand("analyze", "test every response column and write a TSV report");
  analyze_in.add_to(analyze);
  analyze->add_option("--method", cfg.method, "maxt | maxt-sd | closed | global | mahalanobis")->capture_default_str();
  analyze->add_option("--psi", cfg.psi, "maxabs | sumabs | sumsq, for closed and global")->capture_default_str();
  analyze->add_option("--alternative", alternative, "two-sided | greater | less")->capture_default_str();
  analyze->add_option("--alpha", cfg.alpha, "familywise level")->capture_default_str();
  analyze->add_option("--flips", cfg.flips, "number of flips w, identity included")->capture_default_str();
  analyze->add_option("--seed", cfg.seed, "flip plan seed")->capture_default_str();
  analyze->add_option("--beta0", cfg.beta0, "null value of beta")->capture_default_str();
  analyze->add_option("--out", cfg.out, "report path, '-' for stdout")->capture_default_str();
  analyze->add_flag("--effective", effective, "use unstandardized effective scores");
  analyze->add_flag("--allow-unconverged", cfg.allow_unconverged, "score responses whose null fit hit the iteration cap");

  InputFlags validate_in;
  auto* validate = app.add_subcommand("validate", "check inputs and print diagnostics");
  validate_in.add_to(validate);

  std::string config_path;
  std::string out_dir = ".";
  auto* simulate = app.add_subcommand("simulate", "run a size or FWER/power study and write CSV");
  simulate->add_option("--config", config_path, "scenario config file")->required();
  simulate->add_option("--out", out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }
  signflip::set_thread_count(static_cast<unsigned>(std::max(0, threads)));

  if (*analyze) {
    return run_guarded([&] {
      analyze_in.apply(cfg);
      cfg.alternative = signflip::alternative_from_name(alternative);
      cfg.standardized = !effective;
      const signflip::AnalysisOutcome outcome = signflip::run_analysis(cfg);
      if (cfg.out != "-" && !cfg.out.empty()) {
        std::cerr << outcome.result.rejections() << " of " << outcome.result.hypotheses()
                  << " hypotheses rejected; report written to " << cfg.out << '\n';
      }
      return 0;
    });
  }
  if (*validate) {
    return run_guarded([&] {
      signflip::AnalysisConfig vcfg;
      validate_in.apply(vcfg);
      const signflip::Diagnostics diag = signflip::validate_inputs(vcfg);
      if (diag.empty()) {
        std::cout << "ok\n";
        return 0;
      }
      std::cout << diag.summary();
      return kExitDiagnostics;
    });
  }
  return run_guarded([&] {
    const signflip::ScenarioConfig scenario = signflip::load_config(config_path);
    std::filesystem::create_directories(out_dir);
    const std::string path = (std::filesystem::path(out_dir) / (scenario.study + ".csv")).string();
    const signflip::StudyReport report = signflip::run_study(scenario);
    std::ofstream f(path);
    if (!f) throw signflip::Error("cannot write '" + path + "'");
    report.write_csv(f);
    std::cerr << report.rows.size() << " rows written to " << path << '\n';
    return 0;
  });
}
