#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmix/common.hpp"

namespace qmix {

struct SchemaError : ArgumentError {
  using ArgumentError::ArgumentError;
};

/// Raised when an exact eigenvalue count escapes its CMS bracket.
struct BracketViolation : SolverError {
  using SolverError::SolverError;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct ExperimentConfig {
  std::string scenario;
  std::vector<int> sizes;
  std::vector<std::uint64_t> seeds;
  std::vector<double> eta_ladder;
  std::vector<Interval> intervals;
  std::string observable;
  std::string output_dir;
  nlohmann::json params = nlohmann::json::object();
  int threads = 1;
  double budget_seconds = 600.0;
};

struct ScenarioInfo {
  std::string name;
  std::string summary;
  std::vector<std::string> observables;  // accepted values of "observable"
  nlohmann::json preset;
};

const std::vector<ScenarioInfo>& scenarios();
const ScenarioInfo& scenario_info(const std::string& name);

/// Throws SchemaError with a path-like message on any violation.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

/// Long format: one value per row.
struct ResultRow {
  int N = 0;  // 0 for rows about the limiting model
  std::uint64_t seed = 0;
  double eta = 0.0, E1 = 0.0, E2 = 0.0;
  std::string quantity;
  std::string observable;
  double value = 0.0;
};

struct CmsRow {
  int N = 0;  // dimension N·r of the operator
  std::uint64_t seed = 0;
  double J_lo = 0.0, J_hi = 0.0;
  int n = 0;
  int count = 0;
  double lower = 0.0, upper = 0.0;
  double mu_J = 0.0;
  int bad = 0;
  bool bad_certified = true;
  bool vacuous = false;
  bool inside = true;
};

struct RunResult {
  std::vector<ResultRow> rows;
  std::vector<CmsRow> cms;
  std::vector<nlohmann::json> audits;
  nlohmann::json summary = nlohmann::json::object();
  double seconds = 0.0;
};

/// Runs the scenario in memory. Throws BracketViolation when a CMS bracket fails,
/// BudgetError when the wall-clock budget or a size guard is exceeded.
RunResult run_scenario(const ExperimentConfig& cfg);
/// Writes results.csv, cms.csv, audit.jsonl, meta.json and plots/*.svg into cfg.output_dir.
void write_outputs(const ExperimentConfig& cfg, const RunResult& res);
RunResult run_experiment(const ExperimentConfig& cfg);

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);
void write_cms_csv(const std::vector<CmsRow>& rows, const std::string& path);

/// 2 schema, 3 solver failure or bracket violation, 4 budget exceeded, 1 otherwise.
int exit_code(const std::exception& e);

// ---- svg ----

struct Series {
  std::string name;
  std::vector<double> x, y;
};
struct ChartOptions {
  std::string title, xlabel, ylabel;
  bool log_x = false;
  bool log_y = false;
  int width = 640, height = 400;
};
std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opt);
void write_line_chart(const std::string& path, const std::vector<Series>& series, const ChartOptions& opt);

}  // namespace qmix
