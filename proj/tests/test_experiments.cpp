#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "qmix/experiments.hpp"

using namespace qmix;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("qmix_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

json preset(const std::string& name) { return scenario_info(name).preset; }

std::vector<double> values_of(const RunResult& r, const std::string& quantity) {
  std::vector<double> v;
  for (const auto& row : r.rows)
    if (row.quantity == quantity) v.push_back(row.value);
  return v;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QMIX_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("canned scenarios parse and round-trip") {
  const std::set<std::string> expected = {"free-qe",           "free-mixing",          "freeproduct-K3K3",
                                          "racg-superflex-check", "lift-qe",           "torus-mixing-failure",
                                          "butterfly-tensor",  "c4-box",               "glued-copies",
                                          "rate-scan"};
  std::set<std::string> names;
  for (const auto& s : scenarios()) {
    names.insert(s.name);
    CAPTURE(s.name);
    CHECK(!s.summary.empty());
    const auto c = parse_config(s.preset);
    CHECK(c.scenario == s.name);
    const auto again = parse_config(to_json(c));
    CHECK(to_json(again) == to_json(c));
    // shipped files match the presets
    const auto file = fs::path(QMIX_SOURCE_DIR) / "scenarios" / (s.name + ".json");
    REQUIRE(fs::exists(file));
    CHECK(to_json(load_config(file.string())) == to_json(c));
  }
  CHECK(names == expected);
  CHECK_THROWS_AS(scenario_info("nope"), SchemaError);
}

TEST_CASE("schema violations") {
  auto broken = [](auto edit) {
    json j = preset("c4-box");
    edit(j);
    return j;
  };
  const std::vector<json> bad = {
      json::array(),
      broken([](json& j) { j.erase("sizes"); }),
      broken([](json& j) { j["sizes"] = json::array(); }),
      broken([](json& j) { j["sizes"] = {10, -1}; }),
      broken([](json& j) { j["sizes"] = {2.5}; }),
      broken([](json& j) { j["seeds"] = {-3}; }),
      broken([](json& j) { j["eta_ladder"] = {0.1, 0.0}; }),
      broken([](json& j) { j["intervals"] = {{1.0, 0.0}}; }),
      broken([](json& j) { j["observable"] = "whatever"; }),
      broken([](json& j) { j["output_dir"] = ""; }),
      broken([](json& j) { j["threads"] = 0; }),
      broken([](json& j) { j["budget_seconds"] = -1; }),
      broken([](json& j) { j["params"] = 3; }),
      broken([](json& j) { j["extra"] = 1; }),
      broken([](json& j) { j["scenario"] = "unknown"; }),
  };
  for (std::size_t i = 0; i < bad.size(); ++i) {
    CAPTURE(i);
    CHECK_THROWS_AS(parse_config(bad[i]), SchemaError);
  }
  json k = preset("freeproduct-K3K3");
  k["sizes"] = {100};
  CHECK_THROWS_AS(parse_config(k), SchemaError);
  json r = preset("racg-superflex-check");
  r["sizes"] = {50};
  CHECK_THROWS_AS(parse_config(r), SchemaError);
  json t = preset("torus-mixing-failure");
  t["params"]["dims"] = {{{"d", 7}}};
  CHECK_THROWS_AS(parse_config(t), SchemaError);

  const auto dir = scratch("schema");
  fs::create_directories(dir);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_config((dir / "broken.json").string()), SchemaError);
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), SchemaError);
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(exit_code(SchemaError("x")) == 2);
  CHECK(exit_code(SolverError("x")) == 3);
  CHECK(exit_code(BracketViolation("x")) == 3);
  CHECK(exit_code(BudgetError("x")) == 4);
  CHECK(exit_code(std::runtime_error("x")) == 1);

  auto c = parse_config(preset("c4-box"));
  c.params["max_dim"] = 10;
  CHECK_THROWS_AS(run_scenario(c), BudgetError);
}

TEST_CASE("command-line tool") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const auto scen = fs::path(QMIX_SOURCE_DIR) / "scenarios";
  CHECK(run_cli("validate " + (scen / "c4-box.json").string()) == 0);
  CHECK(run_cli("list-scenarios") == 0);
  CHECK(run_cli("preset c4-box") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  std::ofstream(dir / "bad.json") << R"({"scenario": "c4-box"})";
  CHECK(run_cli("validate " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("run " + (dir / "bad.json").string()) == 2);

  json small = preset("c4-box");
  small["sizes"] = {24};
  small["params"]["max_dim"] = 10;
  std::ofstream(dir / "tiny.json") << small.dump();
  CHECK(run_cli("run " + (dir / "tiny.json").string() + " --out " + (dir / "o1").string()) == 4);

  small["params"].erase("max_dim");
  std::ofstream(dir / "ok.json") << small.dump();
  CHECK(run_cli("run " + (dir / "ok.json").string() + " --seed 3 --threads 2 --out " + (dir / "o2").string()) == 0);
  CHECK(fs::exists(dir / "o2" / "results.csv"));
  const auto meta = json::parse(slurp(dir / "o2" / "meta.json"));
  CHECK(meta["seeds"] == json::array({3}));
  CHECK(meta["config"]["threads"] == 2);
  fs::remove_all(dir);
}

TEST_CASE("c4-box: the separated-variables basis gives one half, reproducibly") {
  json j = preset("c4-box");
  j["sizes"] = {40, 64};
  const auto d1 = scratch("c4a"), d2 = scratch("c4b");
  j["output_dir"] = d1.string();
  const auto c1 = parse_config(j);
  const auto r1 = run_experiment(c1);
  for (double v : values_of(r1, "c4_statistic")) CHECK(v == doctest::Approx(0.5).epsilon(1e-10));
  for (double v : values_of(r1, "basis_residual")) CHECK(v < 1e-10);
  CHECK(values_of(r1, "c4_statistic").size() == 2);

  j["output_dir"] = d2.string();
  run_experiment(parse_config(j));
  for (const char* f : {"results.csv", "cms.csv", "audit.jsonl"}) {
    CAPTURE(f);
    CHECK(fs::exists(d1 / f));
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  const auto meta = json::parse(slurp(d1 / "meta.json"));
  CHECK(meta.contains("timestamp"));
  CHECK(meta["config"]["scenario"] == "c4-box");
  CHECK(meta["versions"].contains("eigen"));
  const std::string header = slurp(d1 / "results.csv").substr(0, slurp(d1 / "results.csv").find('\n'));
  CHECK(header == "N,eta,E1,E2,quantity,value,observable,seed");
  bool any_svg = false;
  for (const auto& e : fs::directory_iterator(d1 / "plots")) any_svg = any_svg || e.path().extension() == ".svg";
  CHECK(any_svg);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("butterfly and glued counterexamples in small sizes") {
  json b = preset("butterfly-tensor");
  b["sizes"] = {8, 12};
  b["output_dir"] = scratch("bf").string();
  const auto rb = run_scenario(parse_config(b));
  for (double v : values_of(rb, "qe_constructed")) CHECK(v == doctest::Approx(0.2).epsilon(1e-10));
  CHECK(!values_of(rb, "qe_constructed").empty());

  json g = preset("glued-copies");
  g["sizes"] = {20, 40};
  g["seeds"] = {1};
  g["output_dir"] = scratch("gl").string();
  const auto rg = run_scenario(parse_config(g));
  std::vector<double> expect;
  for (const auto& row : rg.rows)
    if (row.quantity == "qe_constructed") {
      const double Nb = (row.N - 1) / 4.0;
      CHECK(row.value == doctest::Approx(2 * Nb / (4 * Nb + 1)).epsilon(1e-10));
    }
  for (double v : values_of(rg, "basis_residual")) CHECK(v < 1e-9);
}

TEST_CASE("a small free-qe run keeps every CMS bracket") {
  json j = preset("free-qe");
  j["sizes"] = {200, 400};
  j["seeds"] = {1, 2};
  j["output_dir"] = scratch("fq").string();
  const auto r = run_scenario(parse_config(j));
  CHECK(!values_of(r, "qe").empty());
  for (double v : values_of(r, "qe")) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK(!r.cms.empty());
  for (const auto& c : r.cms) {
    CHECK(c.inside);
    CHECK(c.lower <= c.count);
    CHECK(c.count <= c.upper);
  }
  CHECK(r.summary["cms_all_inside"].get<bool>());
  // threads do not change results
  j["threads"] = 3;
  const auto r3 = run_scenario(parse_config(j));
  REQUIRE(r3.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) CHECK(r3.rows[i].value == r.rows[i].value);
}

TEST_CASE("csv writers and svg charts") {
  const auto dir = scratch("csv");
  fs::create_directories(dir);
  write_results_csv({{10, 7, 0.5, -1.0, 1.0, "qe", "iid", 0.125}}, (dir / "r.csv").string());
  CHECK(slurp(dir / "r.csv") == "N,eta,E1,E2,quantity,value,observable,seed\n10,0.5,-1,1,qe,0.125,iid,7\n");
  CmsRow c;
  c.N = 100;
  c.count = 12;
  c.lower = 3.5;
  c.upper = 20;
  write_cms_csv({c}, (dir / "c.csv").string());
  CHECK(slurp(dir / "c.csv").find("100,0,0,0,0,12,3.5,20,0,0,1,0,1") != std::string::npos);

  ChartOptions opt;
  opt.title = "a < b & c";
  opt.log_x = true;
  opt.log_y = true;
  const auto svg = line_chart_svg({{"s1", {100, 1000, 10000}, {1.0, 0.1, 0.01}}, {"s2", {100, 1000}, {0.5, 0.4}}}, opt);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find(">1000<") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
  const auto empty = line_chart_svg({}, ChartOptions{});
  CHECK(empty.find("</svg>") != std::string::npos);
  write_line_chart((dir / "x.svg").string(), {{"s", {0, 1}, {2, 3}}}, ChartOptions{});
  CHECK(fs::file_size(dir / "x.svg") > 100);
  fs::remove_all(dir);
}
