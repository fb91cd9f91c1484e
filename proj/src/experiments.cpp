#include "qmix/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/version.hpp>
#include <fftw3.h>

#include "qmix/approx.hpp"
#include "qmix/rng.hpp"

#ifndef QMIX_VERSION
#define QMIX_VERSION "0.0.0"
#endif

namespace qmix {

using json = nlohmann::json;

namespace {

constexpr double kHuge = 1e300;

// ---- presets ----

json preset(const std::string& scenario, std::vector<int> sizes, std::vector<int> seeds, std::vector<double> etas,
            std::vector<std::pair<double, double>> intervals, const std::string& observable, json params) {
  json iv = json::array();
  for (auto [a, b] : intervals) iv.push_back({a, b});
  return {{"scenario", scenario},
          {"sizes", sizes},
          {"seeds", seeds},
          {"eta_ladder", etas},
          {"intervals", iv},
          {"observable", observable},
          {"output_dir", "out/" + scenario},
          {"params", std::move(params)}};
}

std::vector<ScenarioInfo> build_scenarios() {
  std::vector<ScenarioInfo> s;
  s.push_back({"free-qe",
               "QE statistic of iid observables on random 2d-regular Schreier graphs of F_d",
               {"iid", "iid-disc"},
               preset("free-qe", {500, 1000, 2000, 4000}, {1, 2, 3, 4, 5}, {}, {{-1.0, 1.0}}, "iid",
                      {{"rank", 2}, {"window", {-1.5, 1.5}}})});
  s.push_back({"free-mixing",
               "QM statistic over an eta ladder plus main-bound audits on random Schreier graphs of F_d",
               {"iid", "iid-disc"},
               preset("free-mixing", {500, 1000, 2000}, {1, 2}, {0.4, 0.2, 0.1}, {{-1.0, 1.0}}, "iid",
                      {{"rank", 2},
                       {"window", {-2.0, 2.0}},
                       {"energies", {{0.0, 0.0}, {0.0, 0.5}}},
                       {"audit", true},
                       {"audit_max_N", 2000},
                       {"audit_energies", {{0.0, 0.0}}}})});
  s.push_back({"freeproduct-K3K3",
               "AC scan, fourth-moment ladder, zeta contraction and QE for K3*K3",
               {"iid", "iid-disc"},
               preset("freeproduct-K3K3", {600, 1200, 2400}, {1, 2}, {0.2, 0.1, 0.05, 0.025}, {{-1.0, 1.0}, {0.5, 2.5}},
                      "iid",
                      {{"factor_orders", {3, 3}},
                       {"window", {-1.5, 3.5}},
                       {"ac_grid", {-1.5, 3.5, 0.1}},
                       {"energies", {0.0, 1.0, 2.0}},
                       {"C1_prime", 3.0}})});
  s.push_back({"racg-superflex-check",
               "Superflexibility of defining diagrams and QE on Z2^*3 x Z2^*3 product actions",
               {"iid", "iid-disc"},
               preset("racg-superflex-check", {400, 1024, 2304}, {1, 2}, {}, {{-1.0, 1.0}, {1.0, 3.0}}, "iid",
                      {{"window", {-4.0, 4.0}}})});
  s.push_back({"lift-qe",
               "QE on random N-lifts of a fixed base graph",
               {"iid", "iid-disc"},
               preset("lift-qe", {200, 400, 800}, {1, 2}, {}, {{-1.0, 1.0}}, "iid",
                      {{"base", "0 1\n1 2\n2 0\n2 3\n3 0\n"}, {"window", {-1.5, 1.5}}})});
  s.push_back({"torus-mixing-failure",
               "Fourier modes on discrete tori: QM plateau versus QE of iid observables",
               {"fourier"},
               preset("torus-mixing-failure", {20, 40, 80}, {1, 2}, {1.0, 0.5}, {{-1.0, 1.0}}, "fourier",
                      {{"mode", 1},
                       {"fourth_ladder", {0.2, 0.1, 0.05, 0.025}},
                       {"dims",
                        {{{"d", 1}, {"E", 0.0}, {"window", {-1.8, 1.8}}, {"intervals", {{-1.0, 1.0}, {0.5, 1.5}}}},
                         {{"d", 2}, {"E", 1.0}, {"window", {0.3, 3.5}}, {"intervals", {{0.5, 1.5}, {1.5, 3.0}}}}}}})});
  s.push_back({"butterfly-tensor",
               "Tensor product of a cycle with the butterfly graph: QE failure in a constructed eigenbasis",
               {"twisted"},
               preset("butterfly-tensor", {20, 40, 80, 160}, {1}, {}, {{-1.0, 1.0}, {0.2, 1.2}}, "twisted",
                      {{"window", {-1.5, 1.5}}})});
  s.push_back({"c4-box",
               "Cartesian product C4 x G_n: separated-variables eigenbasis and the colour-sign observable",
               {"c4-sign"},
               preset("c4-box", {200}, {1}, {}, {{-1.0, 1.0}, {1.0, 2.5}}, "c4-sign",
                      {{"rank", 2}, {"window", {-3.0, 3.0}}})});
  s.push_back({"glued-copies",
               "Copies of a regular graph glued through a hub: QE failure for the block observable",
               {"block"},
               preset("glued-copies", {100, 200, 400}, {1, 2}, {}, {{-1.0, 1.0}}, "block",
                      {{"rank", 4}, {"window", {-4.0, 4.0}}})});
  s.push_back({"rate-scan",
               "QM and QE statistics along eta_N = C lnln N / ln N",
               {"iid", "iid-disc"},
               preset("rate-scan", {500, 1000, 2000, 4000}, {1}, {}, {{-1.0, 1.0}}, "iid",
                      {{"rank", 2}, {"C", 1.0}, {"energies", {0.0}}, {"window", {-1.5, 1.5}}})});
  return s;
}

// ---- schema helpers ----

[[noreturn]] void schema(const std::string& msg) { throw SchemaError("config: " + msg); }

const json& need(const json& j, const char* key) {
  if (!j.contains(key)) schema(std::string("missing key '") + key + "'");
  return j.at(key);
}

Interval parse_interval(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    schema(where + " must be a pair [lo, hi]");
  Interval I{v[0].get<double>(), v[1].get<double>()};
  if (!(I.lo < I.hi) || !std::isfinite(I.lo) || !std::isfinite(I.hi)) schema(where + " must satisfy lo < hi");
  return I;
}

std::vector<Interval> parse_intervals(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) schema(where + " must be a non-empty array of [lo, hi] pairs");
  std::vector<Interval> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(parse_interval(v[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

Interval param_interval(const json& params, const char* key, Interval def) {
  if (!params.contains(key)) return def;
  return parse_interval(params.at(key), std::string("params.") + key);
}

int param_int(const json& params, const char* key, int def) {
  if (!params.contains(key)) return def;
  const auto& v = params.at(key);
  if (!v.is_number_integer()) schema(std::string("params.") + key + " must be an integer");
  return v.get<int>();
}

double param_double(const json& params, const char* key, double def) {
  if (!params.contains(key)) return def;
  const auto& v = params.at(key);
  if (!v.is_number()) schema(std::string("params.") + key + " must be a number");
  return v.get<double>();
}

std::vector<double> param_doubles(const json& params, const char* key, std::vector<double> def) {
  if (!params.contains(key)) return def;
  const auto& v = params.at(key);
  if (!v.is_array()) schema(std::string("params.") + key + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) schema(std::string("params.") + key + " must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<std::pair<double, double>> param_pairs(const json& params, const char* key,
                                                   std::vector<std::pair<double, double>> def) {
  if (!params.contains(key)) return def;
  const auto& v = params.at(key);
  if (!v.is_array()) schema(std::string("params.") + key + " must be an array of pairs");
  std::vector<std::pair<double, double>> out;
  for (const auto& x : v) {
    if (!x.is_array() || x.size() != 2 || !x[0].is_number() || !x[1].is_number())
      schema(std::string("params.") + key + " must be an array of pairs");
    out.emplace_back(x[0].get<double>(), x[1].get<double>());
  }
  return out;
}

bool is_even_square(int N) {
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(N))));
  return n * n == N && n % 2 == 0;
}

void check_scenario_constraints(const ExperimentConfig& c) {
  const auto& p = c.params;
  auto sizes_must = [&](auto pred, const char* what) {
    for (int N : c.sizes)
      if (!pred(N)) schema(std::string("sizes: ") + what + " (got " + std::to_string(N) + ")");
  };
  if (c.scenario == "free-qe" || c.scenario == "free-mixing" || c.scenario == "rate-scan" || c.scenario == "c4-box") {
    if (param_int(p, "rank", 2) < 1) schema("params.rank must be ≥ 1");
  }
  if (c.scenario == "free-mixing" || c.scenario == "torus-mixing-failure") {
    if (c.eta_ladder.empty()) schema("eta_ladder must not be empty for " + c.scenario);
  }
  if (c.scenario == "freeproduct-K3K3") {
    const auto orders = param_doubles(p, "factor_orders", {3, 3});
    if (orders.size() < 2) schema("params.factor_orders needs at least two factors");
    long lcm = 1;
    for (double o : orders) {
      if (o < 2 || o != std::floor(o)) schema("params.factor_orders must be integers ≥ 2");
      lcm = std::lcm(lcm, static_cast<long>(o));
    }
    sizes_must([&](int N) { return N % lcm == 0; }, "must be divisible by every factor order");
  }
  if (c.scenario == "racg-superflex-check") sizes_must(is_even_square, "must be squares of even integers");
  if (c.scenario == "butterfly-tensor") sizes_must([](int N) { return N % 2 == 0 && N >= 4; }, "must be even and ≥ 4");
  if (c.scenario == "torus-mixing-failure") {
    sizes_must([](int M) { return M >= 3; }, "torus side must be ≥ 3");
    if (p.contains("dims")) {
      const auto& dims = p.at("dims");
      if (!dims.is_array() || dims.empty()) schema("params.dims must be a non-empty array");
      for (const auto& d : dims) {
        if (!d.is_object() || !d.contains("d") || !d.at("d").is_number_integer() || d.at("d").get<int>() < 1 ||
            d.at("d").get<int>() > 3)
          schema("params.dims entries need an integer d in 1..3");
        if (d.contains("window")) parse_interval(d.at("window"), "params.dims.window");
        if (d.contains("intervals")) parse_intervals(d.at("intervals"), "params.dims.intervals");
      }
    }
  }
  if (c.scenario == "glued-copies") {
    if (param_int(p, "rank", 4) != 4) schema("params.rank must be 4 (degree 8, four copies)");
    sizes_must([](int N) { return N >= 4; }, "base graphs need at least 4 vertices");
  }
  if (c.scenario == "lift-qe" && p.contains("base") && !p.at("base").is_string())
    schema("params.base must be an edge-list string");
}

// ---- numerics helpers ----

std::uint64_t observable_seed(std::uint64_t seed) { return mix64(seed ^ 0x6f62736572766531ULL); }

IidLaw law_of(const std::string& name) { return name == "iid-disc" ? IidLaw::Disc : IidLaw::Sign; }

Interval hull(Interval a, const std::vector<Interval>& bs) {
  for (const auto& b : bs) {
    a.lo = std::min(a.lo, b.lo);
    a.hi = std::max(a.hi, b.hi);
  }
  return a;
}

EigenSystem eig_range(const SchreierOperator& op, Interval range) {
  EigenOptions o;
  o.range = std::make_pair(range.lo, range.hi);
  return eigendecompose(op, o);
}

/// (1/m) Σ_k |⟨v_k, diag(a) v_k⟩ − c|² over the columns of V.
double basis_statistic(const Eigen::MatrixXcd& V, const Eigen::VectorXcd& a, cplx c) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    cplx v = 0.0;
    for (Eigen::Index x = 0; x < V.rows(); ++x) v += std::norm(V(x, k)) * a[x];
    s += std::norm(v - c);
  }
  return V.cols() ? s / V.cols() : 0.0;
}

/// max_k ‖P v_k − λ_k v_k‖ and max |V*V − I|.
std::pair<double, double> basis_quality(const SparseMatrix& P, const Eigen::MatrixXcd& V, const Eigen::VectorXd& lam) {
  double res = 0.0;
  const Eigen::MatrixXcd PV = P * V;
  for (Eigen::Index k = 0; k < V.cols(); ++k) res = std::max(res, (PV.col(k) - lam[k] * V.col(k)).norm());
  const Eigen::MatrixXcd G = V.adjoint() * V - Eigen::MatrixXcd::Identity(V.cols(), V.cols());
  return {res, G.cwiseAbs().maxCoeff()};
}

// ---- CMS bracket ----

struct CmsModel {
  std::vector<Interval> Js;
  std::vector<double> mu;  // μ_p(J) per J
  Interval window;
  double density_bound = 0.0;
  double l1 = 0.0;
  int r = 1;
  std::vector<int> degrees;
};

std::vector<int> cms_degrees(const json& params) {
  std::vector<int> out;
  for (double d : param_doubles(params, "cms_degrees", {1, 2, 4, 8, 16, 32, 64})) {
    if (d < 1 || d != std::floor(d)) schema("params.cms_degrees must be positive integers");
    out.push_back(static_cast<int>(d));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_cms_geometry(const std::vector<Interval>& Js, Interval I) {
  for (const auto& J : Js)
    if (!(J.lo > I.lo && J.hi < I.hi))
      schema("every interval must lie strictly inside the window [" + std::to_string(I.lo) + ", " +
             std::to_string(I.hi) + "]");
}

CmsModel cms_from_model(const ResolventModel& m, const std::vector<Interval>& Js, Interval I, double l1,
                        const json& params) {
  check_cms_geometry(Js, I);
  CmsModel c;
  c.Js = Js;
  c.window = I;
  c.l1 = l1;
  c.r = m.block_size();
  c.degrees = cms_degrees(params);
  for (const auto& J : Js) c.mu.push_back(spectral_mass(m, J.lo, J.hi));
  double b = 0.0;
  constexpr int samples = 64;
  for (int k = 0; k <= samples; ++k) {
    const auto d = spectral_density(m, I.lo + (I.hi - I.lo) * k / samples);
    b = std::max(b, d.value + d.error);
  }
  c.density_bound = 1.02 * b;
  return c;
}

void cms_scan(RunResult& out, const CmsModel& cm, const PermutationAction& action, const GeneratingSet& S,
              const EigenSystem& sys, std::uint64_t seed) {
  const int dim = action.N() * cm.r;
  BadCount last{};
  bool saturated = false;
  for (int n : cm.degrees) {
    if (!saturated) {
      last = bad_count(action, S, n);
      saturated = last.count == action.N();
    }
    for (std::size_t j = 0; j < cm.Js.size(); ++j) {
      const auto& J = cm.Js[j];
      CmsInput in;
      in.J_lo = J.lo;
      in.J_hi = J.hi;
      in.I_lo = cm.window.lo;
      in.I_hi = cm.window.hi;
      in.mu_J = cm.mu[j];
      in.density_bound = cm.density_bound;
      in.l1 = cm.l1;
      in.n = n;
      in.N = dim;
      in.bad = last.count * cm.r;
      in.bad_certified = last.certified;
      const auto b = cms_count_bounds(in);
      CmsRow row;
      row.N = dim;
      row.seed = seed;
      row.J_lo = J.lo;
      row.J_hi = J.hi;
      row.n = n;
      row.count = count(sys, J.lo, J.hi);
      row.lower = b.lower;
      row.upper = b.upper;
      row.mu_J = b.mu_J;
      row.bad = b.bad;
      row.bad_certified = b.bad_certified;
      row.vacuous = b.vacuous;
      row.inside = b.contains(row.count);
      out.cms.push_back(row);
      if (!row.inside) {
        std::ostringstream msg;
        msg << "CMS bracket violated: N=" << dim << " seed=" << seed << " J=[" << J.lo << "," << J.hi << "] n=" << n
            << " count=" << row.count << " bounds=[" << row.lower << "," << row.upper << "]";
        throw BracketViolation(msg.str());
      }
    }
  }
}

// ---- runner ----

class Runner {
 public:
  explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg), start_(std::chrono::steady_clock::now()) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  RunResult& result() { return res_; }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void check_budget() const {
    if (elapsed() > cfg_.budget_seconds)
      throw BudgetError("wall-clock budget of " + std::to_string(cfg_.budget_seconds) + " s exceeded");
  }
  void check_dim(long dim) const {
    const long cap = param_int(cfg_.params, "max_dim", 12000);
    if (dim > cap)
      throw BudgetError("operator dimension " + std::to_string(dim) + " exceeds max_dim " + std::to_string(cap));
  }

  void row(RunResult& r, int N, std::uint64_t seed, double eta, double E1, double E2, const std::string& q,
           const std::string& obs, double v) const {
    r.rows.push_back({N, seed, eta, E1, E2, q, obs, v});
  }

  /// Runs one task per (size, seed) pair; results merge in task order.
  void per_instance(const std::function<void(RunResult&, int N, std::uint64_t seed)>& body) {
    std::vector<std::pair<int, std::uint64_t>> tasks;
    for (int N : cfg_.sizes)
      for (auto s : cfg_.seeds) tasks.emplace_back(N, s);
    std::vector<RunResult> parts(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      while (true) {
        const std::size_t k = next++;
        if (k >= tasks.size()) return;
        try {
          check_budget();
          body(parts[k], tasks[k].first, tasks[k].second);
        } catch (...) {
          errors[k] = std::current_exception();
          next = tasks.size();
        }
      }
    };
    const int nt = std::max(1, std::min<int>(cfg_.threads, static_cast<int>(tasks.size())));
    if (nt == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (auto& p : parts) {
      res_.rows.insert(res_.rows.end(), p.rows.begin(), p.rows.end());
      res_.cms.insert(res_.cms.end(), p.cms.begin(), p.cms.end());
      res_.audits.insert(res_.audits.end(), p.audits.begin(), p.audits.end());
    }
  }

 private:
  const ExperimentConfig& cfg_;
  std::chrono::steady_clock::time_point start_;
  RunResult res_;
};

// ---- scenarios ----

void run_free_qe(Runner& R) {
  const auto& c = R.cfg();
  const int d = param_int(c.params, "rank", 2);
  const Interval W = param_interval(c.params, "window", {-1.5, 1.5});
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(d));
  const RegularTreeModel model(2 * d, 1.0, spec);
  const auto cm = cms_from_model(model, c.intervals, W, 2.0 * d, c.params);
  const Interval range = hull(W, c.intervals);
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(N);
    auto action = random_free_action(N, d, seed);
    const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
    const auto op = representation_matrix(action, p);
    const auto sys = eig_range(op, range);
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable));
    for (const auto& J : c.intervals)
      R.row(out, N, seed, 0.0, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_free_mixing(Runner& R) {
  const auto& c = R.cfg();
  const int d = param_int(c.params, "rank", 2);
  const Interval W = param_interval(c.params, "window", {-2.0, 2.0});
  const auto energies = param_pairs(c.params, "energies", {{0.0, 0.0}});
  const bool audit = c.params.value("audit", true);
  const int audit_max = param_int(c.params, "audit_max_N", 2000);
  const auto audit_energies = param_pairs(c.params, "audit_energies", {{0.0, 0.0}});
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(d));
  const RegularTreeModel model(2 * d, 1.0, spec);
  const auto cm = cms_from_model(model, c.intervals, W, 2.0 * d, c.params);
  const auto first_seed = c.seeds.front();
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(N);
    auto action = random_free_action(N, d, seed);
    const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
    const auto op = representation_matrix(action, p);
    const auto sys = eigendecompose(op);
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable));
    for (double eta : c.eta_ladder)
      for (auto [E1, E2] : energies)
        R.row(out, N, seed, eta, E1, E2, "qm", obs.id, qm_statistic(sys, obs, *action, E1, E2, eta));
    for (const auto& J : c.intervals)
      R.row(out, N, seed, 0.0, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    if (audit && N <= audit_max && seed == first_seed) {
      for (double eta : c.eta_ladder)
        for (auto [E1, E2] : audit_energies) {
          R.check_budget();
          const auto rec = main_bound_audit(action, p, sys, obs, E1, E2, eta);
          auto j = to_json(rec);
          j["seed"] = seed;
          j["observable"] = obs.id;
          out.audits.push_back(j);
          R.row(out, N, seed, eta, E1, E2, "audit_lhs", obs.id, rec.lhs);
          R.row(out, N, seed, eta, E1, E2, "audit_q_term", obs.id, rec.q_term);
        }
    }
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_freeproduct(Runner& R) {
  const auto& c = R.cfg();
  const Interval W = param_interval(c.params, "window", {-1.5, 3.5});
  std::vector<FiniteGroup> factors;
  for (double o : param_doubles(c.params, "factor_orders", {3, 3}))
    factors.push_back(FiniteGroup::cyclic(static_cast<int>(o)));
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_product(factors));
  const auto model = FreeProductModel::standard(spec);
  const auto grid = param_doubles(c.params, "ac_grid", {-1.5, 3.5, 0.1});
  if (grid.size() != 3 || !(grid[2] > 0) || !(grid[0] < grid[1])) schema("params.ac_grid must be [lo, hi, step]");
  std::vector<double> Es;
  for (int k = 0; grid[0] + k * grid[2] <= grid[1] + 1e-12; ++k) Es.push_back(grid[0] + k * grid[2]);
  const auto energies = param_doubles(c.params, "energies", {0.0, 1.0, 2.0});
  const double C1p = param_double(c.params, "C1_prime", 3.0);
  auto& res = R.result();
  const std::string label = spec->describe();

  for (double eta : c.eta_ladder) {
    R.check_budget();
    const auto ac = check_ac(*model, Es, {eta});
    R.row(res, 0, 0, eta, grid[0], grid[1], "ac_min", label, ac.min);
    R.row(res, 0, 0, eta, grid[0], grid[1], "ac_max", label, ac.max);
    R.row(res, 0, 0, eta, grid[0], grid[1], "ac_violations", label, static_cast<double>(ac.violations.size()));
    double zmax = 0.0;
    if (factors.size() == 2)
      for (double E : Es) {
        const auto sol = model->solve_zeta_system(cplx(E, eta));
        zmax = std::max(zmax, std::norm(sol.zeta[0][1] * sol.zeta[1][1]));
      }
    if (factors.size() == 2) R.row(res, 0, 0, eta, grid[0], grid[1], "zeta_product_max", label, zmax);
    for (double E : energies)
      R.row(res, 0, 0, eta, E, E, "fourth_moment", label, fourth_moment(*model, cplx(E, eta), C1p).total());
  }

  const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  const auto cm = cms_from_model(*model, c.intervals, W, norms(p).l1, c.params);
  const Interval range = hull(W, c.intervals);
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(N);
    auto action = finite_factor_random_action(spec, N, seed);
    const auto op = representation_matrix(action, p);
    const auto sys = eig_range(op, range);
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable));
    for (const auto& J : c.intervals)
      R.row(out, N, seed, 0.0, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

// Kesten–McKay law of the (d)-regular tree, used for Cartesian products of trees.
struct KestenMcKay {
  int d;
  double edge() const { return 2.0 * std::sqrt(d - 1.0); }
  double density(double x) const {
    const double e = edge();
    if (std::abs(x) >= e) return 0.0;
    return d * std::sqrt(e * e - x * x) / (2.0 * std::numbers::pi * (d * d - x * x));
  }
  double cdf(double t) const {
    const double e = edge();
    if (t <= -e) return 0.0;
    if (t >= e) return 1.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate([&](double x) { return density(x); }, -e, t,
                                                                        8, 1e-12);
  }
};

void run_racg(Runner& R) {
  const auto& c = R.cfg();
  auto& res = R.result();
  struct Diagram {
    std::string name;
    int n;
    std::vector<std::pair<int, int>> edges;
  };
  std::vector<Diagram> diagrams{
      {"Z2^*3", 3, {}},
      {"Z2xZ2^*3", 4, {{0, 1}, {0, 2}, {0, 3}}},
      {"Z2^*3xZ2^*3", 6, {{0, 3}, {0, 4}, {0, 5}, {1, 3}, {1, 4}, {1, 5}, {2, 3}, {2, 4}, {2, 5}}},
      {"pentagon", 5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}}},
      {"path4", 4, {{0, 1}, {1, 2}, {2, 3}}},
  };
  for (const auto& dg : diagrams) {
    const auto spec = GroupSpec::racg(dg.n, dg.edges);
    const auto sf = is_superflexible(spec);
    R.row(res, 0, 0, 0.0, 0.0, 0.0, "superflexible", dg.name, sf.superflexible ? 1.0 : 0.0);
    R.row(res, 0, 0, 0.0, 0.0, 0.0, "superflex_witnesses", dg.name, static_cast<double>(sf.witnesses.size()));
  }

  auto spec = std::make_shared<GroupSpec>(GroupSpec::racg(6, diagrams[2].edges));
  const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  const Interval W = param_interval(c.params, "window", {-4.0, 4.0});
  check_cms_geometry(c.intervals, W);

  // λ(1_S) = A ⊗ 1 + 1 ⊗ A on two 3-regular trees: the law is KM(3) * KM(3).
  const KestenMcKay km{3};
  const double e = km.edge();
  CmsModel cm;
  cm.Js = c.intervals;
  cm.window = W;
  cm.l1 = norms(p).l1;
  cm.degrees = cms_degrees(c.params);
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  for (const auto& J : c.intervals) {
    cm.mu.push_back(GK::integrate([&](double x) { return km.density(x) * (km.cdf(J.hi - x) - km.cdf(J.lo - x)); }, -e,
                                  e, 6, 1e-10));
  }
  double b = 0.0;
  for (int k = 0; k <= 64; ++k) {
    const double y = W.lo + (W.hi - W.lo) * k / 64;
    b = std::max(b, GK::integrate([&](double x) { return km.density(x) * km.density(y - x); }, -e, e, 8, 1e-10));
  }
  cm.density_bound = 1.05 * b;
  R.row(res, 0, 0, 0.0, W.lo, W.hi, "density_bound", "KM3*KM3", cm.density_bound);

  const Interval range = hull(W, c.intervals);
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(N);
    const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(N))));
    const auto left = random_matching_action(n, 3, seed);
    const auto right = random_matching_action(n, 3, mix64(seed + 0x5249474854ULL));
    std::vector<std::vector<int>> perms(6, std::vector<int>(N));
    for (int s = 0; s < 3; ++s) {
      const auto& ml = left->perms()[2 * s + 1];
      const auto& mr = right->perms()[2 * s + 1];
      for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) {
          perms[s][x * n + y] = ml[x] * n + y;
          perms[3 + s][x * n + y] = x * n + mr[y];
        }
    }
    auto action = std::make_shared<PermutationAction>(spec, N, std::move(perms),
                                                      json{{"construction", "product_matching"}, {"seed", seed}});
    const auto op = representation_matrix(action, p);
    const auto sys = eig_range(op, range);
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable));
    for (const auto& J : c.intervals)
      R.row(out, N, seed, 0.0, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_lift(Runner& R) {
  const auto& c = R.cfg();
  const auto H = parse_base_graph(c.params.value("base", std::string("0 1\n1 2\n2 0\n2 3\n3 0\n")));
  std::vector<double> w = param_doubles(c.params, "weights", {});
  if (w.empty()) w.assign(H.edges.size(), 1.0);
  if (w.size() != H.edges.size()) schema("params.weights needs one weight per base edge");
  const Interval W = param_interval(c.params, "window", {-1.5, 1.5});
  const TreeLiftModel model(H, w);
  const auto p = lift_symbol(H, w);
  const auto cm = cms_from_model(model, c.intervals, W, norms(p).l1, c.params);
  const Interval range = hull(W, c.intervals);
  const int r = H.vertices;
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(static_cast<long>(N) * r);
    auto action = lift_action(H, N, seed);
    const auto op = representation_matrix(action, p);
    const auto sys = eig_range(op, range);
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable), r);
    for (const auto& J : c.intervals)
      R.row(out, N * r, seed, 0.0, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_torus(Runner& R) {
  const auto& c = R.cfg();
  auto& res = R.result();
  const int mode = param_int(c.params, "mode", 1);
  json dims = c.params.contains("dims")
                  ? c.params.at("dims")
                  : json::array({json{{"d", 1}, {"E", 0.0}, {"window", {-1.8, 1.8}}}});
  const auto fourth_ladder = param_doubles(c.params, "fourth_ladder", {});
  const LatticeModel line(1);
  for (double eta : fourth_ladder)
    R.row(res, 0, 0, eta, 0.0, 0.0, "fourth_moment", "Z", fourth_moment(line, cplx(0.0, eta), 3.0).total());

  for (const auto& dj : dims) {
    const int d = dj.at("d").get<int>();
    const double E = dj.value("E", 0.0);
    const Interval W = dj.contains("window") ? parse_interval(dj.at("window"), "window") : Interval{-1.8, 1.8};
    const auto Js = dj.contains("intervals") ? parse_intervals(dj.at("intervals"), "intervals") : c.intervals;
    const LatticeModel model(d);
    auto spec = std::make_shared<GroupSpec>(GroupSpec::lattice(d));
    const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
    const auto cm = cms_from_model(model, Js, W, 2.0 * d, c.params);
    std::vector<Interval> qm_windows;
    for (double eta : c.eta_ladder) qm_windows.push_back({E - eta, E + eta});
    const Interval range = hull(hull(W, Js), qm_windows);
    const std::string tag = "-d" + std::to_string(d);
    // The torus is deterministic: one eigensystem per M, shared by all seeds.
    std::mutex cache_mu;
    std::map<int, std::pair<ActionPtr, std::shared_ptr<const EigenSystem>>> cache;
    const auto first_seed = c.seeds.front();
    R.per_instance([&](RunResult& out, int M, std::uint64_t seed) {
      long N = 1;
      for (int i = 0; i < d; ++i) N *= M;
      R.check_dim(N);
      ActionPtr action;
      std::shared_ptr<const EigenSystem> sys_ptr;
      {
        std::lock_guard lock(cache_mu);
        auto& slot = cache[M];
        if (!slot.second) {
          auto a = torus_action(M, d);
          slot = {a, std::make_shared<const EigenSystem>(eig_range(representation_matrix(a, p), range))};
        }
        std::tie(action, sys_ptr) = slot;
      }
      const auto& sys = *sys_ptr;
      std::vector<int> u(d, 0);
      u[0] = mode;
      const auto four = fourier_observable(*action, u);
      const auto iid = iid_observable(static_cast<int>(N), observable_seed(seed), IidLaw::Sign);
      for (double eta : c.eta_ladder)
        R.row(out, static_cast<int>(N), seed, eta, E, E, "qm", "fourier" + tag,
              qm_statistic(sys, four, *action, E, E, eta));
      for (const auto& J : Js) {
        R.row(out, static_cast<int>(N), seed, 0.0, J.lo, J.hi, "qe", "fourier" + tag,
              qe_statistic(sys, four, *action, J.lo, J.hi));
        R.row(out, static_cast<int>(N), seed, 0.0, J.lo, J.hi, "qe", "iid" + tag,
              qe_statistic(sys, iid, *action, J.lo, J.hi));
      }
      if (seed == first_seed) cms_scan(out, cm, *action, support_set(p), sys, seed);
    });
  }
}

void run_butterfly(Runner& R) {
  const auto& c = R.cfg();
  const Interval W = param_interval(c.params, "window", {-1.5, 1.5});
  check_cms_geometry(c.intervals, W);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(5, 5);
  for (auto [u, v] : std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}, {4, 2}})
    A(u, v) = A(v, u) = 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const Eigen::VectorXd m = es.eigenvalues();
  const double mmin = m.cwiseAbs().minCoeff();
  if (!(std::max(std::abs(W.lo), std::abs(W.hi)) < 2.0 * mmin)) schema("params.window must stay inside (-2, 2)");

  // λ(p) = A ⊗ (S + S⁻¹): the law is the average over eigenvalues m_k of A of m_k · arcsine[−2, 2].
  auto arcsine_cdf = [](double t) { return 0.5 + std::asin(std::clamp(t / 2.0, -1.0, 1.0)) / std::numbers::pi; };
  CmsModel cm;
  cm.Js = c.intervals;
  cm.window = W;
  cm.r = 5;
  cm.degrees = cms_degrees(c.params);
  cm.l1 = 2.0 * m.cwiseAbs().maxCoeff();
  for (const auto& J : c.intervals) {
    double mu = 0.0;
    for (int k = 0; k < 5; ++k) {
      double a = J.lo / m[k], b = J.hi / m[k];
      if (a > b) std::swap(a, b);
      mu += (arcsine_cdf(b) - arcsine_cdf(a)) / 5.0;
    }
    cm.mu.push_back(mu);
  }
  const double xm = std::max(std::abs(W.lo), std::abs(W.hi));
  double b = 0.0;
  for (int k = 0; k < 5; ++k) b += 1.0 / (5.0 * std::numbers::pi * std::sqrt(4.0 * m[k] * m[k] - xm * xm));
  cm.density_bound = b;

  const Eigen::VectorXd t = (Eigen::VectorXd(5) << 1, -1, 0, 1, -1).finished();
  Eigen::VectorXd u1 = Eigen::VectorXd::Zero(5), u2 = Eigen::VectorXd::Zero(5), w = Eigen::VectorXd::Zero(5);
  u1 << 1, -1, 0, 0, 0;
  u2 << 0, 0, 0, 1, -1;
  w << 1, 1, 0, -1, -1;
  u1 /= std::sqrt(2.0);
  u2 /= std::sqrt(2.0);
  w /= 2.0;
  std::vector<Eigen::VectorXd> sym;
  std::vector<double> sym_val;
  for (double sgn : {1.0, -1.0}) {
    const double lam = (1.0 + sgn * std::sqrt(17.0)) / 2.0;
    Eigen::VectorXd v(5);
    v << 1, 1, lam - 1.0, 1, 1;
    sym.push_back(v.normalized());
    sym_val.push_back(lam);
  }

  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(5L * N);
    auto action = torus_action(N, 1);
    const auto& spec = action->spec_ptr();
    AlgebraElement p(spec, 5);
    p.add(generator(*spec, 1), Block(A.cast<cplx>()));
    p.add(generator(*spec, -1), Block(A.cast<cplx>()));
    const auto op = representation_matrix(action, p);

    auto cyc = representation_matrix(action, AlgebraElement::indicator(spec, standard_generators(*spec)));
    const auto sysB = eigendecompose(cyc);
    const int dim = 5 * N;
    Eigen::MatrixXcd V(dim, dim);
    Eigen::VectorXd lam(dim);
    auto put = [&](int col, const Eigen::VectorXd& phi, const Eigen::VectorXd& a, double coef) {
      for (int x = 0; x < N; ++x)
        for (int i = 0; i < 5; ++i) V(x * 5 + i, col) += coef * phi[x] * a[i];
    };
    V.setZero();
    int col = 0;
    for (int k = 0; k < N; ++k) {
      const Eigen::VectorXd phi = sysB.real_vectors.col(k);
      Eigen::VectorXd chi = phi;
      for (int x = 0; x < N; ++x)
        if (x % 2) chi[x] = -chi[x];
      const double mu = sysB.values[k];
      const double h = 1.0 / std::sqrt(2.0);
      put(col, chi, u1, h);
      put(col, phi, w, h);
      lam[col++] = mu;
      put(col, chi, u1, h);
      put(col, phi, w, -h);
      lam[col++] = mu;
      put(col, phi, u2, 1.0);
      lam[col++] = -mu;
      for (int s = 0; s < 2; ++s) {
        put(col, phi, sym[s], 1.0);
        lam[col++] = sym_val[s] * mu;
      }
    }
    Eigen::VectorXcd a(dim);
    for (int x = 0; x < N; ++x)
      for (int i = 0; i < 5; ++i) a[x * 5 + i] = t[i] * (x % 2 ? -1.0 : 1.0);
    const auto obs = diagonal_observable(a, 5, "twisted");
    const auto [resid, orth] = basis_quality(op.matrix, V, lam);
    const cplx centre = average_symbol(obs, *action).coeff(identity(*spec))(0, 0);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "qe_constructed", obs.id, basis_statistic(V, a, centre));
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "basis_residual", obs.id, resid);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "basis_orthonormality", obs.id, orth);

    const auto sys = eigendecompose(op);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "qe_solver_basis", obs.id, qe_statistic(sys, obs, *action, -kHuge, kHuge));
    for (const auto& J : c.intervals)
      R.row(out, dim, seed, 0.0, J.lo, J.hi, "qe_solver_basis", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_c4_box(Runner& R) {
  const auto& c = R.cfg();
  const int d = param_int(c.params, "rank", 2);
  const Interval W = param_interval(c.params, "window", {-3.0, 3.0});
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(d));
  Eigen::MatrixXd A4 = Eigen::MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) A4(i, (i + 1) % 4) = A4((i + 1) % 4, i) = 1.0;
  AlgebraElement p(spec, 4);
  p.add(identity(*spec), Block(A4.cast<cplx>()));
  for (const auto& g : standard_generators(*spec).generators) p.add(g, Block(Block::Identity(4, 4)));
  const CartesianModel model(A4, std::make_shared<RegularTreeModel>(2 * d, 1.0, spec));
  const auto cm = cms_from_model(model, c.intervals, W, norms(p).l1, c.params);

  // separated-variables eigenvectors of C4: eigenvalues 2, 0, 0, −2
  Eigen::MatrixXd Phi1(4, 4);
  const double h = 0.5, q = 1.0 / std::sqrt(2.0);
  Phi1.col(0) << h, h, h, h;
  Phi1.col(1) << q, 0, -q, 0;
  Phi1.col(2) << 0, q, 0, -q;
  Phi1.col(3) << h, -h, h, -h;
  const double mu1[4] = {2.0, 0.0, 0.0, -2.0};
  Eigen::MatrixXcd Phi1F(4, 4);
  double muF[4];
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < 4; ++i) Phi1F(i, k) = 0.5 * std::polar(1.0, std::numbers::pi / 2.0 * k * i);
    muF[k] = 2.0 * std::cos(std::numbers::pi / 2.0 * k);
  }

  R.per_instance([&](RunResult& out, int n, std::uint64_t seed) {
    R.check_dim(4L * n);
    auto action = random_free_action(n, d, seed);
    const auto opG = representation_matrix(action, AlgebraElement::indicator(spec, standard_generators(*spec)));
    const auto sysG = eigendecompose(opG);
    const auto op = representation_matrix(action, p);
    const int dim = 4 * n;
    const auto obs = color_sign_observable(n, {1.0, -1.0, 1.0, -1.0});
    cplx mean = obs.values.mean();

    auto separated = [&](const Eigen::MatrixXcd& P1, const double* mu) {
      Eigen::MatrixXcd V(dim, dim);
      Eigen::VectorXd lam(dim);
      int col = 0;
      for (int j = 0; j < n; ++j) {
        const Eigen::VectorXcd phi2 = sysG.vector(j);
        for (int k = 0; k < 4; ++k, ++col) {
          for (int x = 0; x < n; ++x)
            for (int i = 0; i < 4; ++i) V(x * 4 + i, col) = phi2[x] * P1(i, k);
          lam[col] = sysG.values[j] + mu[k];
        }
      }
      return std::make_pair(V, lam);
    };
    const auto [V, lam] = separated(Phi1.cast<cplx>(), mu1);
    const auto [resid, orth] = basis_quality(op.matrix, V, lam);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "c4_statistic", obs.id, basis_statistic(V, obs.values, mean));
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "basis_residual", obs.id, resid);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "basis_orthonormality", obs.id, orth);
    const auto [VF, lamF] = separated(Phi1F, muF);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "c4_statistic_fourier", obs.id, basis_statistic(VF, obs.values, mean));

    const auto sys = eigendecompose(op);
    R.row(out, dim, seed, 0.0, 0.0, 0.0, "qe_solver_basis", obs.id,
          qe_statistic(sys, obs, *action, -kHuge, kHuge, Centering::Scalar));
    const auto iid = iid_observable(n, observable_seed(seed), IidLaw::Sign, 4);
    for (const auto& J : c.intervals)
      R.row(out, dim, seed, 0.0, J.lo, J.hi, "qe", iid.id, qe_statistic(sys, iid, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

void run_glued(Runner& R) {
  const auto& c = R.cfg();
  const int k = 4;
  const Interval W = param_interval(c.params, "window", {-4.0, 4.0});
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(k));
  const RegularTreeModel model(2 * k, 1.0, spec);
  const auto cm = cms_from_model(model, c.intervals, W, 2.0 * k, c.params);
  R.per_instance([&](RunResult& out, int Nb, std::uint64_t seed) {
    R.check_dim(static_cast<long>(k) * Nb + 1);
    const auto base = random_free_action(Nb, k, seed);
    const auto glued = glued_copies_action(*base, seed);
    const int V = glued->N();
    const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
    const auto op = representation_matrix(glued, p);
    const auto obs = block_indicator_observable(*glued);

    // F'_N: the base graph with the deleted edge removed
    const auto del = glued->metadata()["deleted_edge"];
    const int da = del[0], db = del[1];
    Eigen::MatrixXd F = representation_matrix(base, p).dense().real();
    F(da, db) -= 1.0;
    F(db, da) -= 1.0;
    const auto sysF = eigendecompose_dense(F);
    Eigen::MatrixXcd Vb = Eigen::MatrixXcd::Zero(V, V);
    Eigen::VectorXd lam(V);
    int col = 0;
    const double h = 1.0 / std::sqrt(2.0);
    for (int j = 0; j < Nb; ++j) {
      const Eigen::VectorXd f = sysF.real_vectors.col(j);
      const double coef[3][4] = {{h, -h, 0, 0}, {0, 0, h, -h}, {0.5, 0.5, -0.5, -0.5}};
      for (const auto& cf : coef) {
        for (int cpy = 0; cpy < k; ++cpy)
          for (int x = 0; x < Nb; ++x) Vb(cpy * Nb + x, col) = cf[cpy] * f[x];
        lam[col++] = sysF.values[j];
      }
    }
    // symmetric sector: (g, g, g, g)/2 plus the hub
    Eigen::MatrixXd Rm = Eigen::MatrixXd::Zero(Nb + 1, Nb + 1);
    Rm.topLeftCorner(Nb, Nb) = F;
    Rm(Nb, da) += 2.0;
    Rm(da, Nb) += 2.0;
    Rm(Nb, db) += 2.0;
    Rm(db, Nb) += 2.0;
    const auto sysS = eigendecompose_dense(Rm);
    for (int j = 0; j <= Nb; ++j, ++col) {
      const Eigen::VectorXd g = sysS.real_vectors.col(j);
      for (int cpy = 0; cpy < k; ++cpy)
        for (int x = 0; x < Nb; ++x) Vb(cpy * Nb + x, col) = 0.5 * g[x];
      Vb(V - 1, col) = g[Nb];
      lam[col] = sysS.values[j];
    }
    const auto [resid, orth] = basis_quality(op.matrix, Vb, lam);
    const cplx centre = average_symbol(obs, *glued).coeff(identity(*spec))(0, 0);
    R.row(out, V, seed, 0.0, 0.0, 0.0, "qe_constructed", obs.id, basis_statistic(Vb, obs.values, centre));
    R.row(out, V, seed, 0.0, 0.0, 0.0, "basis_residual", obs.id, resid);
    R.row(out, V, seed, 0.0, 0.0, 0.0, "basis_orthonormality", obs.id, orth);
    R.row(out, V, seed, 0.0, 0.0, 0.0, "covariance_g1", obs.id,
          std::abs(empirical_covariance(obs, *glued, generator(*spec, 1))));

    EigenOptions eo;
    eo.randomize_degenerate = true;
    eo.seed = seed;
    const auto sys = eigendecompose(op, eo);
    const auto iid = iid_observable(V, observable_seed(seed), IidLaw::Sign);
    R.row(out, V, seed, 0.0, 0.0, 0.0, "qe_solver_basis", obs.id, qe_statistic(sys, obs, *glued, -kHuge, kHuge));
    for (const auto& J : c.intervals) {
      R.row(out, V, seed, 0.0, J.lo, J.hi, "qe_solver_basis", obs.id, qe_statistic(sys, obs, *glued, J.lo, J.hi));
      R.row(out, V, seed, 0.0, J.lo, J.hi, "qe", iid.id, qe_statistic(sys, iid, *glued, J.lo, J.hi));
    }
    cms_scan(out, cm, *glued, support_set(p), sys, seed);
  });
}

void run_rate_scan(Runner& R) {
  const auto& c = R.cfg();
  const int d = param_int(c.params, "rank", 2);
  const double C = param_double(c.params, "C", 1.0);
  if (!(C > 0)) schema("params.C must be positive");
  const auto energies = param_doubles(c.params, "energies", {0.0});
  const Interval W = param_interval(c.params, "window", {-1.5, 1.5});
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(d));
  const RegularTreeModel model(2 * d, 1.0, spec);
  const auto cm = cms_from_model(model, c.intervals, W, 2.0 * d, c.params);
  R.per_instance([&](RunResult& out, int N, std::uint64_t seed) {
    R.check_dim(N);
    if (N < 16) schema("rate-scan sizes must be ≥ 16");
    const double eta = C * std::log(std::log(static_cast<double>(N))) / std::log(static_cast<double>(N));
    std::vector<Interval> wins;
    for (double E : energies) wins.push_back({E - eta, E + eta});
    auto action = random_free_action(N, d, seed);
    const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
    const auto op = representation_matrix(action, p);
    const auto sys = eig_range(op, hull(hull(W, c.intervals), wins));
    const auto obs = iid_observable(N, observable_seed(seed), law_of(c.observable));
    R.row(out, N, seed, eta, 0.0, 0.0, "eta_N", obs.id, eta);
    for (double E : energies) {
      R.row(out, N, seed, eta, E, E, "qm", obs.id, qm_statistic(sys, obs, *action, E, E, eta));
      R.row(out, N, seed, eta, E - eta, E + eta, "qe", obs.id, qe_statistic(sys, obs, *action, E - eta, E + eta));
    }
    for (const auto& J : c.intervals)
      R.row(out, N, seed, eta, J.lo, J.hi, "qe", obs.id, qe_statistic(sys, obs, *action, J.lo, J.hi));
    cms_scan(out, cm, *action, support_set(p), sys, seed);
  });
}

using ScenarioFn = void (*)(Runner&);
const std::map<std::string, ScenarioFn>& dispatch() {
  static const std::map<std::string, ScenarioFn> m{{"free-qe", run_free_qe},
                                                   {"free-mixing", run_free_mixing},
                                                   {"freeproduct-K3K3", run_freeproduct},
                                                   {"racg-superflex-check", run_racg},
                                                   {"lift-qe", run_lift},
                                                   {"torus-mixing-failure", run_torus},
                                                   {"butterfly-tensor", run_butterfly},
                                                   {"c4-box", run_c4_box},
                                                   {"glued-copies", run_glued},
                                                   {"rate-scan", run_rate_scan}};
  return m;
}

// ---- output ----

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out;
}

void write_plots(const std::string& dir, const RunResult& res, const std::string& scenario) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ResultRow*>> by_q;
  for (const auto& r : res.rows) {
    if (!by_q.count(r.quantity)) order.push_back(r.quantity);
    by_q[r.quantity].push_back(&r);
  }
  for (const auto& q : order) {
    const auto& rows = by_q[q];
    const bool model_level = std::all_of(rows.begin(), rows.end(), [](auto* r) { return r->N == 0; });
    // x: N for instance rows, η for model rows; one series per remaining key, averaged over seeds
    std::map<std::string, std::map<double, std::pair<double, int>>> acc;
    std::vector<std::string> keys;
    for (const auto* r : rows) {
      std::ostringstream key;
      key << r->observable;
      if (model_level) {
        if (r->E1 != 0.0 || r->E2 != 0.0) key << " E=" << fmt(r->E1);
      } else {
        if (r->eta != 0.0 && q != "eta_N" && q != "qe" && q != "qm") key << " eta=" << fmt(r->eta);
        if (q == "qm" || q.rfind("audit", 0) == 0) key << " E=(" << fmt(r->E1) << "," << fmt(r->E2) << ")";
        else if ((r->E1 != 0.0 || r->E2 != 0.0))
          key << " J=[" << fmt(r->E1) << "," << fmt(r->E2) << "]";
        if (q == "qm" && r->eta != 0.0 && scenario != "rate-scan") key << " eta=" << fmt(r->eta);
      }
      const double x = model_level ? r->eta : r->N;
      if (!acc.count(key.str())) keys.push_back(key.str());
      auto& cell = acc[key.str()][x];
      cell.first += r->value;
      cell.second += 1;
    }
    std::vector<Series> series;
    bool positive = true;
    double ymin = kHuge, ymax = 0.0;
    std::set<double> xs;
    for (const auto& k : keys) {
      Series s;
      s.name = k;
      for (const auto& [x, cell] : acc[k]) {
        s.x.push_back(x);
        s.y.push_back(cell.first / cell.second);
        xs.insert(x);
        positive = positive && s.y.back() > 0;
        ymin = std::min(ymin, std::abs(s.y.back()));
        ymax = std::max(ymax, std::abs(s.y.back()));
      }
      series.push_back(std::move(s));
    }
    if (xs.size() < 2 && series.size() < 2) continue;
    ChartOptions opt;
    opt.title = scenario + ": " + q;
    opt.xlabel = model_level ? "eta" : "N";
    opt.ylabel = q;
    opt.log_x = !model_level || *xs.begin() > 0;
    opt.log_y = positive && ymin > 0 && ymax / ymin > 20.0;
    write_line_chart(dir + "/" + slug(q) + ".svg", series, opt);
  }
}

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

// ---- public API ----

const std::vector<ScenarioInfo>& scenarios() {
  static const std::vector<ScenarioInfo> s = build_scenarios();
  return s;
}

const ScenarioInfo& scenario_info(const std::string& name) {
  for (const auto& s : scenarios())
    if (s.name == name) return s;
  throw SchemaError("unknown scenario '" + name + "'");
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) schema("top level must be an object");
  static const std::set<std::string> known{"scenario",   "sizes",      "seeds",  "eta_ladder",    "intervals",
                                           "observable", "output_dir", "params", "threads", "budget_seconds"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) schema("unknown key '" + k + "'");
  ExperimentConfig c;
  const auto& sc = need(j, "scenario");
  if (!sc.is_string()) schema("scenario must be a string");
  c.scenario = sc.get<std::string>();
  const auto& info = scenario_info(c.scenario);

  const auto& sizes = need(j, "sizes");
  if (!sizes.is_array() || sizes.empty()) schema("sizes must be a non-empty array of positive integers");
  for (const auto& v : sizes) {
    if (!v.is_number_integer() || v.get<long>() < 1 || v.get<long>() > 1000000)
      schema("sizes must be a non-empty array of positive integers");
    c.sizes.push_back(v.get<int>());
  }
  const auto& seeds = need(j, "seeds");
  if (!seeds.is_array() || seeds.empty()) schema("seeds must be a non-empty array of non-negative integers");
  for (const auto& v : seeds) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      schema("seeds must be a non-empty array of non-negative integers");
    c.seeds.push_back(v.get<std::uint64_t>());
  }
  const auto& etas = need(j, "eta_ladder");
  if (!etas.is_array()) schema("eta_ladder must be an array of positive numbers");
  for (const auto& v : etas) {
    if (!v.is_number() || !(v.get<double>() > 0.0)) schema("eta_ladder must be an array of positive numbers");
    c.eta_ladder.push_back(v.get<double>());
  }
  c.intervals = parse_intervals(need(j, "intervals"), "intervals");
  const auto& obs = need(j, "observable");
  if (!obs.is_string()) schema("observable must be a string");
  c.observable = obs.get<std::string>();
  if (std::find(info.observables.begin(), info.observables.end(), c.observable) == info.observables.end()) {
    std::string allowed;
    for (const auto& o : info.observables) allowed += (allowed.empty() ? "" : ", ") + o;
    schema("observable '" + c.observable + "' not supported by " + c.scenario + " (allowed: " + allowed + ")");
  }
  const auto& od = need(j, "output_dir");
  if (!od.is_string() || od.get<std::string>().empty()) schema("output_dir must be a non-empty string");
  c.output_dir = od.get<std::string>();
  if (j.contains("params")) {
    if (!j.at("params").is_object()) schema("params must be an object");
    c.params = j.at("params");
  }
  if (j.contains("threads")) {
    if (!j.at("threads").is_number_integer() || j.at("threads").get<int>() < 1) schema("threads must be ≥ 1");
    c.threads = j.at("threads").get<int>();
  }
  if (j.contains("budget_seconds")) {
    if (!j.at("budget_seconds").is_number() || !(j.at("budget_seconds").get<double>() > 0))
      schema("budget_seconds must be positive");
    c.budget_seconds = j.at("budget_seconds").get<double>();
  }
  check_scenario_constraints(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SchemaError("cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json iv = json::array();
  for (const auto& I : c.intervals) iv.push_back({I.lo, I.hi});
  return {{"scenario", c.scenario},       {"sizes", c.sizes},           {"seeds", c.seeds},
          {"eta_ladder", c.eta_ladder},   {"intervals", iv},            {"observable", c.observable},
          {"output_dir", c.output_dir},   {"params", c.params},         {"threads", c.threads},
          {"budget_seconds", c.budget_seconds}};
}

RunResult run_scenario(const ExperimentConfig& cfg) {
  Runner R(cfg);
  try {
    dispatch().at(cfg.scenario)(R);
  } catch (const PreconditionError& e) {
    throw SchemaError(std::string("precondition failed: ") + e.what());
  }
  auto res = std::move(R.result());
  res.seconds = R.elapsed();
  int vac = 0;
  for (const auto& r : res.cms) vac += r.vacuous;
  res.summary["rows"] = res.rows.size();
  res.summary["cms_checks"] = res.cms.size();
  res.summary["cms_vacuous"] = vac;
  res.summary["cms_all_inside"] = std::all_of(res.cms.begin(), res.cms.end(), [](const CmsRow& r) { return r.inside; });
  res.summary["audits"] = res.audits.size();
  return res;
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot write " + path);
  f << "N,eta,E1,E2,quantity,value,observable,seed\n";
  for (const auto& r : rows)
    f << r.N << ',' << fmt(r.eta) << ',' << fmt(r.E1) << ',' << fmt(r.E2) << ',' << r.quantity << ',' << fmt(r.value)
      << ',' << r.observable << ',' << r.seed << '\n';
}

void write_cms_csv(const std::vector<CmsRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot write " + path);
  f << "N,seed,J_lo,J_hi,n,count,lower,upper,mu_J,bad,bad_certified,vacuous,inside\n";
  for (const auto& r : rows)
    f << r.N << ',' << r.seed << ',' << fmt(r.J_lo) << ',' << fmt(r.J_hi) << ',' << r.n << ',' << r.count << ','
      << fmt(r.lower) << ',' << fmt(r.upper) << ',' << fmt(r.mu_J) << ',' << r.bad << ',' << r.bad_certified << ','
      << r.vacuous << ',' << r.inside << '\n';
}

void write_outputs(const ExperimentConfig& cfg, const RunResult& res) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir / "plots");
  write_results_csv(res.rows, (dir / "results.csv").string());
  write_cms_csv(res.cms, (dir / "cms.csv").string());
  {
    std::ofstream f(dir / "audit.jsonl", std::ios::binary);
    for (const auto& a : res.audits) f << a.dump() << '\n';
  }
  write_plots((dir / "plots").string(), res, cfg.scenario);
  json meta{{"qmix_version", QMIX_VERSION},
            {"config", to_json(cfg)},
            {"seeds", cfg.seeds},
            {"timing_seconds", res.seconds},
            {"timestamp", utc_timestamp()},
            {"summary", res.summary},
            {"versions",
             {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"boost", BOOST_LIB_VERSION},
              {"fftw", std::string(fftw_version)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}}}};
  std::ofstream f(dir / "meta.json", std::ios::binary);
  f << meta.dump(2) << '\n';
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  auto res = run_scenario(cfg);
  write_outputs(cfg, res);
  return res;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e)) return 2;
  if (dynamic_cast<const BudgetError*>(&e)) return 4;
  if (dynamic_cast<const SolverError*>(&e)) return 3;
  return 1;
}

}  // namespace qmix
