// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "qmix/approx.hpp"
#include "qmix/experiments.hpp"

using namespace qmix;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::vector<CmsRow> all_cms;
std::vector<std::string> cms_sources;

RunResult run_preset(const std::string& name, const std::function<void(json&)>& edit = {}) {
  json j = scenario_info(name).preset;
  j["output_dir"] = (std::filesystem::temp_directory_path() / ("qmix_acceptance_" + name)).string();
  j["threads"] = std::max(1u, std::thread::hardware_concurrency());
  j["budget_seconds"] = 1200.0;
  if (edit) edit(j);
  auto res = run_experiment(parse_config(j));
  all_cms.insert(all_cms.end(), res.cms.begin(), res.cms.end());
  cms_sources.push_back(name);
  return res;
}

// ---- 1 ----
double projector_trace(const Eigen::MatrixXcd& P, const SparseMatrix& K, double a, double b, double c, double d) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(P);
  const Eigen::Index n = P.rows();
  Eigen::MatrixXcd PI = Eigen::MatrixXcd::Zero(n, n), PJ = PI;
  int nI = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double l = es.eigenvalues()[k];
    const Eigen::VectorXcd v = es.eigenvectors().col(k);
    if (l >= a && l <= b) {
      PI.noalias() += v * v.adjoint();
      ++nI;
    }
    if (l >= c && l <= d) PJ.noalias() += v * v.adjoint();
  }
  if (nI == 0) return 0.0;
  const Eigen::MatrixXcd Kd(K);
  return (Kd * PI * Kd.adjoint() * PJ).trace().real() / nI;
}

Outcome trace_equality() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = rng();
    ActionPtr act;
    AlgebraElement p;
    switch (trial % 4) {
      case 0: act = random_matching_action(2 * (100 + static_cast<int>(U(rng) * 200)), 3, seed); break;
      case 1: act = random_free_action(100 + static_cast<int>(U(rng) * 400), 2, seed); break;
      case 2: act = torus_action(8 + static_cast<int>(U(rng) * 14), 2); break;
      default: act = lift_action(parse_base_graph("0 1\n1 2\n2 0\n2 3\n3 0\n"), 50 + static_cast<int>(U(rng) * 100), seed);
    }
    if (trial % 4 == 3) p = lift_symbol(parse_base_graph("0 1\n1 2\n2 0\n2 3\n3 0\n"), {});
    else p = AlgebraElement::indicator(act->spec_ptr(), standard_generators(act->spec()));
    const auto op = representation_matrix(act, p);
    const int n = op.dim();
    // random T-local matrix: diagonal plus one shifted diagonal
    std::normal_distribution<double> g;
    const auto perm = act->permutation_of(generator(act->spec(), 1));
    const int r = p.block_size();
    std::vector<Eigen::Triplet<cplx>> t;
    for (int x = 0; x < act->N(); ++x)
      for (int i = 0; i < r; ++i) {
        t.emplace_back(x * r + i, x * r + i, cplx(g(rng), g(rng)));
        if (trial % 2 == 0) t.emplace_back(perm[x] * r + i, x * r + i, cplx(g(rng), g(rng)));
      }
    SparseMatrix K(n, n);
    K.setFromTriplets(t.begin(), t.end());
    const double span = op.dense().cwiseAbs().rowwise().sum().maxCoeff();
    auto pick = [&] {
      double a = -span + 2 * span * U(rng), b = -span + 2 * span * U(rng);
      if (a > b) std::swap(a, b);
      return std::pair{a, b};
    };
    auto [a, b] = pick();
    auto [c, d] = pick();
    const auto sys = eigendecompose(op);
    const double lhs = moment_LIJ(sys, K, a, b, c, d);
    worst = std::max(worst, std::abs(lhs - projector_trace(op.dense(), K, a, b, c, d)));
  }
  return {worst <= 1e-10, "20 tuples, max |L_IJ - trace| = " + fmt(worst)};
}

// ---- 2 ----
Outcome ward() {
  auto k3 = std::make_shared<GroupSpec>(GroupSpec::free_product({FiniteGroup::cyclic(3), FiniteGroup::cyclic(3)}));
  const std::vector<std::pair<std::string, ModelPtr>> models = {
      {"RegularTree(3)", std::make_shared<RegularTreeModel>(3)},
      {"Lattice(1)", std::make_shared<LatticeModel>(1)},
      {"K3*K3", FreeProductModel::standard(k3)},
      {"TreeLift", std::make_shared<TreeLiftModel>(parse_base_graph("0 1\n1 2\n2 0\n2 3\n3 0\n"))}};
  double worst = 0.0;
  int checks = 0;
  for (const auto& [name, m] : models)
    for (double eta : {0.2, 0.35, 0.6, 1.0})
      for (double E = -3.0; E <= 4.0; E += 0.5) {
        worst = std::max(worst, ward_check(*m, cplx(E, eta)).residual);
        ++checks;
      }
  return {worst < 1e-6, std::to_string(checks) + " points on 4 models, max residual " + fmt(worst)};
}

// ---- 3 ----
Outcome kesten() {
  const double v = spectral_density(RegularTreeModel(3), 0.0).value;
  const double exact = std::sqrt(2.0) / (3.0 * std::numbers::pi);
  return {std::abs(v - exact) <= 1e-3, "density " + fmt(v, 7) + " vs " + fmt(exact, 7)};
}

// ---- 4 ----
Outcome contraction() {
  auto k3 = std::make_shared<GroupSpec>(GroupSpec::free_product({FiniteGroup::cyclic(3), FiniteGroup::cyclic(3)}));
  const auto F = FreeProductModel::standard(k3);
  double worst = 0.0, resid = 0.0;
  int pts = 0;
  for (double E = -3.0; E <= 5.0; E += 0.1)
    for (double eta : {1.0, 0.3, 0.1, 0.03, 0.01}) {
      const auto s = F->solve_zeta_system(cplx(E, eta));
      resid = std::max(resid, s.residual);
      for (int a = 1; a < 3; ++a)
        for (int b = 1; b < 3; ++b) worst = std::max(worst, std::norm(s.zeta[0][a] * s.zeta[1][b]));
      ++pts;
    }
  return {worst <= 0.25 + 1e-12 && resid < 1e-10,
          std::to_string(pts) + " (E,eta) points, max |z1 z2|^2 = " + fmt(worst) + ", max residual " + fmt(resid)};
}

// ---- 5 ----
Outcome fourth() {
  const RegularTreeModel T(3);
  const LatticeModel Z(1);
  std::vector<double> ft, fz;
  for (double eta : {0.2, 0.1, 0.05, 0.025}) {
    ft.push_back(fourth_moment(T, cplx(0.0, eta), 3.0).total());
    fz.push_back(fourth_moment(Z, cplx(0.0, eta), 3.0).total());
  }
  bool ok = true;
  for (std::size_t k = 1; k < ft.size(); ++k) ok = ok && ft[k] < ft[k - 1] && fz[k] >= fz[k - 1];
  return {ok, "tree " + fmt(ft.front()) + " -> " + fmt(ft.back()) + ", line " + fmt(fz.front()) + " -> " + fmt(fz.back())};
}

// ---- 6 ----
Outcome torus() {
  const auto res = run_preset("torus-mixing-failure");
  // qm[d][eta][M], averaged over seeds
  std::map<std::string, std::map<double, std::map<int, std::pair<double, int>>>> qm;
  std::map<std::string, std::map<int, std::pair<double, int>>> qe_iid;
  for (const auto& r : res.rows) {
    const std::string tag = r.observable.substr(r.observable.find("-d") + 1);
    if (r.quantity == "qm" && r.observable.rfind("fourier", 0) == 0) {
      auto& c = qm[tag][r.eta][r.N];
      c.first += r.value;
      c.second += 1;
    }
    if (r.quantity == "qe" && r.observable.rfind("iid", 0) == 0) {
      auto& c = qe_iid[tag][r.N];
      c.first = std::max(c.first, r.value);
      c.second += 1;
    }
  }
  bool ok = qm.size() == 2 && qe_iid.size() == 2;
  double qm_min = 1e9, qe_max = 0.0;
  for (const auto& [tag, by_eta] : qm) {
    const int d = tag == "d1" ? 1 : 2;
    for (const auto& [eta, by_N] : by_eta) {
      double prev = -1.0;
      for (const auto& [N, c] : by_N) {
        const double M = d == 1 ? N : std::round(std::sqrt(N));
        const double v = c.first / c.second;
        // the window J_E^eta must hold several eigenvalues
        if (eta * M >= 20.0) {
          qm_min = std::min(qm_min, v);
          ok = ok && v >= 0.4;
        }
        ok = ok && v >= prev - 1e-12;
        prev = v;
      }
    }
  }
  for (const auto& [tag, by_N] : qe_iid) {
    qe_max = std::max(qe_max, by_N.rbegin()->second.first);
    ok = ok && by_N.rbegin()->second.first < 0.05;
  }
  const bool fast = res.seconds < 300.0;
  return {ok && fast, "min Fourier qm (eta*M >= 20) " + fmt(qm_min) + ", iid qe at largest M " + fmt(qe_max) +
                          ", run " + fmt(res.seconds) + " s"};
}

// ---- 7 ----
Outcome c4() {
  const auto res = run_preset("c4-box", [](json& j) { j["sizes"] = {200}; });
  double worst = 1e9;
  int n = 0;
  for (const auto& r : res.rows)
    if (r.quantity == "c4_statistic") {
      worst = n++ ? std::max(worst, std::abs(r.value - 0.5)) : std::abs(r.value - 0.5);
    }
  return {n > 0 && worst <= 1e-10 && res.seconds < 120.0,
          "|statistic - 1/2| = " + fmt(worst) + " over " + std::to_string(n) + " instance(s), run " + fmt(res.seconds) + " s"};
}

// ---- 8 ----
Outcome free_qe() {
  const auto res = run_preset("free-qe");
  std::map<std::uint64_t, std::map<int, double>> qe;
  for (const auto& r : res.rows)
    if (r.quantity == "qe") qe[r.seed][r.N] = r.value;
  int monotone = 0;
  double first = 0.0, last = 0.0;
  for (const auto& [seed, by_N] : qe) {
    bool mono = true;
    double prev = 1e300;
    for (const auto& [N, v] : by_N) {
      mono = mono && v < prev;
      prev = v;
    }
    monotone += mono;
    first += by_N.begin()->second;
    last += by_N.rbegin()->second;
  }
  const double ratio = last / first;
  const bool ok = qe.size() == 5 && monotone >= 4 && ratio < 0.5 && res.seconds < 600.0;
  return {ok, std::to_string(monotone) + "/5 seeds monotone, mean qe(4000)/qe(500) = " + fmt(ratio) + ", run " +
                  fmt(res.seconds) + " s"};
}

// ---- 9 ----
Outcome cms() {
  for (const auto& s : scenarios())
    if (s.name != "torus-mixing-failure" && s.name != "c4-box" && s.name != "free-qe") run_preset(s.name);
  int inside = 0, vacuous = 0;
  for (const auto& r : all_cms) {
    inside += r.inside && r.lower <= r.count + 1e-9 && r.count <= r.upper + 1e-9;
    vacuous += r.vacuous;
  }
  const bool ok = !all_cms.empty() && inside == static_cast<int>(all_cms.size());
  return {ok, std::to_string(inside) + "/" + std::to_string(all_cms.size()) + " counts inside their bracket over " +
                  std::to_string(cms_sources.size()) + " scenario runs (" + std::to_string(vacuous) + " vacuous)"};
}

// ---- 10 ----
Outcome poly_window() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int certified = 0;
  double worst_ratio = 0.0;
  for (int k = 0; k < 50; ++k) {
    const double a = 1.0 + 3.0 * U(rng);
    const double eta = std::exp(std::log(0.1) + U(rng) * (std::log(1.0) - std::log(0.1)));
    const double E = -a + 2 * a * U(rng);
    const double eps = std::exp(std::log(1.0 / 25) + U(rng) * (std::log(1.0) - std::log(1.0 / 25)));
    const int n = static_cast<int>(resolvent_poly_degree(a, eta, eps) * (1.0 + 0.5 * U(rng)));
    const auto s = resolvent_poly(cplx(E, eta), a, n, eps);
    certified += s.certified();
    worst_ratio = std::max(worst_ratio, s.sup_error / s.bound);
  }
  return {certified == 50, std::to_string(certified) + "/50 triples certified, max error/bound " + fmt(worst_ratio)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double limit;  // seconds, 0 for none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> crit = {
      {1, "trace equality", 60, trace_equality},
      {2, "Ward identity", 60, ward},
      {3, "Kesten-McKay density", 10, kesten},
      {4, "free-product contraction", 60, contraction},
      {5, "fourth-moment dichotomy", 120, fourth},
      {6, "torus mixing failure", 300, torus},
      {7, "C4-box value", 120, c4},
      {8, "QE decay", 600, free_qe},
      {9, "CMS brackets", 0, cms},
      {10, "polynomial window", 60, poly_window},
  };
  int failed = 0;
  for (const auto& c : crit) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit > 0 && secs > c.limit) {
      o.pass = false;
      o.detail += " [over the " + fmt(c.limit) + " s limit]";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail << " (" << fmt(secs)
              << " s)" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
