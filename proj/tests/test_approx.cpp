#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "qmix/approx.hpp"

using namespace qmix;

namespace {

constexpr double pi = std::numbers::pi;

// F_n(cos θ) = K_n(2θ + π) for the Fejér kernel K_n(φ) = sin²(nφ/2) / (n sin²(φ/2))
double fejer_closed(int n, double x) {
  if (std::abs(x) < 1e-7) return n;
  const double th = std::acos(x);
  const double s = std::sin(n * th + n * pi / 2);
  return s * s / (n * x * x);
}

double fejer_quadrature(int n) {
  // ∫_{−1}^{1} F_n(x) dx = ∫_0^π F_n(cos θ) sin θ dθ, smooth and periodic-friendly
  const int m = 200000;
  double s = 0.0;
  for (int j = 0; j < m; ++j) {
    const double th = pi * (j + 0.5) / m;
    s += fejer_closed(n, std::cos(th)) * std::sin(th);
  }
  return s * pi / m;
}

// Chebyshev interpolant of h(λ) = η/|λ − z| at 4n first-kind nodes, by the direct cosine sum
std::vector<double> cheb_oracle(cplx z, double a, int n) {
  const int M = 4 * n;
  std::vector<double> c(n + 1, 0.0);
  for (int k = 0; k <= n; ++k) {
    for (int j = 0; j < M; ++j) {
      const double t = pi * (j + 0.5) / M;
      c[k] += z.imag() / std::abs(a * std::cos(t) - z) * std::cos(k * t);
    }
    c[k] *= (k == 0 ? 1.0 : 2.0) / M;
  }
  return c;
}

double cheb_eval(const std::vector<double>& c, double x) {
  double b1 = 0.0, b2 = 0.0;
  for (int k = static_cast<int>(c.size()) - 1; k >= 1; --k) {
    const double b0 = 2 * x * b1 - b2 + c[k];
    b2 = b1;
    b1 = b0;
  }
  return x * b1 - b2 + c[0];
}

AlgebraElement standard_symbol(const PermutationAction& a) {
  const auto& spec = a.spec_ptr();
  return AlgebraElement::indicator(spec, standard_generators(*spec));
}

Eigen::VectorXcd random_values(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v[i] = cplx(u(rng), u(rng));
  return v;
}

}  // namespace

TEST_CASE("Fejer polynomial against the closed-form kernel") {
  for (int n : {1, 2, 3, 8, 25, 200}) {
    CAPTURE(n);
    const auto F = fejer_polynomial(n);
    CHECK(F.degree() == 2 * (n - 1));
    CHECK(F(0.0) == doctest::Approx(n).epsilon(1e-12));
    double worst = 0.0;
    for (int i = 0; i <= 4000; ++i) {
      const double x = -1.0 + 2.0 * i / 4000;
      const double v = F(x);
      CHECK(v >= -1e-10);
      if (std::abs(x) > 1e-3) {
        CHECK(v <= 1.0 / (n * x * x) + 1e-9);
        worst = std::max(worst, std::abs(v - fejer_closed(n, x)));
      }
    }
    CHECK(worst < 1e-9 * n);
    CHECK(fejer_integral(n) == doctest::Approx(fejer_quadrature(n)).epsilon(1e-8));
  }
  CHECK_THROWS_AS(fejer_polynomial(0), ArgumentError);
}

TEST_CASE("Fejer integral: below 3 up to n = 7, then between 3 and pi") {
  double prev = 0.0;
  for (int n = 1; n <= 200; ++n) {
    const double I = fejer_integral(n);
    CAPTURE(n);
    CHECK(I > prev);
    CHECK(I < pi);
    if (n <= 7) CHECK(I <= 3.0);
    else CHECK(I > 3.0);
    prev = I;
  }
  CHECK(fejer_integral(20000) == doctest::Approx(pi).epsilon(1e-3));
}

TEST_CASE("resolvent polynomial: nonnegative, peaked, certified") {
  for (auto [z, a] : std::vector<std::pair<cplx, double>>{{{0.0, 0.5}, 3.0}, {{1.2, 0.1}, 4.0}, {{-2.5, 0.05}, 3.0}}) {
    CAPTURE(z);
    const double eps = default_epsilon(z.imag());
    const int n = resolvent_poly_degree(a, z.imag(), eps);
    const auto s = resolvent_poly(z, a, n, eps);
    CHECK(s.s.degree() == 2 * n);
    CHECK(s.certified());
    CHECK(s.sup_error < 1e-12);
    CHECK(std::abs(s.s(z.real()) - 1.0) <= s.bound);
    for (int i = 0; i <= 20000; ++i) {
      const double x = -a + 2 * a * i / 20000.0;
      const double v = s.s(x);
      CHECK(v >= 0.0);
      CHECK(4 * v <= 5.0);
      if (std::abs(x - z.real()) <= z.imag()) CHECK(4 * v >= 1.0);
    }
    // s = p² and p is the Chebyshev interpolant of h
    const auto oracle = cheb_oracle(z, a, std::min(n, 300));
    if (n <= 300)
      for (int k = 0; k <= n; ++k) CHECK(std::abs(s.p.c[k] - oracle[k]) < 1e-13);
    for (double x : {-a, -0.3 * a, z.real(), 0.77 * a}) CHECK(std::abs(s.s(x) - s.p(x) * s.p(x)) < 1e-12);
  }
}

TEST_CASE("resolvent polynomial: error decreases with the degree") {
  const cplx z(0.4, 0.1);
  const double a = 3.0;
  // below the budget, via the interpolation oracle
  double prev = 1e9;
  for (int n : {40, 80, 160, 320}) {
    const auto c = cheb_oracle(z, a, n);
    double err = 0.0;
    for (int i = 0; i < 5000; ++i) {
      const double l = -a + 2 * a * i / 4999.0;
      const double p = cheb_eval(c, l / a);
      err = std::max(err, std::abs(z.imag() * z.imag() / std::norm(l - z) - p * p));
    }
    CAPTURE(n);
    CHECK(err < 0.6 * prev);
    prev = err;
  }
  // at and above the budget the library is at rounding level
  const double eps = 0.5;
  const int n0 = resolvent_poly_degree(a, z.imag(), eps);
  const double e0 = resolvent_poly(z, a, n0, eps).sup_error, e1 = resolvent_poly(z, a, 2 * n0, eps).sup_error;
  CHECK(e0 < 1e-13);
  CHECK(e1 < 1e-13);
  CHECK(e0 <= prev);

  CHECK_THROWS_AS(resolvent_poly(z, a, n0 - 1, eps), PreconditionError);
  CHECK_THROWS_AS(resolvent_poly(cplx(0.0, 0.0), a, n0, eps), ArgumentError);
  CHECK(default_epsilon(0.5) == doctest::Approx(1.0 / std::log(4.0)));
  CHECK(default_epsilon(0.01) == doctest::Approx(1.0 / std::log(100.0)));
}

TEST_CASE("resolvent polynomial sees the local density") {
  // ∫ s_z² dμ ≈ (π/2) η μ'(E) for small η; Kesten–McKay law of the 4-regular tree
  const int d = 4;
  auto km = [&](double x) {
    const double b = 4.0 * (d - 1) - x * x;
    return b <= 0 ? 0.0 : d * std::sqrt(b) / (2 * pi * (d * d - x * x));
  };
  const double edge = 2 * std::sqrt(d - 1.0);
  for (double eta : {0.05, 0.02}) {
    const cplx z(0.5, eta);
    const double eps = 0.5;
    const auto s = resolvent_poly(z, 4.0, resolvent_poly_degree(4.0, eta, eps), eps);
    const int m = 20000;
    double integral = 0.0;
    for (int i = 0; i < m; ++i) {
      const double x = -edge + 2 * edge * (i + 0.5) / m;
      const double v = s.s(x);
      integral += v * v * km(x);
    }
    integral *= 2 * edge / m;
    CAPTURE(eta);
    CHECK(integral / (pi / 2 * eta * km(0.5)) == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("CMS bounds: formula, monotonicity, outside the spectrum") {
  CmsInput in;
  in.J_lo = -0.5;
  in.J_hi = 0.5;
  in.I_lo = -1.5;
  in.I_hi = 1.5;
  in.mu_J = 0.3;
  in.density_bound = 0.4;
  in.l1 = 2.0;
  in.N = 1000;
  in.bad = 7;
  CmsBounds prev;
  for (int n : {1, 2, 5, 10, 50, 100, 1000}) {
    in.n = n;
    const auto b = cms_count_bounds(in);
    const double C = 2.0 * (pi * 0.4 + 2.0 / n);
    CHECK(b.C == doctest::Approx(C));
    CHECK(b.upper == doctest::Approx(std::min(1000.0, 1000 * (0.3 + 2 * C / n) + 7)));
    CHECK(b.lower == doctest::Approx(std::max(0.0, 993 * (0.3 - 2 * C / n))));
    if (n > 1) {
      CHECK(b.upper <= prev.upper);
      CHECK(b.lower >= prev.lower);
    }
    prev = b;
  }
  CHECK(prev.contains(300));
  CHECK_FALSE(prev.contains(400));
  in.J_lo = -1.6;
  CHECK_THROWS_AS(cms_count_bounds(in), PreconditionError);

  // torus: the spectrum of the line is [−2, 2]
  const LatticeModel Z(1);
  auto t = torus_action(200, 1);
  const auto p = standard_symbol(*t);
  const auto out = cms_count_bounds(Z, *t, p, 2.3, 2.6, 2.1, 3.0, 20);
  CHECK(out.mu_J == 0.0);
  CHECK(out.bad == 0);
  CHECK(out.density_bound < 1e-3);
  CHECK(out.upper == doctest::Approx(200 * 2 * out.C / 20));
  CHECK(out.lower == 0.0);
}

TEST_CASE("CMS bounds bracket exact counts") {
  SUBCASE("torus: empty bad set, bounds tighten like 1/n") {
    const LatticeModel Z(1);
    const int M = 400;
    auto t = torus_action(M, 1);
    const auto p = standard_symbol(*t);
    const auto sys = eigendecompose(representation_matrix(t, p));
    const double exact_mu = (std::acos(-1.0 / 2) - std::acos(0.6 / 2)) / pi;
    double prev_width = 1e9;
    for (int n : {10, 40, 199}) {
      const auto b = cms_count_bounds(Z, *t, p, -1.0, 0.6, -1.8, 1.8, n);
      CAPTURE(n);
      CHECK(b.bad == 0);
      CHECK(b.mu_J == doctest::Approx(exact_mu).epsilon(1e-7));
      CHECK(b.contains(count(sys, -1.0, 0.6)));
      const double width = b.upper - b.lower;
      CHECK(width < prev_width);
      CHECK(width * n <= 4.05 * M * b.C);
      prev_width = width;
    }
    CHECK(cms_count_bounds(Z, *t, p, -1.0, 0.6, -1.8, 1.8, 200).bad == M);
  }
  SUBCASE("random 3-regular graph") {
    const RegularTreeModel T(3);
    auto a = random_matching_action(1500, 3, 4);
    const auto p = standard_symbol(*a);
    const auto sys = eigendecompose(representation_matrix(a, p));
    for (int n : {2, 4, 8})
      for (auto [lo, hi] : std::vector<std::pair<double, double>>{{-1.0, 1.0}, {0.2, 2.0}}) {
        const auto b = cms_count_bounds(T, *a, p, lo, hi, -2.5, 2.5, n);
        CAPTURE(n);
        CHECK(b.contains(count(sys, lo, hi)));
      }
  }
}

TEST_CASE("bad count") {
  auto t = torus_action(20, 1);
  const auto S = support_set(standard_symbol(*t));
  CHECK(bad_count(*t, S, 9).count == 0);
  CHECK(bad_count(*t, S, 10).count == 20);
  CHECK(bad_count(*t, S, 0).count == 0);
  auto f = random_free_action(300, 2, 9);
  const auto Sf = support_set(standard_symbol(*f));
  for (int n : {1, 2, 3}) {
    const auto bc = bad_count(*f, Sf, n);
    CHECK(bc.certified);
    CHECK(bc.count == static_cast<int>(bad_set(*f, Sf, n).size()));
  }
}

TEST_CASE("trace comparison") {
  SUBCASE("identity observables and f = 1 give N on both sides") {
    auto t = torus_action(9, 1);
    const auto one = diagonal_observable(Eigen::VectorXcd::Ones(9));
    const auto r = trace_compare(t, one, one, {1.0}, {1.0}, standard_symbol(*t));
    CHECK(std::abs(r.exact - 9.0) < 1e-12);
    CHECK(std::abs(r.algebraic - 9.0) < 1e-12);
    CHECK(r.holds());
  }
  SUBCASE("torus, diagonal observables: the |f(P)(x,y)|² form and zero gap without bad points") {
    const int M = 40;
    auto t = torus_action(M, 1);
    const auto p = standard_symbol(*t);
    const auto a = random_values(M, 1), b = random_values(M, 2);
    const std::vector<double> f = {0.3, -1.0, 0.25, 0.5};
    const auto r = trace_compare(t, diagonal_observable(a), diagonal_observable(b), f, f, p);
    CHECK(r.bad == 0);
    CHECK(r.gap < 1e-10);
    const Eigen::MatrixXd P = representation_matrix(t, p).dense().real();
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(M, M);
    for (int k = static_cast<int>(f.size()) - 1; k >= 0; --k) F = F * P + f[k] * Eigen::MatrixXd::Identity(M, M);
    cplx direct = 0.0;
    for (int x = 0; x < M; ++x)
      for (int y = 0; y < M; ++y) direct += a[x] * std::conj(b[y]) * F(x, y) * F(x, y);
    CHECK(std::abs(r.exact - direct) < 1e-10);
  }
  SUBCASE("short cycles: nonzero gap within the bound") {
    auto t = torus_action(5, 2);
    const auto p = standard_symbol(*t);
    const auto a = random_values(25, 3);
    const auto r = trace_compare(t, diagonal_observable(a), diagonal_observable(a), {0, 0, 1, 0.5}, {1, 1, 0, 0, 0.2}, p);
    CHECK(r.bad == 25);
    CHECK(r.gap > 1e-6);
    CHECK(r.holds());
  }
  SUBCASE("T-local observables on a random Schreier graph") {
    auto f = random_free_action(400, 2, 6);
    const auto p = standard_symbol(*f);
    std::vector<GroupElement> T = {identity(f->spec()), generator(f->spec(), 1)};
    const auto perm = f->permutation_of(T[1]);
    const auto v = random_values(800, 7);
    SparseMatrix K(400, 400);
    std::vector<Eigen::Triplet<cplx>> trip;
    for (int x = 0; x < 400; ++x) {
      trip.emplace_back(x, x, v[x]);
      trip.emplace_back(perm[x], x, v[400 + x]);
    }
    K.setFromTriplets(trip.begin(), trip.end());
    const auto obs = tlocal_observable(*f, T, K);
    const auto r = trace_compare(f, obs, obs, {0.1, 1.0, 0.5}, {0.0, 0.2, 0.0, 1.0}, p);
    CHECK(r.r0 == 1);
    CHECK(r.r1 == 3);
    CHECK(r.holds());
    if (r.bad == 0) CHECK(r.gap < 1e-9);
  }
}

TEST_CASE("trace inequality with finite resolvents") {
  auto a = random_matching_action(300, 3, 12);
  const auto p = standard_symbol(*a);
  const auto op = representation_matrix(a, p);
  const auto sys = eigendecompose(op);
  const Eigen::MatrixXd P = op.dense().real();
  const auto v = random_values(300, 13);
  SparseMatrix K(300, 300);
  for (int x = 0; x < 300; ++x) K.insert(x, x) = v[x];
  for (auto [E1, E2, eta] : std::vector<std::array<double, 3>>{{0.0, 0.0, 0.1}, {-1.0, 1.5, 0.3}, {2.0, -2.0, 0.05}}) {
    const auto c = trace_q_check(P, sys, K, E1, E2, eta);
    CAPTURE(E1);
    CHECK(c.holds());
    CHECK(c.L <= c.rhs);
  }
}

TEST_CASE("main bound audit") {
  SUBCASE("random 4-regular Schreier graph at eta = 1") {
    auto f = random_free_action(300, 2, 3);
    const auto p = standard_symbol(*f);
    const auto sys = eigendecompose(representation_matrix(f, p));
    const auto obs = iid_observable(300, 5);
    const auto rec = main_bound_audit(f, p, sys, obs, 0.0, 0.0, 1.0);
    CHECK(rec.route == "radial");
    CHECK(rec.holds());
    CHECK(rec.poly_error < 1e-12);
    CHECK(rec.lhs > 0.0);
    CHECK(rec.lhs < 5.0);
    // nontrivial eigenvalues of a finite graph may sit slightly beyond the Ramanujan edge
    CHECK(rec.norm_ratio > 0.8);
    CHECK(rec.norm_ratio < 1.05);
    const auto j = to_json(rec);
    CHECK(j["holds"].get<bool>());
    CHECK(j["N"] == 300);
  }
  SUBCASE("radial and lattice routes agree with the group-algebra expansion") {
    ChebSeries f1{{0.2, 0.5, 0.1, -0.3}, 0.0, 4.0}, f2{{1.0, 0.0, 0.25, 0.0, 0.1}, 0.5, 4.0};
    AuditOptions opt;
    opt.f1 = f1;
    opt.f2 = f2;
    auto f = random_free_action(200, 2, 8);
    auto t = torus_action(60, 1);
    for (const auto& act : {f, t}) {
      const auto p = standard_symbol(*act);
      const auto sys = eigendecompose(representation_matrix(act, p));
      const auto obs = iid_observable(act->N(), 2, IidLaw::Disc);
      opt.route = "auto";
      const auto fast = main_bound_audit(act, p, sys, obs, 0.0, 0.0, 0.5, opt);
      opt.route = "generic";
      const auto slow = main_bound_audit(act, p, sys, obs, 0.0, 0.0, 0.5, opt);
      CAPTURE(fast.route);
      CHECK(fast.route != "generic");
      CHECK(slow.route == "generic");
      CHECK(fast.q_term == doctest::Approx(slow.q_term).epsilon(1e-10));
      CHECK(fast.lhs == doctest::Approx(slow.lhs).epsilon(1e-12));
      CHECK(fast.rho_q_norm == doctest::Approx(slow.rho_q_norm).epsilon(1e-9));
      CHECK(fast.holds());
      CHECK(slow.holds());
    }
  }
  SUBCASE("the line: the q term per eta does not decay for a Fourier mode") {
    const int M = 600;
    auto t = torus_action(M, 1);
    const auto p = standard_symbol(*t);
    const auto sys = eigendecompose(representation_matrix(t, p));
    const auto obs = fourier_observable(*t, {1});
    std::vector<double> q;
    for (double eta : {0.4, 0.2, 0.1}) {
      const auto rec = main_bound_audit(t, p, sys, obs, 0.0, 0.0, eta);
      CHECK(rec.route == "lattice1");
      CHECK(rec.holds());
      q.push_back(rec.q_term);
    }
    CHECK(q[2] >= 0.9 * q[0]);
  }
}
