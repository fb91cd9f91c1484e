#include "qmix/approx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>

#include <boost/math/quadrature/gauss.hpp>
#include <fftw3.h>

namespace qmix {

double ChebSeries::operator()(double lambda) const {
  if (c.empty()) return 0.0;
  const double x = (lambda - center) / half_width;
  double b1 = 0.0, b2 = 0.0;
  for (int k = degree(); k >= 1; --k) {
    const double b0 = c[k] + 2.0 * x * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  return c[0] + x * b1 - b2;
}

std::vector<double> ChebSeries::monomial() const {
  if (degree() > 40) throw ArgumentError("monomial form refused above degree 40");
  const int n = std::max(degree(), 0);
  // T_k in u, then u = (λ − center) / half_width
  std::vector<std::vector<double>> T{{1.0}, {0.0, 1.0}};
  for (int k = 2; k <= n; ++k) {
    std::vector<double> t(k + 1, 0.0);
    for (int i = 0; i < k; ++i) t[i + 1] += 2.0 * T[k - 1][i];
    for (int i = 0; i <= k - 2; ++i) t[i] -= T[k - 2][i];
    T.push_back(std::move(t));
  }
  std::vector<double> in_u(n + 1, 0.0);
  for (int k = 0; k < static_cast<int>(c.size()); ++k)
    for (int i = 0; i <= k; ++i) in_u[i] += c[k] * T[k][i];
  // Horner in u with u = αλ + β
  const double alpha = 1.0 / half_width, beta = -center / half_width;
  std::vector<double> out{in_u[n]};
  for (int i = n - 1; i >= 0; --i) {
    std::vector<double> next(out.size() + 1, 0.0);
    for (std::size_t j = 0; j < out.size(); ++j) {
      next[j + 1] += alpha * out[j];
      next[j] += beta * out[j];
    }
    next[0] += in_u[i];
    out = std::move(next);
  }
  return out;
}

double default_epsilon(double eta) {
  if (!(eta > 0.0)) throw ArgumentError("η must be positive");
  return 1.0 / std::log(std::max(1.0 / eta, 4.0));
}

int resolvent_poly_degree(double a, double eta, double eps) {
  if (!(a > 0.0) || !(eta > 0.0) || !(eps > 0.0) || eps > 1.0)
    throw ArgumentError("degree budget needs a, η > 0 and ε in (0, 1]");
  return static_cast<int>(std::ceil(kResolventPolyC * std::max(a / eta, 1.0) / eps - 1e-9));
}

namespace {

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Chebyshev coefficients of the interpolant at the M first-kind nodes x_j = cos(π(j + ½)/M).
std::vector<double> dct_coefficients(std::vector<double> values) {
  const int M = static_cast<int>(values.size());
  std::vector<double> out(M);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_plan plan = fftw_plan_r2r_1d(M, values.data(), out.data(), FFTW_REDFT10, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }
  for (double& v : out) v /= M;
  out[0] *= 0.5;
  return out;
}

std::vector<double> node_values(const std::vector<double>& coeffs, int M) {
  std::vector<double> in(M, 0.0), out(M);
  for (int k = 0; k < static_cast<int>(coeffs.size()) && k < M; ++k) in[k] = k == 0 ? coeffs[0] : 0.5 * coeffs[k];
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_plan plan = fftw_plan_r2r_1d(M, in.data(), out.data(), FFTW_REDFT01, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace

ResolventPoly resolvent_poly(cplx z, double a, int n, double eps, int grid) {
  const double E = z.real(), eta = z.imag();
  if (!(eta > 0.0)) throw ArgumentError("resolvent polynomial needs Im z > 0");
  if (!(a > 0.0)) throw ArgumentError("half-width must be positive");
  if (n < 1) throw ArgumentError("degree must be at least 1");
  if (eps == 0.0) eps = default_epsilon(eta);
  if (!(eps > 0.0) || eps > 1.0) throw ArgumentError("ε must lie in (0, 1]");
  if (n * eps < kResolventPolyC * std::max(a / eta, 1.0))
    throw PreconditionError("degree budget violated: n·ε = " + std::to_string(n * eps) + " < " +
                            std::to_string(kResolventPolyC * std::max(a / eta, 1.0)));
  if (grid < 2) throw ArgumentError("grid needs at least two points");

  ResolventPoly out;
  out.z = z;
  out.a = a;
  out.n = n;
  out.eps = eps;
  out.bound = std::exp(-1.0 / eps);
  out.grid = grid;

  const int M = 4 * n;
  auto h = [&](double lambda) { return eta / std::hypot(lambda - E, eta); };
  std::vector<double> vals(M);
  for (int j = 0; j < M; ++j) vals[j] = h(a * std::cos(std::numbers::pi * (j + 0.5) / M));
  auto pc = dct_coefficients(std::move(vals));
  pc.resize(n + 1);
  out.p = ChebSeries{pc, 0.0, a};

  auto pv = node_values(pc, M);
  for (double& v : pv) v *= v;
  auto sc = dct_coefficients(std::move(pv));
  sc.resize(2 * n + 1);
  out.s = ChebSeries{sc, 0.0, a};

  double err = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double lambda = -a + 2.0 * a * i / (grid - 1);
    const double target = eta * eta / ((lambda - E) * (lambda - E) + eta * eta);
    err = std::max(err, std::abs(target - out.s(lambda)));
  }
  out.sup_error = err;
  return out;
}

ChebSeries fejer_polynomial(int n) {
  if (n < 1) throw ArgumentError("Fejér polynomial needs n ≥ 1");
  ChebSeries F;
  F.c.assign(2 * (n - 1) + 1, 0.0);
  F.c[0] = 1.0;
  for (int k = 1; k < n; ++k) F.c[2 * k] = 2.0 * (1.0 - static_cast<double>(k) / n) * (k % 2 ? -1.0 : 1.0);
  return F;
}

double fejer_integral(int n) {
  if (n < 1) throw ArgumentError("Fejér polynomial needs n ≥ 1");
  double s = 2.0;
  for (int k = 1; k < n; ++k)
    s += 4.0 * (1.0 - static_cast<double>(k) / n) * (k % 2 ? 1.0 : -1.0) / (4.0 * k * k - 1.0);
  return s;
}

CmsBounds cms_count_bounds(const CmsInput& in) {
  if (in.n < 1) throw ArgumentError("CMS bound needs n ≥ 1");
  if (!(in.J_lo <= in.J_hi)) throw ArgumentError("empty interval J");
  const double dist = std::min(in.J_lo - in.I_lo, in.I_hi - in.J_hi);
  if (!(dist > 0.0)) throw PreconditionError("J must lie inside I at positive distance");
  CmsBounds b;
  b.n = in.n;
  b.N = in.N;
  b.bad = in.bad;
  b.bad_certified = in.bad_certified;
  b.mu_J = in.mu_J;
  b.density_bound = in.density_bound;
  b.C = in.l1 * (std::numbers::pi * in.density_bound + in.l1 / (in.n * dist * dist));
  const double slack = 2.0 * b.C / in.n;
  b.lower = std::max(0.0, (in.N - in.bad) * (in.mu_J - slack));
  b.upper = std::min(static_cast<double>(in.N), in.N * (in.mu_J + slack) + in.bad);
  b.vacuous = b.lower <= 0.0 && b.upper >= in.N;
  return b;
}

BadCount bad_count(const PermutationAction& action, const GeneratingSet& S, int n) {
  BadCount out;
  if (n <= 0) return out;
  int r = 1;
  while (true) {
    const int rt = std::min(r, n);
    std::vector<double> profile;
    try {
      profile = bs_profile(action, S, rt);
    } catch (const BudgetError&) {
      out.count = action.N();
      out.certified = false;
      return out;
    }
    out.radius_scanned = rt;
    const int c = static_cast<int>(std::lround(profile[rt] * action.N()));
    if (c == action.N() || rt == n) {
      out.count = c;
      return out;
    }
    r *= 2;
  }
}

double spectral_mass(const ResolventModel& m, double lo, double hi, double max_piece) {
  if (!(lo <= hi)) throw ArgumentError("empty interval");
  if (lo == hi) return 0.0;
  const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / max_piece)));
  const double w = (hi - lo) / pieces;
  double total = 0.0;
  for (int k = 0; k < pieces; ++k) {
    auto f = [&](double E) { return spectral_density(m, E).value; };
    total += boost::math::quadrature::gauss<double, 20>::integrate(f, lo + k * w, lo + (k + 1) * w);
  }
  return total;
}

CmsBounds cms_count_bounds(const ResolventModel& model, const PermutationAction& action, const AlgebraElement& p,
                           double J_lo, double J_hi, double I_lo, double I_hi, int n) {
  CmsInput in;
  in.J_lo = J_lo;
  in.J_hi = J_hi;
  in.I_lo = I_lo;
  in.I_hi = I_hi;
  in.n = n;
  in.N = action.N();
  in.l1 = norms(p).l1;
  in.mu_J = spectral_mass(model, J_lo, J_hi);
  double b = 0.0;
  constexpr int samples = 64;
  for (int k = 0; k <= samples; ++k) {
    const auto d = spectral_density(model, I_lo + (I_hi - I_lo) * k / samples);
    b = std::max(b, d.value + d.error);
  }
  in.density_bound = 1.02 * b;
  const auto bc = bad_count(action, support_set(p), n);
  in.bad = bc.count;
  in.bad_certified = bc.certified;
  return cms_count_bounds(in);
}

// ---- trace comparison ----

namespace {

Eigen::MatrixXcd horner(const std::vector<double>& f, const Eigen::MatrixXcd& P) {
  const Eigen::Index n = P.rows();
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(n, n);
  for (int k = static_cast<int>(f.size()) - 1; k >= 0; --k) {
    out = (P * out).eval();
    out.diagonal().array() += f[k];
  }
  return out;
}

double hermitian_norm(const Eigen::MatrixXcd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct Kernel {
  std::vector<GroupElement> T;
  std::vector<Eigen::VectorXcd> k;
  double sup = 0.0;  // Σ_t max_x |k_t(x)|
};

Kernel scalar_kernel(const Observable& obs, const PermutationAction& action) {
  if (obs.r != 1) throw ArgumentError("trace comparison needs scalar observables");
  Kernel out;
  if (obs.kind == Observable::Kind::Diagonal) {
    out.T = {identity(action.spec())};
    out.k = {obs.values};
  } else {
    out.T = obs.T;
    for (const auto& col : obs.kernel) {
      Eigen::VectorXcd v(obs.N);
      for (int x = 0; x < obs.N; ++x) v[x] = col[x](0, 0);
      out.k.push_back(v);
    }
  }
  for (const auto& v : out.k) out.sup += v.cwiseAbs().maxCoeff();
  return out;
}

int degree_of(const std::vector<double>& f) {
  int d = static_cast<int>(f.size()) - 1;
  while (d > 0 && f[d] == 0.0) --d;
  return std::max(d, 0);
}

}  // namespace

TraceComparison trace_compare(ActionPtr action, const Observable& K1, const Observable& K2,
                              const std::vector<double>& f1, const std::vector<double>& f2, const AlgebraElement& p) {
  if (p.block_size() != 1) throw ArgumentError("trace comparison needs a scalar symbol");
  if (!p.is_self_adjoint()) throw ArgumentError("trace comparison needs p = p*");
  const auto& spec = action->spec();
  const int N = action->N();
  const Kernel k1 = scalar_kernel(K1, *action), k2 = scalar_kernel(K2, *action);

  GeneratingSet S = support_set(p);
  for (const auto& g : standard_generators(spec).generators)
    if (std::find(S.generators.begin(), S.generators.end(), g) == S.generators.end()) S.generators.push_back(g);

  TraceComparison out;
  for (const auto& t : k1.T) out.r0 = std::max(out.r0, word_length(spec, t, S));
  for (const auto& t : k2.T) out.r0 = std::max(out.r0, word_length(spec, t, S));
  out.r1 = std::max(degree_of(f1), degree_of(f2));

  const Eigen::MatrixXcd P = representation_matrix(action, p).dense();
  const Eigen::MatrixXcd F1 = horner(f1, P), F2 = horner(f2, P);
  const Eigen::MatrixXcd A = to_matrix(K1, *action);
  const Eigen::MatrixXcd B = to_matrix(K2, *action);
  out.exact = (A * F1 * B.adjoint() * F2).trace();

  const AlgebraElement fp1 = apply_polynomial(f1, p), fp2 = apply_polynomial(f2, p);
  cplx alg = 0.0;
  for (std::size_t i1 = 0; i1 < k1.T.size(); ++i1)
    for (std::size_t i2 = 0; i2 < k2.T.size(); ++i2) {
      const GroupElement t2inv = inverse(spec, k2.T[i2]);
      for (const auto& [g, b] : fp2.terms()) {
        const cplx q = std::conj(fp1.coeff(multiply(spec, multiply(spec, t2inv, g), k1.T[i1]))(0, 0)) * b(0, 0);
        if (q == 0.0) continue;
        const auto perm = action->permutation_of(g);
        cplx s = 0.0;
        for (int x = 0; x < N; ++x) s += std::conj(k2.k[i2][perm[x]]) * k1.k[i1][x];
        alg += q * s;
      }
    }
  out.algebraic = alg;
  out.gap = std::abs(out.exact - out.algebraic);

  out.bad = bad_count(*action, S, out.r0 + out.r1).count;
  const double l2 = norms(fp1).l2 * norms(fp2).l2;
  out.bound = k1.sup * k2.sup * out.bad * (hermitian_norm(F1) * hermitian_norm(F2) + l2);
  return out;
}

// ---- main bound audit ----

namespace {

struct RadialSymbol {
  int d = 0;      // degree of the Cayley tree
  double c = 0.0; // p_e
  double w = 0.0; // common weight on the generators
};

std::optional<RadialSymbol> radial_symbol(const AlgebraElement& p) {
  const auto& spec = p.spec();
  const bool tree_like =
      spec.kind() == GroupKind::Free ||
      (spec.kind() == GroupKind::FreeProduct &&
       std::all_of(spec.factors().begin(), spec.factors().end(), [](const FiniteGroup& f) { return f.order == 2; }));
  if (!tree_like || p.block_size() != 1) return std::nullopt;
  const auto gens = standard_generators(spec).generators;
  RadialSymbol r;
  r.d = static_cast<int>(gens.size());
  if (r.d < 2) return std::nullopt;
  r.c = p.coeff(identity(spec))(0, 0).real();
  r.w = p.coeff(gens[0])(0, 0).real();
  std::size_t matched = p.coeff(identity(spec)).norm() > 0 ? 1 : 0;
  for (const auto& g : gens) {
    const cplx v = p.coeff(g)(0, 0);
    if (std::abs(v - r.w) > 1e-14 * std::max(1.0, std::abs(r.w))) return std::nullopt;
    ++matched;
  }
  if (matched != p.size() || r.w == 0.0) return std::nullopt;
  return r;
}

std::optional<RadialSymbol> lattice1_symbol(const AlgebraElement& p) {
  const auto& spec = p.spec();
  if (spec.kind() != GroupKind::Lattice || spec.rank() != 1 || p.block_size() != 1) return std::nullopt;
  const auto gens = standard_generators(spec).generators;
  RadialSymbol r;
  r.d = 2;
  r.c = p.coeff(identity(spec))(0, 0).real();
  r.w = p.coeff(gens[0])(0, 0).real();
  std::size_t matched = p.coeff(identity(spec)).norm() > 0 ? 1 : 0;
  for (const auto& g : gens) {
    if (std::abs(p.coeff(g)(0, 0) - r.w) > 1e-14 * std::max(1.0, std::abs(r.w))) return std::nullopt;
    ++matched;
  }
  if (matched != p.size() || r.w == 0.0) return std::nullopt;
  return r;
}

// f(p)_g on the tree as F̃(ℓ) = f(p)_g (d−1)^{ℓ/2}, |g| = ℓ.
std::vector<double> radial_values(const ChebSeries& f, const RadialSymbol& rs) {
  const int L = std::max(f.degree(), 0);
  const double q = std::sqrt(static_cast<double>(rs.d - 1));
  auto apply_X = [&](const std::vector<double>& u) {
    std::vector<double> v(u.size(), 0.0);
    const int n = static_cast<int>(u.size());
    v[0] = rs.d * (n > 1 ? u[1] : 0.0) / q;
    for (int l = 1; l < n; ++l) v[l] = q * (u[l - 1] + (l + 1 < n ? u[l + 1] : 0.0));
    for (int l = 0; l < n; ++l) v[l] = ((rs.c - f.center) * u[l] + rs.w * v[l]) / f.half_width;
    return v;
  };
  std::vector<double> b1(L + 2, 0.0), b2(L + 2, 0.0);
  for (int k = L; k >= 1; --k) {
    auto xb = apply_X(b1);
    std::vector<double> b0(L + 2);
    for (int l = 0; l < L + 2; ++l) b0[l] = 2.0 * xb[l] - b2[l];
    b0[0] += f.c[k];
    b2 = std::move(b1);
    b1 = std::move(b0);
  }
  auto xb = apply_X(b1);
  std::vector<double> out(L + 1);
  for (int l = 0; l <= L; ++l) out[l] = xb[l] - b2[l];
  out[0] += f.c[0];
  return out;
}

// f(p)_m on Z for p = c + w(δ₁ + δ₋₁), m = −L..L stored at m + L.
std::vector<double> lattice1_values(const ChebSeries& f, const RadialSymbol& rs) {
  const int L = std::max(f.degree(), 0);
  const int n = 2 * L + 3;
  auto apply_X = [&](const std::vector<double>& u) {
    std::vector<double> v(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double nb = (i > 0 ? u[i - 1] : 0.0) + (i + 1 < n ? u[i + 1] : 0.0);
      v[i] = ((rs.c - f.center) * u[i] + rs.w * nb) / f.half_width;
    }
    return v;
  };
  const int mid = L + 1;
  std::vector<double> b1(n, 0.0), b2(n, 0.0);
  for (int k = L; k >= 1; --k) {
    auto xb = apply_X(b1);
    std::vector<double> b0(n);
    for (int i = 0; i < n; ++i) b0[i] = 2.0 * xb[i] - b2[i];
    b0[mid] += f.c[k];
    b2 = std::move(b1);
    b1 = std::move(b0);
  }
  auto xb = apply_X(b1);
  std::vector<double> out(2 * L + 1);
  for (int m = -L; m <= L; ++m) out[m + L] = xb[mid + m] - b2[mid + m];
  out[L] += f.c[0];
  return out;
}

double clenshaw_U(const std::vector<double>& gamma, double x) {
  double b1 = 0.0, b2 = 0.0;
  for (int m = static_cast<int>(gamma.size()) - 1; m >= 0; --m) {
    const double b0 = gamma[m] + 2.0 * x * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  return b1;
}

double clenshaw_T(const std::vector<double>& gamma, double x) {
  ChebSeries s{gamma, 0.0, 1.0};
  return s(x);
}

double sup_on_interval(const std::function<double(double)>& f) {
  double m = 0.0;
  constexpr int grid = 4000;
  for (int i = 0; i <= grid; ++i) m = std::max(m, std::abs(f(std::cos(std::numbers::pi * i / grid))));
  return m;
}

}  // namespace

nlohmann::json to_json(const AuditRecord& r) {
  return {{"route", r.route},
          {"N", r.N},
          {"E1", r.E1},
          {"E2", r.E2},
          {"eta", r.eta},
          {"n", r.n},
          {"eps", r.eps},
          {"lhs", r.lhs},
          {"q_term", r.q_term},
          {"bad_term", r.bad_term},
          {"bad", r.bad},
          {"bad_certified", r.bad_certified},
          {"rd_bound", r.rd_bound},
          {"lambda_q_norm", r.lambda_q_norm},
          {"rho_q_norm", r.rho_q_norm},
          {"norm_ratio", r.norm_ratio},
          {"above_threshold", r.above_threshold},
          {"poly_error", r.poly_error},
          {"holds", r.holds()}};
}

AuditRecord main_bound_audit(ActionPtr action, const AlgebraElement& p, const EigenSystem& sys,
                             const Observable& obs, double E1, double E2, double eta, const AuditOptions& opt) {
  if (!(eta > 0.0)) throw ArgumentError("audit needs η > 0");
  if (obs.kind != Observable::Kind::Diagonal || obs.r != 1) throw ArgumentError("audit needs a diagonal scalar observable");
  if (p.block_size() != 1 || !p.is_self_adjoint()) throw ArgumentError("audit needs a scalar self-adjoint symbol");
  const int N = action->N();
  if (sys.partial || sys.size() != N) throw ArgumentError("audit needs a full eigendecomposition");
  const auto& spec = action->spec();

  AuditRecord rec;
  rec.N = N;
  rec.E1 = E1;
  rec.E2 = E2;
  rec.eta = eta;
  rec.eps = opt.eps > 0.0 ? opt.eps : default_epsilon(eta);
  const double a = norms(p).l1;
  rec.n = opt.n > 0 ? opt.n : resolvent_poly_degree(a, eta, rec.eps);

  ChebSeries f1, f2;
  if (opt.f1 && opt.f2) {
    f1 = *opt.f1;
    f2 = *opt.f2;
    rec.n = (std::max(f1.degree(), f2.degree()) + 1) / 2;
  } else {
    const auto s1 = resolvent_poly(cplx(E1, eta), a, rec.n, rec.eps);
    const auto s2 = resolvent_poly(cplx(E2, eta), a, rec.n, rec.eps);
    rec.poly_error = std::max(s1.sup_error, s2.sup_error);
    f1 = s1.s;
    f2 = s2.s;
    for (double& v : f1.c) v *= 4.0;
    for (double& v : f2.c) v *= 4.0;
  }

  Eigen::VectorXcd k = obs.values;
  if (opt.centering != Centering::None) k.array() -= k.mean();
  const double ksup = k.cwiseAbs().maxCoeff();

  // lhs = (1/(Nη)) Σ_{α,β} f₁(λ_α) f₂(λ_β) |⟨φ_β, K φ_α⟩|²
  Eigen::VectorXd v1(N), v2(N);
  for (int i = 0; i < N; ++i) {
    v1[i] = f1(sys.values[i]);
    v2[i] = f2(sys.values[i]);
  }
  Eigen::MatrixXd W;
  if (sys.real && k.imag().cwiseAbs().maxCoeff() == 0.0) {
    const Eigen::MatrixXd M = sys.real_vectors.transpose() * (k.real().asDiagonal() * sys.real_vectors);
    W = M.cwiseAbs2();
  } else {
    const Eigen::MatrixXcd Phi = sys.columns([&] {
      std::vector<int> all(N);
      std::iota(all.begin(), all.end(), 0);
      return all;
    }());
    const Eigen::MatrixXcd M = Phi.adjoint() * (k.asDiagonal() * Phi);
    W = M.cwiseAbs2();
  }
  rec.lhs = v2.dot(W * v1) / (N * eta);
  const double F1norm = v1.cwiseAbs().maxCoeff(), F2norm = v2.cwiseAbs().maxCoeff();

  double l2_product = 0.0;
  double rd_sum = 0.0;
  double C = opt.rd_C, C1p = opt.rd_C1_prime;
  std::vector<double> q_at_eigen;  // symbol of ρ_N(q) on each nontrivial eigenvector
  cplx kQk = 0.0;

  const double trivial = [&] {
    cplx s = 0.0;
    for (const auto& [g, b] : p.terms()) s += b(0, 0);
    return s.real();
  }();
  std::vector<int> nontrivial;
  {
    int drop = 0;
    for (int i = 1; i < N; ++i)
      if (std::abs(sys.values[i] - trivial) < std::abs(sys.values[drop] - trivial)) drop = i;
    for (int i = 0; i < N; ++i)
      if (i != drop) nontrivial.push_back(i);
  }

  const auto rs = opt.route == "auto" || opt.route == "radial" ? radial_symbol(p) : std::nullopt;
  const auto ls = opt.route == "auto" || opt.route == "lattice1" ? lattice1_symbol(p) : std::nullopt;
  if (opt.route != "auto" && opt.route != "generic" && !rs && !ls)
    throw ArgumentError("route " + opt.route + " does not apply to this symbol");
  if (rs) {
    rec.route = "radial";
    if (C < 0.0) C = std::sqrt(std::numbers::pi * std::numbers::pi / 6.0);
    if (C1p < 0.0) C1p = 4.0;
    const auto F1 = radial_values(f1, *rs), F2 = radial_values(f2, *rs);
    const double dm1 = rs->d - 1.0, ratio = rs->d / dm1;
    const int L = static_cast<int>(std::min(F1.size(), F2.size())) - 1;
    double n1 = F1[0] * F1[0], n2 = F2[0] * F2[0];
    for (std::size_t l = 1; l < F1.size(); ++l) n1 += ratio * F1[l] * F1[l];
    for (std::size_t l = 1; l < F2.size(); ++l) n2 += ratio * F2[l] * F2[l];
    l2_product = std::sqrt(n1 * n2);
    std::vector<double> cl(L + 1);
    for (int l = 0; l <= L; ++l) {
      const double prod = F1[l] * F2[l];
      cl[l] = prod * std::pow(dm1, -0.5 * l);
      rd_sum += (l == 0 ? 1.0 : ratio * std::pow(dm1, -static_cast<double>(l))) * prod * prod *
                std::pow(l + 1.0, C1p);
    }
    // Σ_ℓ c_ℓ B_ℓ = Σ_m γ_m U_m(A / (2√(d−1))), B_ℓ = A_ℓ / (d−1)^{ℓ/2}
    std::vector<double> gamma(L + 1);
    for (int m = 0; m <= L; ++m) gamma[m] = cl[m] - (m + 2 <= L ? cl[m + 2] / dm1 : 0.0);
    const SparseMatrix A =
        representation_matrix(action, AlgebraElement::indicator(p.spec_ptr(), standard_generators(spec))).matrix;
    const double scale = 1.0 / std::sqrt(dm1);
    Eigen::VectorXcd b1 = Eigen::VectorXcd::Zero(N), b2 = Eigen::VectorXcd::Zero(N);
    for (int m = L; m >= 0; --m) {
      Eigen::VectorXcd b0 = gamma[m] * k + scale * (A * b1) - b2;
      b2 = std::move(b1);
      b1 = std::move(b0);
    }
    kQk = k.dot(b1);
    auto qsym = [&](double x) { return clenshaw_U(gamma, x); };
    rec.lambda_q_norm = sup_on_interval(qsym);
    for (int i : nontrivial) q_at_eigen.push_back(qsym((sys.values[i] - rs->c) / rs->w / (2.0 * std::sqrt(dm1))));
  } else if (ls) {
    rec.route = "lattice1";
    if (C < 0.0) C = std::sqrt(std::numbers::pi * std::numbers::pi / 3.0 - 1.0);
    if (C1p < 0.0) C1p = 2.0;
    const auto F1 = lattice1_values(f1, *ls), F2 = lattice1_values(f2, *ls);
    const int L1 = (static_cast<int>(F1.size()) - 1) / 2, L2 = (static_cast<int>(F2.size()) - 1) / 2;
    const int L = std::min(L1, L2);
    double n1 = 0.0, n2 = 0.0;
    for (double v : F1) n1 += v * v;
    for (double v : F2) n2 += v * v;
    std::vector<double> qm(L + 1);
    for (int m = -L; m <= L; ++m) {
      const double q = F1[m + L1] * F2[m + L2];
      rd_sum += q * q * std::pow(std::abs(m) + 1.0, C1p);
      if (m >= 0) qm[m] = q;
    }
    l2_product = std::sqrt(n1 * n2);
    const auto& sigma = action->perms()[0];
    Eigen::VectorXcd shifted = k;
    cplx s = qm[0] * k.squaredNorm();
    for (int m = 1; m <= L; ++m) {
      Eigen::VectorXcd next(N);
      for (int y = 0; y < N; ++y) next[y] = shifted[sigma[y]];
      shifted = std::move(next);
      s += 2.0 * qm[m] * k.dot(shifted).real();
    }
    kQk = s;
    std::vector<double> gamma(L + 1);
    for (int m = 0; m <= L; ++m) gamma[m] = m == 0 ? qm[0] : 2.0 * qm[m];
    auto qsym = [&](double x) { return clenshaw_T(gamma, x); };
    rec.lambda_q_norm = sup_on_interval(qsym);
    for (int i : nontrivial) q_at_eigen.push_back(qsym(std::clamp((sys.values[i] - ls->c) / (2.0 * ls->w), -1.0, 1.0)));
  } else {
    rec.route = "generic";
    if (C < 0.0) C = 1.0;
    if (C1p < 0.0) C1p = 4.0;
    // Clenshaw in the group algebra
    auto cheb_apply = [&](const ChebSeries& f) {
      AlgebraElement X = p;
      X.add(identity(spec), -f.center);
      X *= cplx(1.0 / f.half_width);
      AlgebraElement b1(p.spec_ptr()), b2(p.spec_ptr());
      for (int j = f.degree(); j >= 1; --j) {
        AlgebraElement b0 = cplx(2.0) * convolve(X, b1) - b2;
        b0.add(identity(spec), f.c[j]);
        b0.prune(1e-18);
        if (b0.size() > 200000) throw BudgetError("group-algebra expansion exceeds 200000 terms");
        b2 = std::move(b1);
        b1 = std::move(b0);
      }
      AlgebraElement out = convolve(X, b1) - b2;
      out.add(identity(spec), f.c[0]);
      return out;
    };
    const auto fp1 = cheb_apply(f1), fp2 = cheb_apply(f2);
    l2_product = norms(fp1).l2 * norms(fp2).l2;
    AlgebraElement q(p.spec_ptr());
    for (const auto& [g, b] : fp2.terms()) {
      const cplx v = std::conj(fp1.coeff(g)(0, 0)) * b(0, 0);
      if (v != 0.0) q.add(g, v);
    }
    rd_sum = std::pow(rd_norm_bound(q, C1p, 1.0), 2);
    const auto Q = representation_matrix(action, q).matrix;
    kQk = k.dot(Q * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(Eigen::MatrixXcd(Q), Eigen::EigenvaluesOnly);
    cplx total = 0.0;
    for (const auto& [g, b] : q.terms()) total += b(0, 0);
    int drop = 0;
    for (int i = 1; i < N; ++i)
      if (std::abs(es.eigenvalues()[i] - total.real()) < std::abs(es.eigenvalues()[drop] - total.real())) drop = i;
    for (int i = 0; i < N; ++i)
      if (i != drop) q_at_eigen.push_back(es.eigenvalues()[i]);
    rec.lambda_q_norm = C * std::sqrt(rd_sum);
  }

  rec.q_term = kQk.real() / (N * eta);
  const double rd = C * std::sqrt(rd_sum);
  rec.rd_bound = rd / eta;
  for (double v : q_at_eigen) {
    rec.rho_q_norm = std::max(rec.rho_q_norm, std::abs(v));
    if (std::abs(v) > 2.0 * rd) ++rec.above_threshold;
  }
  rec.norm_ratio = rec.lambda_q_norm > 0.0 ? rec.rho_q_norm / rec.lambda_q_norm : 0.0;

  const auto bc = bad_count(*action, support_set(p), std::max(f1.degree(), f2.degree()));
  rec.bad = bc.count;
  rec.bad_certified = bc.certified;
  rec.bad_term = ksup * ksup * rec.bad * (F1norm * F2norm + l2_product) / (N * eta);
  return rec;
}

TraceQCheck trace_q_check(const Eigen::MatrixXd& P, const EigenSystem& sys, const SparseMatrix& K, double E1,
                          double E2, double eta) {
  TraceQCheck out;
  out.L = moment_LIJ(sys, K, E1 - eta, E1 + eta, E2 - eta, E2 + eta);
  const auto I1 = sys.window(E1 - eta, E1 + eta);
  if (I1.empty()) return out;
  const Eigen::Index n = P.rows();
  auto im_resolvent = [&](double E) {
    Eigen::MatrixXcd M = P.cast<cplx>();
    M.diagonal().array() -= cplx(E, eta);
    const Eigen::MatrixXcd R = M.partialPivLu().inverse();
    return Eigen::MatrixXcd((R - R.adjoint()) / cplx(0.0, 2.0));
  };
  const Eigen::MatrixXcd R1 = im_resolvent(E1), R2 = im_resolvent(E2);
  const Eigen::MatrixXcd Kd(K);
  (void)n;
  const cplx tr = (Kd * R1 * Kd.adjoint() * R2).trace();
  out.rhs = 4.0 * eta * eta / static_cast<double>(I1.size()) * tr.real();
  return out;
}

}  // namespace qmix
