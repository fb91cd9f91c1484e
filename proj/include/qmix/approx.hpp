#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmix/resolvent.hpp"
#include "qmix/stats.hpp"

namespace qmix {

/// f(λ) = Σ_k c[k] T_k((λ − center) / half_width).
struct ChebSeries {
  std::vector<double> c;
  double center = 0.0;
  double half_width = 1.0;

  int degree() const { return static_cast<int>(c.size()) - 1; }
  double operator()(double lambda) const;
  /// Monomial coefficients in λ; refuses degrees above 40 (ill-conditioned).
  std::vector<double> monomial() const;
};

/// Calibrated constant of the degree budget n·ε ≥ c·max(a/η, 1).
inline constexpr double kResolventPolyC = 35.0;

/// ε = 1 / ln(max(1/η, 4)).
double default_epsilon(double eta);

struct ResolventPoly {
  cplx z;
  double a = 1.0;
  int n = 0;
  double eps = 0.0;
  ChebSeries p;  // degree n approximant of h_z(λ) = η / |λ − z|
  ChebSeries s;  // s = p², degree 2n
  double sup_error = 0.0;  // max over the grid of |η Im g^z − s|
  double bound = 0.0;      // e^{−1/ε}
  int grid = 10000;
  bool certified() const { return sup_error <= bound; }
};

/// Smallest n meeting the degree budget.
int resolvent_poly_degree(double a, double eta, double eps);
/// Non-negative s_{z,n} with sup_{[−a,a]} |η Im g^z − s| measured on a uniform grid.
/// Throws PreconditionError when n·ε < c·max(a/η, 1).
ResolventPoly resolvent_poly(cplx z, double a, int n, double eps = 0.0, int grid = 10000);

/// F_n(x) = 1 + 2 Σ_{k=1}^{n−1} (1 − k/n)(−1)^k T_{2k}(x), so that 2n F_n(cos θ) is the sum of the two
/// Fejér kernels centred at θ = ±π/2; F_n(0) = n and ∫_{−1}^{1} F_n < π.
ChebSeries fejer_polynomial(int n);
double fejer_integral(int n);

struct CmsBounds {
  double lower = 0.0;
  double upper = 0.0;
  double mu_J = 0.0;        // μ_p(J)
  double density_bound = 0.0;
  double C = 0.0;           // ‖p‖₁(πC₀ + ‖p‖₁/(nε²))
  int n = 0;
  int N = 0;
  int bad = 0;              // |Bad_S(n)|, or N when the scan was out of budget
  bool bad_certified = true;
  bool vacuous = false;     // lower ≤ 0 and upper ≥ N
  bool contains(int count) const { return lower <= count + 1e-9 && count <= upper + 1e-9; }
};

struct CmsInput {
  double J_lo = 0.0, J_hi = 0.0;
  double I_lo = 0.0, I_hi = 0.0;  // AC window with density ≤ density_bound
  double mu_J = 0.0;
  double density_bound = 0.0;
  double l1 = 0.0;  // ‖p‖₁
  int n = 1;
  int N = 0;
  int bad = 0;
  bool bad_certified = true;
};
/// (N − |Bad|)(μ(J) − 2C/n) ≤ |Λ_J| ≤ N(μ(J) + 2C/n) + |Bad|, one C/n per endpoint of J.
CmsBounds cms_count_bounds(const CmsInput& in);
/// Fills μ_p(J), the density bound on I and |Bad_S(n)| from a model and an action.
CmsBounds cms_count_bounds(const ResolventModel& model, const PermutationAction& action, const AlgebraElement& p,
                           double J_lo, double J_hi, double I_lo, double I_hi, int n);

struct BadCount {
  int count = 0;
  int radius_scanned = 0;
  bool certified = true;
};
/// |Bad_S(n)|; stops early once every point is bad and falls back to N when the ball is out of budget.
BadCount bad_count(const PermutationAction& action, const GeneratingSet& S, int n);

/// μ_p([lo, hi]) by piecewise Gauss–Legendre quadrature of the extrapolated density.
double spectral_mass(const ResolventModel& m, double lo, double hi, double max_piece = 0.5);

struct TraceComparison {
  cplx exact;      // Tr(K₁ f₁(P_N) K₂* f₂(P_N))
  cplx algebraic;  // Σ_{t₁,t₂} ⟨k₂,t₂, ρ_N(q_{t₁t₂}) k₁,t₁⟩
  double gap = 0.0;
  double bound = 0.0;
  int r0 = 0, r1 = 0;
  int bad = 0;
  bool holds() const { return gap <= bound * (1.0 + 1e-9) + 1e-9; }
};
/// f₁, f₂ in monomial coefficients; scalar observables (r = 1).
TraceComparison trace_compare(ActionPtr action, const Observable& K1, const Observable& K2,
                              const std::vector<double>& f1, const std::vector<double>& f2, const AlgebraElement& p);

struct AuditOptions {
  int n = 0;           // 0: smallest degree meeting the budget
  double eps = 0.0;    // 0: default_epsilon(η)
  double rd_C = -1.0;  // < 0: per-group default
  double rd_C1_prime = -1.0;
  Centering centering = Centering::Symbol;
  std::string route = "auto";  // auto, radial, lattice1, generic
  /// Replace f_j = 4 s_{z_j,n} by given polynomials.
  std::optional<ChebSeries> f1, f2;
};

struct AuditRecord {
  std::string route;  // radial, lattice1, generic
  int N = 0;
  double E1 = 0.0, E2 = 0.0, eta = 0.0;
  int n = 0;
  double eps = 0.0;
  double lhs = 0.0;
  double q_term = 0.0;
  double bad_term = 0.0;
  int bad = 0;
  bool bad_certified = true;
  double rd_bound = 0.0;  // C sqrt(Σ |q_g|²(|g|+1)^{C1'}) / η
  double lambda_q_norm = 0.0;
  double rho_q_norm = 0.0;  // ‖ρ_N(q)|_{1⊥}‖
  double norm_ratio = 0.0;
  int above_threshold = 0;  // eigenvalues of |Q_N| on 1⊥ above 2·C sqrt(…)
  double poly_error = 0.0;
  bool holds() const { return lhs <= (q_term + bad_term) * (1.0 + 1e-9) + 1e-12; }
};
nlohmann::json to_json(const AuditRecord& r);

/// Compares (1/(Nη))Tr(K f₁(P_N) K* f₂(P_N)) with ⟨k, Q_N k⟩/(Nη) plus the bad-set error, f_j = 4 s_{z_j,n}.
/// sys must be a full decomposition of ρ_N(p); diagonal scalar observables only.
AuditRecord main_bound_audit(ActionPtr action, const AlgebraElement& p, const EigenSystem& sys,
                             const Observable& obs, double E1, double E2, double eta, const AuditOptions& opt = {});

struct TraceQCheck {
  double L = 0.0;    // L_{I₁I₂} with I_j = [E_j − η, E_j + η]
  double rhs = 0.0;  // (4η²/|Λ_{I₁}|) Tr(K Im R^{z₁} K* Im R^{z₂})
  bool holds() const { return L <= rhs * (1.0 + 1e-9) + 1e-9; }
};
/// Uses dense resolvent matrices of P.
TraceQCheck trace_q_check(const Eigen::MatrixXd& P, const EigenSystem& sys, const SparseMatrix& K, double E1,
                          double E2, double eta);

}  // namespace qmix
