#pragma once

#include <string>
#include <vector>

#include "qmix/spectra.hpp"

namespace qmix {

/// T-local observable K on C^N ⊗ C^r.
///   Diagonal: K = diag(values), values indexed x * r + i.
///   TLocal:   K(x, y) = Σ_{t ∈ T} kernel[t][x] 1(x = t.y), the kernel split canonically by m_t(x).
struct Observable {
  enum class Kind { Diagonal, TLocal };
  Kind kind = Kind::Diagonal;
  std::string id;
  int N = 0;
  int r = 1;
  Eigen::VectorXcd values;
  std::vector<GroupElement> T;
  std::vector<std::vector<Block>> kernel;
  double declared_bound = 1.0;
};

Observable diagonal_observable(const Eigen::VectorXcd& values, int r = 1, std::string id = "diagonal");
/// Canonical kernel of a T-local matrix: a_t(x) = K(x, t⁻¹.x) / m_t(x), m_t(x) = #{s ∈ T : s⁻¹.x = t⁻¹.x}.
/// Throws ValidationError when K has entries outside the T-neighbourhood.
Observable tlocal_observable(const PermutationAction& action, const std::vector<GroupElement>& T,
                             const SparseMatrix& K, int r = 1, std::string id = "tlocal");
SparseMatrix to_matrix(const Observable& obs, const PermutationAction& action);
/// ‖K‖_{1,∞} = max_{x,y} ‖K(x,y)‖_F.
double sup_norm(const Observable& obs, const PermutationAction& action);

/// k_{N,g} = (1/N) Σ_x K(g.x, x) for g ∈ T ({e} for diagonal observables).
AlgebraElement average_symbol(const Observable& obs, const PermutationAction& action);
/// ⟨K_N⟩ = ρ_N(k_N).
SparseMatrix average_matrix(const Observable& obs, const PermutationAction& action);

enum class Centering {
  Symbol,  // K − ⟨K_N⟩
  Scalar,  // K − (mean of the diagonal) Id
  None
};
SparseMatrix centered_matrix(const Observable& obs, const PermutationAction& action, Centering c = Centering::Symbol);

/// L_{IJ} = (1/|Λ_I|) Σ_{α∈Λ_I, β∈Λ_J} |⟨φ_β, K φ_α⟩|², 0 when Λ_I is empty.
double moment_LIJ(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double J_lo, double J_hi);
/// L^{τ,η}_I: pairs α, β ∈ Λ_I with |λ_β − λ_α − τ| ≤ η.
double moment_L_tau_eta(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double tau,
                        double eta);

struct MixToErgo {
  double lhs = 0.0;  // L^{τ,η}_I
  double rhs = 0.0;  // max_{E ∈ I} L_{J_E^η, J_{E+τ}^{2η} ∩ I}
  double argmax = 0.0;
  bool holds() const { return lhs <= rhs * (1.0 + 1e-12) + 1e-14; }
};
MixToErgo mix_to_ergo_check(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double tau,
                            double eta);

/// (1/|Λ_I|) Σ_{α∈Λ_I} |⟨φ_α, K φ_α⟩ − centering|².
double qe_statistic(const EigenSystem& sys, const Observable& obs, const PermutationAction& action, double I_lo,
                    double I_hi, Centering c = Centering::Symbol);
/// L_{J_{E1}^η, J_{E2}^η} of the centered observable.
double qm_statistic(const EigenSystem& sys, const Observable& obs, const PermutationAction& action, double E1,
                    double E2, double eta, Centering c = Centering::Symbol);

/// σ_N(g) = (1/N) Σ_x (a(x) − ⟨a⟩) conj(a(g.x) − ⟨a⟩) for r = 1.
cplx empirical_covariance(const Observable& obs, const PermutationAction& action, const GroupElement& g);
/// ‖(1/N) Σ_x conj(a(x) − ⟨a⟩) ⊗ (a(g.x) − ⟨a⟩)‖_op for any r.
double empirical_covariance_norm(const Observable& obs, const PermutationAction& action, const GroupElement& g);

enum class IidLaw { Sign, Disc };
Observable iid_observable(int N, std::uint64_t seed, IidLaw law = IidLaw::Sign, int r = 1);
/// +1 on ⌊ℓ/2⌋ consecutive sites of every ρ_N(g)-cycle of length ℓ, −1 elsewhere.
Observable cycle_sign_observable(const PermutationAction& action, const GroupElement& g);
/// a(n) = exp(2πi n·u / M) on a torus action.
Observable fourier_observable(const PermutationAction& torus, const std::vector<int>& u);
/// +1 on copies 0 and 1, −1 on copies 2 and 3, 0 elsewhere (glued-copies metadata).
Observable block_indicator_observable(const PermutationAction& glued);
/// a(x, i) = signs[i] on C^N ⊗ C^r.
Observable color_sign_observable(int N, const std::vector<double>& signs);

struct StatRow {
  int N = 0;
  double eta = 0.0, E1 = 0.0, E2 = 0.0;
  double statistic = 0.0;
  std::string observable;
  std::uint64_t seed = 0;
};
void write_stats_csv(const std::vector<StatRow>& rows, const std::string& path);

}  // namespace qmix
