#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "qmix/action.hpp"

namespace qmix {

enum class ModelKind { RegularTree, FreeProduct, Lattice, TreeLift, Cartesian };

/// Green function z ↦ R^z(e, g) of a limiting operator λ(p) on ℓ²(Γ) ⊗ C^r.
/// Shell sums are indexed by word length with respect to the standard generators.
class ResolventModel {
 public:
  virtual ~ResolventModel() = default;

  virtual ModelKind kind() const = 0;
  virtual std::string name() const = 0;
  virtual int block_size() const { return 1; }
  virtual SpecPtr spec() const = 0;
  virtual AlgebraElement symbol() const = 0;
  /// Upper bound for ‖λ(p)‖.
  virtual double norm_bound() const = 0;

  virtual Block solve_diag(cplx z) const = 0;
  virtual Block offdiag(const GroupElement& g, cplx z) const = 0;

  /// S_ℓ = Σ_{|g|=ℓ} Σ_{entries (a,b)} Π_k v_k^{alpha_k} conj(v_k)^{beta_k}, v_k = R^{z_k}(e,g)(a,b),
  /// for ℓ = 0..L. Only meaningful for models whose off-diagonal blocks have one nonzero entry.
  virtual std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                            const std::vector<int>& beta, int L) const = 0;

  /// Σ_{|g|=ℓ} ‖R^z(e,g)‖_F².
  virtual std::vector<double> ward_shells(cplx z, int L) const;
  /// Σ_{|g|=ℓ} ‖Im R^z(e,g)‖_F⁴.
  virtual std::vector<double> fourth_shells(cplx z, int L) const;
  /// Σ_{|g|=ℓ} ‖R^z(e,g)‖_F⁴, used for tail bounds.
  virtual std::vector<double> modulus4_shells(cplx z, int L) const;
  /// Largest radius the shell sums may be asked for.
  virtual int max_radius() const { return 20000; }
};

using ModelPtr = std::shared_ptr<const ResolventModel>;

/// (d−1)w²g² + zg + 1 = 0; R(e,e) = −1/(z + d w² g); R(e,h) = R(e,e)(−wg)^{|h|}.
class RegularTreeModel : public ResolventModel {
 public:
  /// spec defaults to Z_2^{*d}; a free group F_{d/2} is also accepted.
  RegularTreeModel(int d, double w = 1.0, SpecPtr spec = nullptr);

  ModelKind kind() const override { return ModelKind::RegularTree; }
  std::string name() const override;
  SpecPtr spec() const override { return spec_; }
  AlgebraElement symbol() const override;
  double norm_bound() const override;
  Block solve_diag(cplx z) const override;
  Block offdiag(const GroupElement& g, cplx z) const override;
  std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                    const std::vector<int>& beta, int L) const override;
  int max_radius() const override { return 2000000; }

  int degree() const { return d_; }
  double weight() const { return w_; }
  /// Branch Green function g with Im g > 0 (or its reflection for Im z < 0).
  cplx branch(cplx z) const;
  cplx diag(cplx z) const;
  /// Per-step ratio ζ = −w g.
  cplx zeta(cplx z) const;
  std::vector<double> shell_sizes(int L) const;

 private:
  int d_;
  double w_;
  SpecPtr spec_;
};

/// Free product of finite groups with a real symmetric symbol supported on ∪Γ_i.
/// ζ(h) = R(h,e)/R(e,e) for h in a factor solves
///   zζ(h) = p_h + p_e ζ(h) + Σ_{w ≠ e,h} p_{hw⁻¹} ζ(w) + ζ(h) Σ_{j≠i} B_j,  B_j = Σ_v p_v ζ(v⁻¹),
/// and R(e, h_1⋯h_k) = R(e,e) Π ζ(h_j) with R(e,e) = 1/(p_e + Σ B_j − z).
class FreeProductModel : public ResolventModel {
 public:
  explicit FreeProductModel(const AlgebraElement& p);
  /// Unit weights on the standard generators.
  static std::shared_ptr<FreeProductModel> standard(SpecPtr spec, double w = 1.0);

  ModelKind kind() const override { return ModelKind::FreeProduct; }
  std::string name() const override;
  SpecPtr spec() const override { return spec_; }
  AlgebraElement symbol() const override { return p_; }
  double norm_bound() const override;
  Block solve_diag(cplx z) const override;
  Block offdiag(const GroupElement& g, cplx z) const override;
  std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                    const std::vector<int>& beta, int L) const override;

  struct Solution {
    cplx z;
    std::vector<std::vector<cplx>> zeta;  // zeta[f][a], zeta[f][identity] = 1
    cplx diag;
    double residual = 0.0;
    int newton_steps = 0;
    int continuation_steps = 0;
    bool fixed_point_fallback = false;
  };
  Solution solve_zeta_system(cplx z) const;

 private:
  SpecPtr spec_;
  AlgebraElement p_;
  double pe_ = 0.0;
  std::vector<std::vector<double>> weight_;  // weight_[f][a] = p_a for a ≠ identity
  std::vector<std::pair<int, int>> unknowns_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<double, double>, Solution> cache_;
};

/// Z^d with symbol Σ_i w_i (e_i + e_i⁻¹). d = 1 is closed form; d ≥ 2 integrates the
/// first d−1 angles by the trapezoid rule and the last coordinate in closed form.
class LatticeModel : public ResolventModel {
 public:
  explicit LatticeModel(int d, std::vector<double> weights = {});

  ModelKind kind() const override { return ModelKind::Lattice; }
  std::string name() const override;
  SpecPtr spec() const override { return spec_; }
  AlgebraElement symbol() const override;
  double norm_bound() const override;
  Block solve_diag(cplx z) const override;
  Block offdiag(const GroupElement& g, cplx z) const override;
  std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                    const std::vector<int>& beta, int L) const override;
  int max_radius() const override { return d_ == 1 ? 2000000 : 400; }

  cplx value(const std::vector<int>& n, cplx z) const;
  int quadrature_nodes(cplx z) const;

 private:
  int d_;
  std::vector<double> w_;
  SpecPtr spec_;
};

/// Universal cover of a weighted base graph H, realized on the free group over the edges of H.
/// Directed edge j = (e, ±): e+ runs v_e → u_e (letter g_e), e− runs u_e → v_e (letter g_e⁻¹).
///   Γ_j = −(z + Σ_{j' : tail j' = head j, j' ≠ reverse j} a_{j'}² Γ_{j'})⁻¹
///   R(e,e) = diag_c −(z + Σ_{j : tail j = c} a_j² Γ_j)⁻¹
/// R(e,g), g = w_1⋯w_k, is nonzero only at (tail of w_k, head of w_1) when the letters chain,
/// where it equals R(e,e)(c,c) Π_t (−a_{j_t} Γ_{j_t}).
class TreeLiftModel : public ResolventModel {
 public:
  TreeLiftModel(BaseGraph H, std::vector<double> weights = {});

  ModelKind kind() const override { return ModelKind::TreeLift; }
  std::string name() const override;
  int block_size() const override { return H_.vertices; }
  SpecPtr spec() const override { return spec_; }
  AlgebraElement symbol() const override;
  double norm_bound() const override;
  Block solve_diag(cplx z) const override;
  Block offdiag(const GroupElement& g, cplx z) const override;
  std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                    const std::vector<int>& beta, int L) const override;
  std::vector<double> fourth_shells(cplx z, int L) const override;
  std::vector<double> modulus4_shells(cplx z, int L) const override;

  const BaseGraph& base() const { return H_; }
  const std::vector<double>& weights() const { return a_; }
  /// Γ_j for the 2|E| directed edges, index 2e (e+) and 2e+1 (e−).
  std::vector<cplx> edge_greens(cplx z) const;
  int tail(int j) const;
  int head(int j) const;

 private:
  BaseGraph H_;
  std::vector<double> a_;
  SpecPtr spec_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<double, double>, std::vector<cplx>> cache_;
};

/// λ(p) = A ⊗ 1 + 1 ⊗ λ(q) on C^r ⊗ ℓ²(Γ) for a real symmetric r×r matrix A:
/// R^z(e,g) = Σ_k Π_k R_q^{z−μ_k}(e,g).
class CartesianModel : public ResolventModel {
 public:
  CartesianModel(Eigen::MatrixXd A, ModelPtr inner);

  ModelKind kind() const override { return ModelKind::Cartesian; }
  std::string name() const override;
  int block_size() const override { return static_cast<int>(A_.rows()); }
  SpecPtr spec() const override { return inner_->spec(); }
  AlgebraElement symbol() const override;
  double norm_bound() const override;
  Block solve_diag(cplx z) const override;
  Block offdiag(const GroupElement& g, cplx z) const override;
  std::vector<cplx> monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                    const std::vector<int>& beta, int L) const override;
  std::vector<double> ward_shells(cplx z, int L) const override;
  std::vector<double> fourth_shells(cplx z, int L) const override;
  std::vector<double> modulus4_shells(cplx z, int L) const override;
  int max_radius() const override { return inner_->max_radius(); }

  const std::vector<double>& eigenvalues() const { return mu_; }
  const std::vector<int>& multiplicities() const { return mult_; }

 private:
  Eigen::MatrixXd A_;
  ModelPtr inner_;
  std::vector<double> mu_;
  std::vector<int> mult_;
  std::vector<Eigen::MatrixXd> proj_;
};

// ---- generic queries ----

struct WardReport {
  cplx z;
  int radius = 0;
  double partial = 0.0;  // Σ_{|g|≤R} η ‖R(e,g)‖_F²
  double target = 0.0;   // Im tr R(e,e)
  double tail = 0.0;     // geometric tail estimate beyond R
  double contraction = 0.0;
  double residual = 0.0;  // |target − partial|
};
/// radius < 0 grows the radius until the tail estimate is below tol.
WardReport ward_check(const ResolventModel& m, cplx z, int radius = -1, double tol = 1e-12);

struct FourthMomentReport {
  cplx z;
  double C1_prime = 0.0;
  int radius = 0;
  double partial = 0.0;  // Σ_{|g|≤R} η² ‖Im R(e,g)‖_F⁴ |g|^{C1'}
  double tail = 0.0;
  double contraction = 0.0;
  bool tail_available = true;
  double total() const { return partial + tail; }
};
/// radius < 0: smallest radius whose tail bound is below rel_tol · partial.
FourthMomentReport fourth_moment(const ResolventModel& m, cplx z, double C1_prime, int radius = -1,
                                 double rel_tol = 1e-3);

struct AcReport {
  double min = 0.0, max = 0.0;
  double C0 = 0.0;  // max(1/min, max)
  std::vector<std::pair<double, double>> violations;  // (E, η) with Im tr R(e,e) ≤ floor
  bool ok() const { return violations.empty(); }
};
AcReport check_ac(const ResolventModel& m, const std::vector<double>& Es, const std::vector<double>& etas,
                  double floor = 1e-3);

struct DensityEstimate {
  double E = 0.0;
  double value = 0.0;
  double error = 0.0;
  std::vector<double> ladder;
  std::vector<double> samples;  // (1/(π r)) Im tr R^{E+iη}(e,e) per rung
  bool monotone_ladder = true;
};
/// Richardson (polynomial in η) extrapolation of the normalized density to η = 0.
DensityEstimate spectral_density(const ResolventModel& m, double E,
                                 const std::vector<double>& etas = {0.1, 0.05, 0.025, 0.0125});

struct ScanRow {
  double E = 0.0, eta = 0.0;
  double re = 0.0, im = 0.0;  // of tr R(e,e)
  double fourth = 0.0;
  double ward_residual = 0.0;
};
std::vector<ScanRow> resolvent_scan(const ResolventModel& m, const std::vector<double>& Es,
                                    const std::vector<double>& etas, double C1_prime, bool with_moments = true);
void write_scan_csv(const std::vector<ScanRow>& rows, const std::string& path);

/// Builds a model from a JSON description:
///   {"type":"RegularTree","d":3,"w":1}, {"type":"Lattice","d":1}, {"type":"FreeProduct","group":{...}},
///   {"type":"TreeLift","base":"0 1\n1 2\n","weights":[...]}, {"type":"Cartesian","A":[[...]],"inner":{...}}
ModelPtr model_from_json(const nlohmann::json& j);

}  // namespace qmix
