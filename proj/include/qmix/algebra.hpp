#pragma once

#include <map>
#include <vector>

#include <json.hpp>

#include "qmix/group.hpp"

namespace qmix {

/// Finitely supported p = Σ p_g g with r×r complex block coefficients.
class AlgebraElement {
 public:
  AlgebraElement() = default;
  AlgebraElement(SpecPtr spec, int block_size = 1);

  static AlgebraElement delta(SpecPtr spec, const GroupElement& g, const Block& coeff);
  static AlgebraElement delta(SpecPtr spec, const GroupElement& g, cplx coeff = 1.0);
  static AlgebraElement unit(SpecPtr spec, int block_size = 1);
  /// w · 1_S for the given generating set (repeated generators accumulate).
  static AlgebraElement indicator(SpecPtr spec, const GeneratingSet& S, double weight = 1.0);

  const GroupSpec& spec() const { return *spec_; }
  const SpecPtr& spec_ptr() const { return spec_; }
  int block_size() const { return r_; }
  const std::map<GroupElement, Block>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }

  Block coeff(const GroupElement& g) const;
  void add(const GroupElement& g, const Block& b);
  void add(const GroupElement& g, cplx c);
  /// Drops blocks with norm ≤ rel_tol · ℓ¹ norm.
  void prune(double rel_tol = 1e-14);
  bool is_self_adjoint(double tol = 1e-12) const;
  double max_abs_difference(const AlgebraElement& o) const;

  AlgebraElement& operator+=(const AlgebraElement& o);
  AlgebraElement& operator-=(const AlgebraElement& o);
  AlgebraElement& operator*=(cplx c);
  friend AlgebraElement operator+(AlgebraElement a, const AlgebraElement& b) { return a += b; }
  friend AlgebraElement operator-(AlgebraElement a, const AlgebraElement& b) { return a -= b; }
  friend AlgebraElement operator*(cplx c, AlgebraElement a) { return a *= c; }

 private:
  void check_compatible(const AlgebraElement& o) const;

  SpecPtr spec_;
  int r_ = 1;
  std::map<GroupElement, Block> terms_;
};

AlgebraElement convolve(const AlgebraElement& p, const AlgebraElement& q);
AlgebraElement star(const AlgebraElement& p);
/// f(p) for f = Σ_k coeffs[k] X^k, by Horner's scheme in the convolution algebra.
AlgebraElement apply_polynomial(const std::vector<double>& coeffs, const AlgebraElement& p);

struct AlgebraNorms {
  double l1 = 0.0;
  double l2 = 0.0;
  int diam = 1;
};
/// Block norms are spectral norms; diam is max(1, max word length over the support).
AlgebraNorms norms(const AlgebraElement& p, const GeneratingSet& S);
AlgebraNorms norms(const AlgebraElement& p);
double block_norm(const Block& b);
/// C · sqrt(Σ_g ‖p_g‖² (|g|+1)^{C1'}).
double rd_norm_bound(const AlgebraElement& p, double C1_prime, double C, const GeneratingSet& S);
double rd_norm_bound(const AlgebraElement& p, double C1_prime, double C);

/// [[word, re, im], ...] with re/im as row-major nested arrays (scalars when r == 1).
nlohmann::json to_json(const AlgebraElement& p);
AlgebraElement algebra_from_json(SpecPtr spec, const nlohmann::json& j);

}  // namespace qmix
