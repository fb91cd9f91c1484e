#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qmix/action.hpp"

namespace qmix {

/// Eigenpairs of a Hermitian operator, ascending. Real symmetric input keeps real vectors.
/// When built with a value range only the eigenpairs inside [lo, hi] are stored.
struct EigenSystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd real_vectors;
  Eigen::MatrixXcd complex_vectors;
  bool real = true;
  int dim = 0;  // N * r
  int N = 0;
  int r = 1;
  bool partial = false;
  double range_lo = 0.0, range_hi = 0.0;
  double max_residual = 0.0;  // max_α ‖P φ_α − λ_α φ_α‖ / max(1, ‖P‖)

  int size() const { return static_cast<int>(values.size()); }
  Eigen::VectorXcd vector(int alpha) const;
  /// Columns for the given indices (complex copy).
  Eigen::MatrixXcd columns(const std::vector<int>& idx) const;
  /// Λ_I = {α : λ_α ∈ [a, b]}; requires [a, b] inside the computed range when partial.
  std::vector<int> window(double a, double b) const;
};

struct EigenOptions {
  /// Restrict to eigenvalues in [lo, hi] (LAPACK ?syevr / ?heevr with range 'V').
  std::optional<std::pair<double, double>> range;
  /// Haar-rotate the basis inside each degenerate cluster.
  bool randomize_degenerate = false;
  std::uint64_t seed = 0;
  double degeneracy_tol = 1e-9;
  double hermitian_tol = 1e-12;
};

EigenSystem eigendecompose(const SchreierOperator& op, const EigenOptions& opt = {});
EigenSystem eigendecompose_dense(const Eigen::MatrixXcd& H, const EigenOptions& opt = {});
EigenSystem eigendecompose_dense(const Eigen::MatrixXd& H, const EigenOptions& opt = {});

/// Clusters of indices whose consecutive eigenvalue gaps are ≤ tol.
std::vector<std::vector<int>> degenerate_clusters(const EigenSystem& sys, double tol = 1e-9);
/// Haar-rotates every degenerate cluster in place.
void randomize_degenerate_blocks(EigenSystem& sys, std::uint64_t seed, double tol = 1e-9);

struct EmpiricalMeasure {
  std::vector<double> atoms;  // sorted eigenvalues, each with mass 1/size
  double cdf(double t) const;
  double mass(double a, double b) const;
};
EmpiricalMeasure empirical_measure(const EigenSystem& sys);
int count(const EigenSystem& sys, double a, double b);

struct PointMeasure {
  std::vector<double> points;
  std::vector<double> weights;
  double moment(int k) const;
};
/// μ^ψ with weights |⟨φ_α, ψ⟩|²; ψ is normalised first. Needs a full decomposition.
PointMeasure spectral_measure_at(const EigenSystem& sys, const Eigen::VectorXcd& psi);

/// max |⟨φ_α, φ_β⟩ − δ_αβ|.
double orthonormality_defect(const EigenSystem& sys);
/// max_α ‖P φ_α − λ_α φ_α‖.
double residual(const EigenSystem& sys, const SparseMatrix& P);

void write_eigenvalues_csv(const EigenSystem& sys, const std::string& path);
/// 16-byte header: 8-byte magic "QMIXEIG1", uint32 N, uint32 r; then complex128 column-major vectors.
void write_eigenvectors_binary(const EigenSystem& sys, const std::string& path);
Eigen::MatrixXcd read_eigenvectors_binary(const std::string& path, int& N, int& r);

}  // namespace qmix
