#include "qmix/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>

#include <lapacke.h>

#include "qmix/rng.hpp"

namespace qmix {

Eigen::VectorXcd EigenSystem::vector(int alpha) const {
  if (real) return real_vectors.col(alpha).cast<cplx>();
  return complex_vectors.col(alpha);
}

Eigen::MatrixXcd EigenSystem::columns(const std::vector<int>& idx) const {
  Eigen::MatrixXcd out(dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (real)
      out.col(static_cast<Eigen::Index>(k)) = real_vectors.col(idx[k]).cast<cplx>();
    else
      out.col(static_cast<Eigen::Index>(k)) = complex_vectors.col(idx[k]);
  }
  return out;
}

std::vector<int> EigenSystem::window(double a, double b) const {
  if (partial && (a < range_lo || b > range_hi))
    throw ArgumentError("window lies outside the computed eigenvalue range");
  std::vector<int> out;
  if (a > b) return out;
  const double* v = values.data();
  auto lo = std::lower_bound(v, v + values.size(), a);
  auto hi = std::upper_bound(v, v + values.size(), b);
  for (auto it = lo; it != hi; ++it) out.push_back(static_cast<int>(it - v));
  return out;
}

namespace {

void fix_signs(EigenSystem& sys) {
  for (int a = 0; a < sys.size(); ++a) {
    if (sys.real) {
      auto col = sys.real_vectors.col(a);
      const double tol = 1e-8 * col.cwiseAbs().maxCoeff();
      for (int i = 0; i < sys.dim; ++i)
        if (std::abs(col(i)) > tol) {
          if (col(i) < 0) col *= -1.0;
          break;
        }
    } else {
      auto col = sys.complex_vectors.col(a);
      const double tol = 1e-8 * col.cwiseAbs().maxCoeff();
      for (int i = 0; i < sys.dim; ++i)
        if (std::abs(col(i)) > tol) {
          col *= std::conj(col(i)) / std::abs(col(i));
          break;
        }
    }
  }
}

void finish(EigenSystem& sys, const EigenOptions& opt) {
  fix_signs(sys);
  if (opt.randomize_degenerate) randomize_degenerate_blocks(sys, opt.seed, opt.degeneracy_tol);
}

}  // namespace

EigenSystem eigendecompose_dense(const Eigen::MatrixXd& H, const EigenOptions& opt) {
  const int n = static_cast<int>(H.rows());
  if (H.cols() != n) throw ArgumentError("matrix must be square");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > opt.hermitian_tol * scale)
    throw ValidationError("matrix is not symmetric");
  EigenSystem sys;
  sys.dim = n;
  sys.N = n;
  sys.real = true;
  Eigen::MatrixXd A = H;
  if (!opt.range) {
    sys.values.resize(n);
    int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', n, A.data(), n, sys.values.data());
    if (info != 0) throw SolverError("dsyevd failed with info " + std::to_string(info));
    sys.real_vectors = std::move(A);
  } else {
    sys.partial = true;
    sys.range_lo = opt.range->first;
    sys.range_hi = opt.range->second;
    Eigen::VectorXd w(n);
    Eigen::MatrixXd Z(n, std::max(1, n));
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(std::max(1, n)));
    lapack_int m = 0;
    int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'V', 'U', n, A.data(), n, sys.range_lo, sys.range_hi, 0, 0, 0.0, &m,
                              w.data(), Z.data(), n, isuppz.data());
    if (info != 0) throw SolverError("dsyevr failed with info " + std::to_string(info));
    sys.values = w.head(m);
    sys.real_vectors = Z.leftCols(m);
  }
  finish(sys, opt);
  return sys;
}

EigenSystem eigendecompose_dense(const Eigen::MatrixXcd& H, const EigenOptions& opt) {
  const int n = static_cast<int>(H.rows());
  if (H.cols() != n) throw ArgumentError("matrix must be square");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.adjoint()).cwiseAbs().maxCoeff() > opt.hermitian_tol * scale) throw ValidationError("matrix is not Hermitian");
  if (H.imag().cwiseAbs().maxCoeff() == 0.0) return eigendecompose_dense(Eigen::MatrixXd(H.real()), opt);
  EigenSystem sys;
  sys.dim = n;
  sys.N = n;
  sys.real = false;
  Eigen::MatrixXcd A = H;
  auto* a = reinterpret_cast<lapack_complex_double*>(A.data());
  if (!opt.range) {
    sys.values.resize(n);
    int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'U', n, a, n, sys.values.data());
    if (info != 0) throw SolverError("zheevd failed with info " + std::to_string(info));
    sys.complex_vectors = std::move(A);
  } else {
    sys.partial = true;
    sys.range_lo = opt.range->first;
    sys.range_hi = opt.range->second;
    Eigen::VectorXd w(n);
    Eigen::MatrixXcd Z(n, std::max(1, n));
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(std::max(1, n)));
    lapack_int m = 0;
    int info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'V', 'V', 'U', n, a, n, sys.range_lo, sys.range_hi, 0, 0, 0.0, &m,
                              w.data(), reinterpret_cast<lapack_complex_double*>(Z.data()), n, isuppz.data());
    if (info != 0) throw SolverError("zheevr failed with info " + std::to_string(info));
    sys.values = w.head(m);
    sys.complex_vectors = Z.leftCols(m);
  }
  finish(sys, opt);
  return sys;
}

EigenSystem eigendecompose(const SchreierOperator& op, const EigenOptions& opt) {
  const int n = op.dim();
  double norm = 0.0;
  for (int k = 0; k < op.matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(op.matrix, k); it; ++it) norm = std::max(norm, std::abs(it.value()));
  if (op.hermitian_defect() > opt.hermitian_tol * std::max(1.0, norm))
    throw ValidationError("Schreier operator is not Hermitian");
  EigenSystem sys;
  if (op.is_real()) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k < op.matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(op.matrix, k); it; ++it) H(it.row(), it.col()) = it.value().real();
    sys = eigendecompose_dense(H, opt);
  } else {
    sys = eigendecompose_dense(op.dense(), opt);
  }
  sys.r = op.symbol.block_size();
  sys.N = n / sys.r;
  double op_norm = 0.0;
  for (int k = 0; k < op.matrix.outerSize(); ++k) {
    double row = 0.0;
    for (SparseMatrix::InnerIterator it(op.matrix, k); it; ++it) row += std::abs(it.value());
    op_norm = std::max(op_norm, row);
  }
  sys.max_residual = residual(sys, op.matrix) / std::max(1.0, op_norm);
  if (sys.max_residual > 1e-9) throw SolverError("eigen residual too large: " + std::to_string(sys.max_residual));
  return sys;
}

std::vector<std::vector<int>> degenerate_clusters(const EigenSystem& sys, double tol) {
  std::vector<std::vector<int>> out;
  for (int a = 0; a < sys.size(); ++a) {
    if (!out.empty() && sys.values(a) - sys.values(out.back().back()) <= tol)
      out.back().push_back(a);
    else
      out.push_back({a});
  }
  return out;
}

void randomize_degenerate_blocks(EigenSystem& sys, std::uint64_t seed, double tol) {
  CounterRng rng(seed, 0x48414152);
  for (const auto& c : degenerate_clusters(sys, tol)) {
    const int m = static_cast<int>(c.size());
    if (m < 2) continue;
    if (sys.real) {
      Eigen::MatrixXd G(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) G(i, j) = rng.normal();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
      Eigen::MatrixXd Q = qr.householderQ();
      Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int j = 0; j < m; ++j)
        if (R(j, j) < 0) Q.col(j) *= -1.0;
      Eigen::MatrixXd block = sys.real_vectors.middleCols(c.front(), m) * Q;
      sys.real_vectors.middleCols(c.front(), m) = block;
    } else {
      Eigen::MatrixXcd G(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) G(i, j) = cplx(rng.normal(), rng.normal());
      Eigen::HouseholderQR<Eigen::MatrixXcd> qr(G);
      Eigen::MatrixXcd Q = qr.householderQ();
      Eigen::MatrixXcd R = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int j = 0; j < m; ++j) Q.col(j) *= std::conj(R(j, j)) / std::abs(R(j, j));
      Eigen::MatrixXcd block = sys.complex_vectors.middleCols(c.front(), m) * Q;
      sys.complex_vectors.middleCols(c.front(), m) = block;
    }
  }
}

double EmpiricalMeasure::cdf(double t) const {
  if (atoms.empty()) return 0.0;
  return static_cast<double>(std::upper_bound(atoms.begin(), atoms.end(), t) - atoms.begin()) / atoms.size();
}

double EmpiricalMeasure::mass(double a, double b) const {
  if (atoms.empty() || a > b) return 0.0;
  auto lo = std::lower_bound(atoms.begin(), atoms.end(), a);
  auto hi = std::upper_bound(atoms.begin(), atoms.end(), b);
  return static_cast<double>(hi - lo) / atoms.size();
}

EmpiricalMeasure empirical_measure(const EigenSystem& sys) {
  if (sys.partial) throw ArgumentError("empirical measure needs the full spectrum");
  EmpiricalMeasure m;
  m.atoms.assign(sys.values.data(), sys.values.data() + sys.values.size());
  return m;
}

int count(const EigenSystem& sys, double a, double b) { return static_cast<int>(sys.window(a, b).size()); }

double PointMeasure::moment(int k) const {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += weights[i] * std::pow(points[i], k);
  return s;
}

PointMeasure spectral_measure_at(const EigenSystem& sys, const Eigen::VectorXcd& psi) {
  if (sys.partial) throw ArgumentError("spectral measure needs the full eigenbasis");
  if (psi.size() != sys.dim) throw ArgumentError("vector has wrong dimension");
  const double nrm = psi.norm();
  if (nrm == 0.0) throw ArgumentError("zero vector");
  Eigen::VectorXcd u = psi / nrm;
  Eigen::VectorXcd c = sys.real ? Eigen::VectorXcd(sys.real_vectors.transpose().cast<cplx>() * u)
                                : Eigen::VectorXcd(sys.complex_vectors.adjoint() * u);
  PointMeasure m;
  m.points.assign(sys.values.data(), sys.values.data() + sys.values.size());
  m.weights.resize(sys.size());
  for (int a = 0; a < sys.size(); ++a) m.weights[a] = std::norm(c(a));
  return m;
}

double orthonormality_defect(const EigenSystem& sys) {
  if (sys.real) {
    Eigen::MatrixXd G = sys.real_vectors.transpose() * sys.real_vectors;
    G.diagonal().array() -= 1.0;
    return G.cwiseAbs().maxCoeff();
  }
  Eigen::MatrixXcd G = sys.complex_vectors.adjoint() * sys.complex_vectors;
  G.diagonal().array() -= 1.0;
  return G.cwiseAbs().maxCoeff();
}

double residual(const EigenSystem& sys, const SparseMatrix& P) {
  double m = 0.0;
  for (int a = 0; a < sys.size(); ++a) {
    Eigen::VectorXcd v = sys.vector(a);
    Eigen::VectorXcd rv = P * v - sys.values(a) * v;
    m = std::max(m, rv.norm());
  }
  return m;
}

void write_eigenvalues_csv(const EigenSystem& sys, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open " + path);
  out << "index,value\n" << std::setprecision(17);
  for (int a = 0; a < sys.size(); ++a) out << a << "," << sys.values(a) << "\n";
}

void write_eigenvectors_binary(const EigenSystem& sys, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path);
  const char magic[8] = {'Q', 'M', 'I', 'X', 'E', 'I', 'G', '1'};
  const auto N = static_cast<std::uint32_t>(sys.N);
  const auto r = static_cast<std::uint32_t>(sys.r);
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(&N), 4);
  out.write(reinterpret_cast<const char*>(&r), 4);
  for (int a = 0; a < sys.size(); ++a) {
    Eigen::VectorXcd v = sys.vector(a);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(cplx) * v.size()));
  }
}

Eigen::MatrixXcd read_eigenvectors_binary(const std::string& path, int& N, int& r) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ArgumentError("cannot open " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  char magic[8];
  std::uint32_t n32 = 0, r32 = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&n32), 4);
  in.read(reinterpret_cast<char*>(&r32), 4);
  if (std::memcmp(magic, "QMIXEIG1", 8) != 0) throw ValidationError("not a qmix eigenvector file");
  N = static_cast<int>(n32);
  r = static_cast<int>(r32);
  const std::size_t dim = static_cast<std::size_t>(N) * r;
  const std::size_t cols = dim == 0 ? 0 : (bytes - 16) / (sizeof(cplx) * dim);
  Eigen::MatrixXcd V(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(V.data()), static_cast<std::streamsize>(sizeof(cplx) * dim * cols));
  return V;
}

}  // namespace qmix
