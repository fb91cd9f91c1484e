#include "qmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "qmix/rng.hpp"

namespace qmix {

namespace {

ActionPtr borrow(const PermutationAction& action) { return ActionPtr(ActionPtr{}, &action); }

void check_shape(const Observable& obs, const PermutationAction& action) {
  if (obs.N != action.N()) throw ArgumentError("observable and action have different sizes");
}

void check_shape(const EigenSystem& sys, const SparseMatrix& K) {
  if (K.rows() != sys.dim || K.cols() != sys.dim) throw ArgumentError("observable and eigensystem have different sizes");
}

// ⟨φ_b, K φ_a⟩ for a ∈ A (columns), b ∈ B (rows).
Eigen::MatrixXcd overlap(const EigenSystem& sys, const SparseMatrix& K, const std::vector<int>& A,
                         const std::vector<int>& B) {
  const Eigen::MatrixXcd PA = sys.columns(A);
  const Eigen::MatrixXcd KPA = K * PA;
  if (A == B) return PA.adjoint() * KPA;
  return sys.columns(B).adjoint() * KPA;
}

}  // namespace

Observable diagonal_observable(const Eigen::VectorXcd& values, int r, std::string id) {
  if (r < 1 || values.size() % r != 0) throw ArgumentError("diagonal observable length must be a multiple of r");
  Observable o;
  o.kind = Observable::Kind::Diagonal;
  o.id = std::move(id);
  o.r = r;
  o.N = static_cast<int>(values.size() / r);
  o.values = values;
  o.declared_bound = values.size() ? values.cwiseAbs().maxCoeff() : 0.0;
  return o;
}

Observable tlocal_observable(const PermutationAction& action, const std::vector<GroupElement>& T,
                             const SparseMatrix& K, int r, std::string id) {
  const int N = action.N();
  if (K.rows() != N * r || K.cols() != N * r) throw ArgumentError("matrix size does not match the action");
  const auto& spec = action.spec();
  std::vector<std::vector<int>> inv_perm;  // inv_perm[t][x] = t⁻¹.x
  for (const auto& t : T) inv_perm.push_back(action.permutation_of(inverse(spec, t)));
  Observable o;
  o.kind = Observable::Kind::TLocal;
  o.id = std::move(id);
  o.N = N;
  o.r = r;
  o.T = T;
  o.kernel.assign(T.size(), std::vector<Block>(N, Block::Zero(r, r)));
  for (std::size_t t = 0; t < T.size(); ++t) {
    for (int x = 0; x < N; ++x) {
      const int y = inv_perm[t][x];
      int m = 0;
      for (std::size_t s = 0; s < T.size(); ++s)
        if (inv_perm[s][x] == y) ++m;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) o.kernel[t][x](i, j) = K.coeff(x * r + i, y * r + j) / static_cast<double>(m);
    }
  }
  // every nonzero must be covered by some t
  for (int row = 0; row < K.outerSize(); ++row) {
    const int x = row / r;
    for (SparseMatrix::InnerIterator it(K, row); it; ++it) {
      if (it.value() == cplx(0.0)) continue;
      const int y = static_cast<int>(it.col()) / r;
      bool covered = false;
      for (std::size_t t = 0; t < T.size() && !covered; ++t) covered = inv_perm[t][x] == y;
      if (!covered) throw ValidationError("matrix is not T-local");
    }
  }
  o.declared_bound = sup_norm(o, action);
  return o;
}

SparseMatrix to_matrix(const Observable& obs, const PermutationAction& action) {
  check_shape(obs, action);
  const int N = obs.N, r = obs.r;
  std::vector<Eigen::Triplet<cplx>> trip;
  if (obs.kind == Observable::Kind::Diagonal) {
    for (int k = 0; k < N * r; ++k)
      if (obs.values[k] != cplx(0.0)) trip.emplace_back(k, k, obs.values[k]);
  } else {
    const auto& spec = action.spec();
    for (std::size_t t = 0; t < obs.T.size(); ++t) {
      const auto inv = action.permutation_of(inverse(spec, obs.T[t]));
      for (int x = 0; x < N; ++x)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j) {
            const cplx v = obs.kernel[t][x](i, j);
            if (v != cplx(0.0)) trip.emplace_back(x * r + i, inv[x] * r + j, v);
          }
    }
  }
  SparseMatrix K(N * r, N * r);
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  return K;
}

double sup_norm(const Observable& obs, const PermutationAction& action) {
  const int r = obs.r;
  if (obs.kind == Observable::Kind::Diagonal) {
    double m = 0.0;
    for (int x = 0; x < obs.N; ++x) m = std::max(m, obs.values.segment(x * r, r).norm());
    return m;
  }
  const SparseMatrix K = to_matrix(obs, action);
  std::map<std::pair<int, int>, double> blocks;
  for (int row = 0; row < K.outerSize(); ++row)
    for (SparseMatrix::InnerIterator it(K, row); it; ++it)
      blocks[{row / r, static_cast<int>(it.col()) / r}] += std::norm(it.value());
  double m = 0.0;
  for (const auto& [k, v] : blocks) m = std::max(m, std::sqrt(v));
  return m;
}

AlgebraElement average_symbol(const Observable& obs, const PermutationAction& action) {
  check_shape(obs, action);
  const int N = obs.N, r = obs.r;
  const auto& spec = action.spec();
  AlgebraElement k(action.spec_ptr(), r);
  if (obs.kind == Observable::Kind::Diagonal) {
    Block b = Block::Zero(r, r);
    for (int x = 0; x < N; ++x)
      for (int i = 0; i < r; ++i) b(i, i) += obs.values[x * r + i];
    k.add(identity(spec), Block(b / static_cast<double>(N)));
    k.prune(0.0);
    return k;
  }
  const SparseMatrix K = to_matrix(obs, action);
  std::set<GroupElement> seen;
  for (const auto& g : obs.T) {
    if (!seen.insert(g).second) continue;
    const auto perm = action.permutation_of(g);
    Block b = Block::Zero(r, r);
    for (int x = 0; x < N; ++x)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) b(i, j) += K.coeff(perm[x] * r + i, x * r + j);
    k.add(g, Block(b / static_cast<double>(N)));
  }
  k.prune(0.0);
  return k;
}

SparseMatrix average_matrix(const Observable& obs, const PermutationAction& action) {
  const AlgebraElement k = average_symbol(obs, action);
  if (k.empty()) return SparseMatrix(obs.N * obs.r, obs.N * obs.r);
  return representation_matrix(borrow(action), k).matrix;
}

SparseMatrix centered_matrix(const Observable& obs, const PermutationAction& action, Centering c) {
  SparseMatrix K = to_matrix(obs, action);
  if (c == Centering::None) return K;
  if (c == Centering::Symbol) {
    SparseMatrix out = K - average_matrix(obs, action);
    out.prune(cplx(0.0));
    return out;
  }
  const int n = obs.N * obs.r;
  cplx mean = 0.0;
  for (int k = 0; k < n; ++k) mean += K.coeff(k, k);
  mean /= static_cast<double>(n);
  SparseMatrix I(n, n);
  I.setIdentity();
  SparseMatrix out = K - mean * I;
  out.prune(cplx(0.0));
  return out;
}

double moment_LIJ(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double J_lo, double J_hi) {
  check_shape(sys, K);
  const auto A = sys.window(I_lo, I_hi);
  const auto B = sys.window(J_lo, J_hi);
  if (A.empty() || B.empty()) return 0.0;
  return overlap(sys, K, A, B).squaredNorm() / static_cast<double>(A.size());
}

double moment_L_tau_eta(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double tau,
                        double eta) {
  check_shape(sys, K);
  const auto A = sys.window(I_lo, I_hi);
  if (A.empty()) return 0.0;
  const Eigen::MatrixXcd M = overlap(sys, K, A, A);
  double s = 0.0;
  for (std::size_t a = 0; a < A.size(); ++a)
    for (std::size_t b = 0; b < A.size(); ++b)
      if (std::abs(sys.values[A[b]] - sys.values[A[a]] - tau) <= eta) s += std::norm(M(b, a));
  return s / static_cast<double>(A.size());
}

MixToErgo mix_to_ergo_check(const EigenSystem& sys, const SparseMatrix& K, double I_lo, double I_hi, double tau,
                            double eta) {
  check_shape(sys, K);
  MixToErgo out;
  out.lhs = moment_L_tau_eta(sys, K, I_lo, I_hi, tau, eta);
  const auto A = sys.window(I_lo, I_hi);
  if (A.empty()) return out;
  const Eigen::MatrixXcd M = overlap(sys, K, A, A);
  const Eigen::MatrixXd W = M.cwiseAbs2();
  std::vector<double> lam(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) lam[k] = sys.values[A[k]];
  // L(E) is piecewise constant; its breakpoints are where a window edge meets an eigenvalue
  std::vector<double> bp{I_lo, I_hi};
  for (double l : lam)
    for (double e : {l - eta, l + eta, l - tau - 2 * eta, l - tau + 2 * eta})
      if (e >= I_lo && e <= I_hi) bp.push_back(e);
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
  std::vector<double> cand = bp;
  for (std::size_t k = 1; k < bp.size(); ++k) cand.push_back(0.5 * (bp[k - 1] + bp[k]));
  for (double E : cand) {
    double s = 0.0;
    int na = 0;
    for (std::size_t a = 0; a < lam.size(); ++a) {
      if (std::abs(lam[a] - E) > eta) continue;
      ++na;
      for (std::size_t b = 0; b < lam.size(); ++b)
        if (std::abs(lam[b] - E - tau) <= 2 * eta) s += W(b, a);
    }
    if (na == 0) continue;
    const double L = s / na;
    if (L > out.rhs) {
      out.rhs = L;
      out.argmax = E;
    }
  }
  return out;
}

double qe_statistic(const EigenSystem& sys, const Observable& obs, const PermutationAction& action, double I_lo,
                    double I_hi, Centering c) {
  const SparseMatrix K = centered_matrix(obs, action, c);
  check_shape(sys, K);
  const auto A = sys.window(I_lo, I_hi);
  if (A.empty()) return 0.0;
  double s = 0.0;
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < A.size(); start += chunk) {
    std::vector<int> part(A.begin() + start, A.begin() + std::min(A.size(), start + chunk));
    const Eigen::MatrixXcd P = sys.columns(part);
    const Eigen::MatrixXcd KP = K * P;
    for (Eigen::Index k = 0; k < P.cols(); ++k) s += std::norm(P.col(k).dot(KP.col(k)));
  }
  return s / static_cast<double>(A.size());
}

double qm_statistic(const EigenSystem& sys, const Observable& obs, const PermutationAction& action, double E1,
                    double E2, double eta, Centering c) {
  if (!(eta > 0.0)) throw PreconditionError("quantum mixing statistic needs η > 0");
  const SparseMatrix K = centered_matrix(obs, action, c);
  return moment_LIJ(sys, K, E1 - eta, E1 + eta, E2 - eta, E2 + eta);
}

namespace {

Eigen::VectorXcd site_values(const Observable& obs) {
  if (obs.kind != Observable::Kind::Diagonal) throw ArgumentError("covariance needs a diagonal observable");
  return obs.values;
}

}  // namespace

cplx empirical_covariance(const Observable& obs, const PermutationAction& action, const GroupElement& g) {
  check_shape(obs, action);
  if (obs.r != 1) throw ArgumentError("scalar covariance needs r = 1");
  const Eigen::VectorXcd a = site_values(obs);
  const cplx mean = a.mean();
  const auto perm = action.permutation_of(g);
  cplx s = 0.0;
  for (int x = 0; x < obs.N; ++x) s += (a[x] - mean) * std::conj(a[perm[x]] - mean);
  return s / static_cast<double>(obs.N);
}

double empirical_covariance_norm(const Observable& obs, const PermutationAction& action, const GroupElement& g) {
  check_shape(obs, action);
  const int r = obs.r, N = obs.N;
  const Eigen::VectorXcd a = site_values(obs);
  Eigen::VectorXcd mean = Eigen::VectorXcd::Zero(r);
  for (int x = 0; x < N; ++x) mean += a.segment(x * r, r);
  mean /= static_cast<double>(N);
  const auto perm = action.permutation_of(g);
  Eigen::MatrixXcd C = Eigen::MatrixXcd::Zero(r, r);
  for (int x = 0; x < N; ++x) {
    const Eigen::VectorXcd u = (a.segment(x * r, r) - mean).conjugate();
    const Eigen::VectorXcd v = a.segment(perm[x] * r, r) - mean;
    C += u * v.transpose();
  }
  C /= static_cast<double>(N);
  return block_norm(C);
}

Observable iid_observable(int N, std::uint64_t seed, IidLaw law, int r) {
  CounterRng rng(seed, 0x494944);
  Eigen::VectorXcd v(static_cast<Eigen::Index>(N) * r);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (law == IidLaw::Sign) {
      v[k] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    } else {
      const double rad = std::sqrt(rng.uniform());
      v[k] = std::polar(rad, 2.0 * std::numbers::pi * rng.uniform());
    }
  }
  return diagonal_observable(v, r, law == IidLaw::Sign ? "iid-sign" : "iid-disc");
}

Observable cycle_sign_observable(const PermutationAction& action, const GroupElement& g) {
  const int N = action.N();
  const auto perm = action.permutation_of(g);
  Eigen::VectorXcd v = Eigen::VectorXcd::Constant(N, -1.0);
  std::vector<char> seen(N, 0);
  for (int x0 = 0; x0 < N; ++x0) {
    if (seen[x0]) continue;
    std::vector<int> cycle;
    for (int x = x0; !seen[x]; x = perm[x]) {
      seen[x] = 1;
      cycle.push_back(x);
    }
    const std::size_t half = cycle.size() / 2;
    for (std::size_t k = 0; k < half; ++k) v[cycle[k]] = 1.0;
  }
  return diagonal_observable(v, 1, "cycle-sign");
}

Observable fourier_observable(const PermutationAction& torus, const std::vector<int>& u) {
  const auto& meta = torus.metadata();
  if (!meta.contains("construction") || meta["construction"] != "torus")
    throw ArgumentError("fourier observable needs a torus action");
  const int M = meta["M"], d = meta["d"];
  if (static_cast<int>(u.size()) != d) throw ArgumentError("fourier mode has the wrong dimension");
  const int N = torus.N();
  Eigen::VectorXcd v(N);
  for (int x = 0; x < N; ++x) {
    long phase = 0;
    int rem = x;
    for (int i = 0; i < d; ++i) {
      phase += static_cast<long>(rem % M) * u[i];
      rem /= M;
    }
    const long q = ((phase % M) + M) % M;
    v[x] = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(q) / M);
  }
  return diagonal_observable(v, 1, "fourier");
}

Observable block_indicator_observable(const PermutationAction& glued) {
  const auto& meta = glued.metadata();
  if (!meta.contains("copy_of")) throw ArgumentError("block indicator needs a glued-copies action");
  const auto copy_of = meta["copy_of"].get<std::vector<int>>();
  if (meta["copies"].get<int>() < 4) throw ArgumentError("block indicator needs at least four copies");
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(glued.N());
  for (int x = 0; x < glued.N(); ++x) {
    const int c = copy_of[x];
    if (c == 0 || c == 1) v[x] = 1.0;
    else if (c == 2 || c == 3) v[x] = -1.0;
  }
  return diagonal_observable(v, 1, "block-indicator");
}

Observable color_sign_observable(int N, const std::vector<double>& signs) {
  const int r = static_cast<int>(signs.size());
  Eigen::VectorXcd v(static_cast<Eigen::Index>(N) * r);
  for (int x = 0; x < N; ++x)
    for (int i = 0; i < r; ++i) v[x * r + i] = signs[i];
  return diagonal_observable(v, r, "color-sign");
}

void write_stats_csv(const std::vector<StatRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out.precision(17);
  out << "N,eta,E1,E2,statistic,observable,seed\n";
  for (const auto& r : rows)
    out << r.N << ',' << r.eta << ',' << r.E1 << ',' << r.E2 << ',' << r.statistic << ',' << r.observable << ','
        << r.seed << '\n';
}

}  // namespace qmix
