#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "qmix/stats.hpp"

using namespace qmix;

namespace {

struct Fixture {
  ActionPtr action;
  AlgebraElement p;
  EigenSystem sys;
  Eigen::MatrixXd dense;
};

Fixture matching_fixture(int N, std::uint64_t seed) {
  auto a = random_matching_action(N, 3, seed);
  const auto& spec = a->spec_ptr();
  auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  auto op = representation_matrix(a, p);
  return {a, p, eigendecompose(op), op.dense().real()};
}

Fixture torus_fixture(int M, int d) {
  auto a = torus_action(M, d);
  const auto& spec = a->spec_ptr();
  auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  auto op = representation_matrix(a, p);
  return {a, p, eigendecompose(op), op.dense().real()};
}

Eigen::VectorXcd random_values(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v[i] = cplx(g(rng), g(rng));
  return v;
}

SparseMatrix diag_matrix(const Eigen::VectorXcd& v) {
  SparseMatrix K(v.size(), v.size());
  for (int i = 0; i < v.size(); ++i) K.insert(i, i) = v[i];
  K.makeCompressed();
  return K;
}

// a sparse non-Hermitian matrix: diagonal plus a weighted shift along one generator
SparseMatrix tlocal_matrix(const PermutationAction& a, std::uint64_t seed) {
  const auto v = random_values(2 * a.N(), seed);
  const auto perm = a.permutation_of(generator(a.spec(), 1));
  std::vector<Eigen::Triplet<cplx>> t;
  for (int x = 0; x < a.N(); ++x) {
    t.emplace_back(x, x, v[x]);
    t.emplace_back(perm[x], x, v[a.N() + x]);
  }
  SparseMatrix K(a.N(), a.N());
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

// (1/|Λ_I|) Tr(K 1_I(P) K* 1_J(P)) from an independent dense eigensolver
double trace_oracle(const Eigen::MatrixXd& P, const SparseMatrix& K, double a, double b, double c, double d) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  const int n = static_cast<int>(P.rows());
  Eigen::MatrixXcd PI = Eigen::MatrixXcd::Zero(n, n), PJ = PI;
  int nI = 0;
  for (int k = 0; k < n; ++k) {
    const double l = es.eigenvalues()[k];
    const Eigen::VectorXcd v = es.eigenvectors().col(k).cast<cplx>();
    if (l >= a && l <= b) {
      PI += v * v.adjoint();
      ++nI;
    }
    if (l >= c && l <= d) PJ += v * v.adjoint();
  }
  if (nI == 0) return 0.0;
  const Eigen::MatrixXcd Kd(K);
  return (Kd * PI * Kd.adjoint() * PJ).trace().real() / nI;
}

}  // namespace

TEST_CASE("moment L_IJ: identity and disjoint windows") {
  const auto f = matching_fixture(120, 1);
  const int n = f.sys.dim;
  SparseMatrix I(n, n);
  I.setIdentity();
  CHECK(moment_LIJ(f.sys, I, -10, 10, -10, 10) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(moment_LIJ(f.sys, I, -3, 0, 0.5, 3) == doctest::Approx(0.0).scale(1.0).epsilon(1e-20));
  CHECK(moment_LIJ(f.sys, I, 5, 6, -10, 10) == 0.0);
}

TEST_CASE("moment L_IJ equals the spectral-projector trace") {
  const auto f = matching_fixture(150, 2);
  const auto K = tlocal_matrix(*f.action, 3);
  for (auto [a, b, c, d] : std::vector<std::array<double, 4>>{{-0.97, 1.03, -3.1, 3.1}, {0.01, 2.01, -2.01, 0.01}, {-2.9, -2.03, 1.01, 2.9}}) {
    CAPTURE(a);
    CAPTURE(c);
    CHECK(std::abs(moment_LIJ(f.sys, K, a, b, c, d) - trace_oracle(f.dense, K, a, b, c, d)) < 1e-10);
  }
}

TEST_CASE("moment L_IJ is invariant under rotation inside degenerate clusters") {
  // the torus has large multiplicities
  auto f = torus_fixture(12, 2);
  REQUIRE(std::any_of(degenerate_clusters(f.sys).begin(), degenerate_clusters(f.sys).end(),
                      [](const auto& c) { return c.size() > 2; }));
  const auto K = tlocal_matrix(*f.action, 5);
  const auto D = diag_matrix(random_values(f.sys.dim, 6));
  std::vector<double> before;
  for (const auto* M : {&K, &D}) {
    before.push_back(moment_LIJ(f.sys, *M, -0.93, 1.37, -4.1, 0.21));
    before.push_back(moment_L_tau_eta(f.sys, *M, -2.03, 2.03, 0.43, 0.29));
  }
  randomize_degenerate_blocks(f.sys, 99);
  CHECK(orthonormality_defect(f.sys) < 1e-12);
  std::size_t k = 0;
  for (const auto* M : {&K, &D}) {
    CHECK(std::abs(moment_LIJ(f.sys, *M, -0.93, 1.37, -4.1, 0.21) - before[k++]) < 1e-9);
    CHECK(std::abs(moment_L_tau_eta(f.sys, *M, -2.03, 2.03, 0.43, 0.29) - before[k++]) < 1e-9);
  }
}

TEST_CASE("completeness: L_{I,R} is the mean of |K phi|^2") {
  const auto f = matching_fixture(140, 7);
  const auto K = tlocal_matrix(*f.action, 8);
  const auto idx = f.sys.window(-1.0, 2.0);
  REQUIRE(!idx.empty());
  double s = 0.0;
  for (int a : idx) s += (K * f.sys.vector(a)).squaredNorm();
  CHECK(moment_LIJ(f.sys, K, -1.0, 2.0, -1e3, 1e3) == doctest::Approx(s / idx.size()).epsilon(1e-12));
}

TEST_CASE("small-scale mixing bounds the tau-eta moment") {
  const auto f = matching_fixture(200, 11);
  const auto K = tlocal_matrix(*f.action, 12);
  const auto D = diag_matrix(random_values(f.sys.dim, 13));
  for (const auto* M : {&K, &D})
    for (double tau : {0.0, 0.3, 1.1})
      for (double eta : {0.05, 0.2, 0.6}) {
        const auto r = mix_to_ergo_check(f.sys, *M, -2.0, 2.0, tau, eta);
        CAPTURE(tau);
        CAPTURE(eta);
        CHECK(r.holds());
        CHECK(r.lhs >= 0.0);
      }
}

TEST_CASE("qe statistic: diagonal form and the tau-eta moment at zero") {
  const auto f = matching_fixture(160, 21);
  for (const auto& c : degenerate_clusters(f.sys)) REQUIRE(c.size() == 1);
  const auto obs = iid_observable(f.action->N(), 4, IidLaw::Disc);
  const cplx mean = obs.values.mean();
  const auto idx = f.sys.window(-1.5, 1.5);
  double direct = 0.0;
  for (int a : idx) {
    const Eigen::VectorXcd v = f.sys.vector(a);
    direct += std::norm((v.cwiseAbs2().cast<cplx>().array() * (obs.values.array() - mean)).sum());
  }
  direct /= idx.size();
  const double qe = qe_statistic(f.sys, obs, *f.action, -1.5, 1.5);
  CHECK(qe == doctest::Approx(direct).epsilon(1e-10));
  const auto Kc = centered_matrix(obs, *f.action);
  CHECK(moment_L_tau_eta(f.sys, Kc, -1.5, 1.5, 0.0, 0.0) == doctest::Approx(qe).epsilon(1e-10));
}

TEST_CASE("centering removes constants") {
  const auto f = matching_fixture(100, 31);
  const auto obs = diagonal_observable(Eigen::VectorXcd::Constant(f.action->N(), cplx(2.5, -1.0)));
  for (auto c : {Centering::Symbol, Centering::Scalar}) {
    CHECK(centered_matrix(obs, *f.action, c).norm() == 0.0);
    CHECK(qe_statistic(f.sys, obs, *f.action, -3, 3, c) == 0.0);
    CHECK(qm_statistic(f.sys, obs, *f.action, 0.0, 0.5, 0.3, c) == 0.0);
  }
  CHECK(qe_statistic(f.sys, obs, *f.action, -3, 3, Centering::None) == doctest::Approx(std::norm(cplx(2.5, -1.0))));
}

TEST_CASE("average symbol") {
  const auto f = torus_fixture(10, 2);
  const auto& spec = f.action->spec();
  const int N = f.action->N();
  Eigen::VectorXcd v = random_values(N, 41);
  v.array() -= v.mean();
  const auto zero = average_symbol(diagonal_observable(v), *f.action);
  CHECK(zero.coeff(identity(spec)).norm() < 1e-14);

  const auto c = average_symbol(diagonal_observable(Eigen::VectorXcd::Constant(N, 3.0)), *f.action);
  CHECK(std::abs(c.coeff(identity(spec))(0, 0) - 3.0) < 1e-14);
  CHECK(c.terms().size() == 1);

  // K = rho_N(p) is T-local with T = supp p, and its average symbol is p
  std::vector<GroupElement> T;
  for (const auto& [g, b] : f.p.terms()) T.push_back(g);
  const auto rep = representation_matrix(f.action, f.p);
  const auto K = tlocal_observable(*f.action, T, rep.matrix);
  const auto k = average_symbol(K, *f.action);
  for (const auto& g : T) CHECK(std::abs(k.coeff(g)(0, 0) - f.p.coeff(g)(0, 0)) < 1e-14);
  CHECK((Eigen::MatrixXcd(to_matrix(K, *f.action)) - rep.dense()).norm() < 1e-14);
  CHECK((Eigen::MatrixXcd(average_matrix(K, *f.action)) - rep.dense()).norm() < 1e-14);
  CHECK(sup_norm(K, *f.action) == doctest::Approx(1.0));
}

TEST_CASE("T-local kernels use the canonical multiplicity split") {
  // on Z/2 the generator and its inverse act the same way, so m_t(x) = 2
  auto a = torus_action(2, 1);
  const auto& spec = a->spec_ptr();
  auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  const auto rep = representation_matrix(a, p);
  std::vector<GroupElement> T;
  for (const auto& [g, b] : p.terms()) T.push_back(g);
  const auto K = tlocal_observable(*a, T, rep.matrix);
  for (const auto& col : K.kernel)
    for (const auto& b : col) CHECK(std::abs(b(0, 0) - 1.0) < 1e-15);
  CHECK((Eigen::MatrixXcd(to_matrix(K, *a)) - rep.dense()).norm() < 1e-15);

  auto big = torus_action(6, 1);
  SparseMatrix far(6, 6);
  far.insert(0, 3) = 1.0;
  CHECK_THROWS_AS(tlocal_observable(*big, {identity(big->spec())}, far), ValidationError);
}

TEST_CASE("empirical covariance") {
  auto torus = torus_action(50, 2);
  const int N = torus->N();
  const auto& spec = torus->spec();
  const auto e = identity(spec);
  const auto g = generator(spec, 1);
  const auto h = multiply(spec, generator(spec, 2), generator(spec, 1));

  const auto sign = iid_observable(N, 1, IidLaw::Sign);
  const cplx m = sign.values.mean();
  const double var = (sign.values.array() - m).abs2().mean();
  CHECK(empirical_covariance(sign, *torus, e).real() == doctest::Approx(var).epsilon(1e-12));

  int ok = 0;
  const int trials = 200;
  for (int s = 0; s < trials; ++s) {
    const auto a = iid_observable(N, 1000 + s, s % 2 ? IidLaw::Sign : IidLaw::Disc);
    const double bound = (a.values.array() - a.values.mean()).abs().maxCoeff();
    bool fine = true;
    for (const auto& x : {g, h}) {
      const cplx c = empirical_covariance(a, *torus, x);
      CHECK(std::abs(c) <= bound * bound + 1e-12);
      fine = fine && std::abs(c) < 3.0 / std::sqrt(N);
    }
    ok += fine;
  }
  CHECK(ok >= 0.97 * trials);

  // scalar case of the matrix-valued norm
  CHECK(empirical_covariance_norm(sign, *torus, g) == doctest::Approx(std::abs(empirical_covariance(sign, *torus, g))));

  // half of every cycle of g is +1: neighbours along g agree except at two sites per cycle
  const auto rf = random_free_action(20000, 2, 5);
  const auto gf = generator(rf->spec(), 1);
  const auto adv = cycle_sign_observable(*rf, gf);
  CHECK(std::abs(adv.values.mean()) < 0.01);
  CHECK(empirical_covariance(adv, *rf, gf).real() > 0.99);
}

TEST_CASE("observable generators") {
  const auto s = iid_observable(4000, 3, IidLaw::Sign);
  for (auto v : s.values) CHECK(std::abs(std::abs(v.real()) - 1.0) + std::abs(v.imag()) == 0.0);
  CHECK(std::abs(s.values.mean()) < 0.1);
  const auto d = iid_observable(4000, 3, IidLaw::Disc);
  CHECK(d.values.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(d.values.cwiseAbs2().mean() == doctest::Approx(0.5).epsilon(0.05));
  CHECK(iid_observable(500, 9, IidLaw::Sign, 3).values.size() == 1500);
  CHECK(iid_observable(50, 9).values == iid_observable(50, 9).values);

  auto t = torus_action(8, 2);
  const auto four = fourier_observable(*t, {1, 0});
  CHECK(std::abs(four.values.mean()) < 1e-14);
  CHECK(four.values.cwiseAbs().minCoeff() == doctest::Approx(1.0));
  // a(g.x) = e^{2πi/M} a(x) along the first direction
  const auto g1 = generator(t->spec(), 1);
  const auto e1 = std::polar(1.0, 2 * std::numbers::pi / 8);
  const cplx cov = empirical_covariance(four, *t, g1);
  CHECK(std::abs(cov - std::conj(e1)) < 1e-12);

  const auto cs = color_sign_observable(10, {1.0, -1.0, 0.5});
  CHECK(cs.r == 3);
  CHECK(cs.values[4] == cplx(-1.0));
}

TEST_CASE("Fourier observable on the 2D torus does not mix") {
  for (int M : {20, 40}) {
    const auto f = torus_fixture(M, 2);
    const auto four = fourier_observable(*f.action, {1, 0});
    const auto iid = iid_observable(f.action->N(), 77, IidLaw::Sign);
    CAPTURE(M);
    CHECK(qm_statistic(f.sys, four, *f.action, 1.0, 1.0, 1.0) >= 0.4);
    CHECK(qm_statistic(f.sys, four, *f.action, 1.0, 1.0, 0.5) >= 0.4);
    // quantum ergodicity itself holds for both observables
    CHECK(qe_statistic(f.sys, four, *f.action, 0.3, 3.5) < 1e-10);
    CHECK(qe_statistic(f.sys, iid, *f.action, 0.3, 3.5) < 0.1);
  }
}

TEST_CASE("glued copies: the block indicator is not uncorrelated and breaks QE") {
  const int Nb = 150, k = 4;
  const auto base = random_free_action(Nb, k, 8);
  const auto glued = glued_copies_action(*base, 8);
  const auto obs = block_indicator_observable(*glued);
  const int V = glued->N();
  REQUIRE(V == k * Nb + 1);
  CHECK(obs.values.sum() == cplx(0.0));
  CHECK(obs.values.cwiseAbs().sum() == doctest::Approx(4.0 * Nb));
  // only edges at the hub separate differently signed vertices
  const auto g = generator(glued->spec(), 1);
  CHECK(empirical_covariance(obs, *glued, g).real() > 0.95);

  // f ⊗ (1,1,−1,−1)/2 for an eigenvector f of the base with the deleted edge removed
  const auto& spec = glued->spec_ptr();
  const auto p = AlgebraElement::indicator(spec, standard_generators(*spec));
  const auto op = representation_matrix(glued, p);
  const auto del = glued->metadata()["deleted_edge"];
  Eigen::MatrixXd F = representation_matrix(base, p).dense().real();
  F(del[0].get<int>(), del[1].get<int>()) -= 1.0;
  F(del[1].get<int>(), del[0].get<int>()) -= 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F);
  const SparseMatrix K = centered_matrix(obs, *glued);
  const auto copy_of = glued->metadata()["copy_of"].get<std::vector<int>>();
  const double h = 1.0 / std::sqrt(2.0);
  for (int j : {0, Nb / 2, Nb - 1})
    for (const auto& [coef, expect] : std::vector<std::pair<std::array<double, 4>, double>>{{{h, -h, 0, 0}, 1.0},
                                                                                          {{0, 0, h, -h}, -1.0}}) {
      Eigen::VectorXcd phi = Eigen::VectorXcd::Zero(V);
      std::vector<int> seen(k, 0);
      for (int x = 0; x < V; ++x) {
        const int c = copy_of[x];
        if (c < 0) continue;
        phi[x] = coef[c] * es.eigenvectors()(seen[c]++, j);
      }
      CHECK((op.matrix * phi - es.eigenvalues()[j] * phi).norm() < 1e-10);
      CHECK(std::abs(phi.dot(K * phi) - expect) < 1e-10);
    }
}

TEST_CASE("stats csv") {
  const auto path = (std::filesystem::temp_directory_path() / "qmix_stats.csv").string();
  write_stats_csv({{100, 0.1, 0.0, 0.5, 0.25, "iid", 3}}, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "N,eta,E1,E2,statistic,observable,seed");
  CHECK(row.rfind("100,0.10000000000000001,0,0.5,0.25,iid,3", 0) == 0);
  std::filesystem::remove(path);
}
