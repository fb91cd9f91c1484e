#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "qmix/spectra.hpp"

using namespace qmix;

namespace {

SchreierOperator adjacency(ActionPtr A) {
  return representation_matrix(A, AlgebraElement::indicator(A->spec_ptr(), standard_generators(A->spec())));
}

double km_mass(int d, double a, double b) {
  // Simpson on the Kesten–McKay density over [a, b] ∩ support, θ-substitution at the edges
  const double edge = 2.0 * std::sqrt(d - 1.0);
  const double lo = std::max(a, -edge), hi = std::min(b, edge);
  if (lo >= hi) return 0.0;
  const double t0 = std::acos(hi / edge), t1 = std::acos(lo / edge);
  const int n = 4000;
  const double h = (t1 - t0) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double th = t0 + i * h, x = edge * std::cos(th);
    const double f = d * std::sqrt(std::max(0.0, 4.0 * (d - 1) - x * x)) / (2 * std::numbers::pi * (d * d - x * x));
    s += f * edge * std::sin(th) * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  }
  return s * h / 3.0;
}

// closed walks of length k on Z^d by dynamic programming
long lattice_walks(int d, int k) {
  std::map<std::vector<int>, long> cur{{std::vector<int>(d, 0), 1}};
  for (int s = 0; s < k; ++s) {
    std::map<std::vector<int>, long> next;
    for (const auto& [v, c] : cur)
      for (int i = 0; i < d; ++i)
        for (int sg : {1, -1}) {
          auto w = v;
          w[i] += sg;
          next[w] += c;
        }
    cur = std::move(next);
  }
  return cur[std::vector<int>(d, 0)];
}

}  // namespace

TEST_CASE("eigendecompose examples") {
  auto T = torus_action(5, 1);
  const auto sysI = eigendecompose(representation_matrix(T, AlgebraElement::unit(T->spec_ptr())));
  for (int a = 0; a < 5; ++a) CHECK(sysI.values[a] == doctest::Approx(1.0));

  const auto c4 = eigendecompose(adjacency(torus_action(4, 1)));
  const double e4[] = {-2, 0, 0, 2};
  for (int a = 0; a < 4; ++a) CHECK(std::abs(c4.values[a] - e4[a]) < 1e-12);

  for (int M : {5, 6}) {
    for (int d : {1, 2, 3}) {
      const auto sys = eigendecompose(adjacency(torus_action(M, d)));
      std::vector<double> expect;
      const int N = sys.dim;
      for (int x = 0; x < N; ++x) {
        double v = 0.0;
        int y = x;
        for (int i = 0; i < d; ++i, y /= M) v += 2.0 * std::cos(2.0 * std::numbers::pi * (y % M) / M);
        expect.push_back(v);
      }
      std::sort(expect.begin(), expect.end());
      for (int a = 0; a < N; ++a) CHECK(std::abs(sys.values[a] - expect[a]) < 1e-11);
      CHECK(sys.max_residual < 1e-12);
      CHECK(orthonormality_defect(sys) < 1e-12);
    }
  }
}

TEST_CASE("eigensystem invariants on random operators") {
  std::mt19937 rng(2);
  std::normal_distribution<double> nd;
  auto A = random_free_action(80, 2, 3);
  for (int r : {1, 3}) {
    AlgebraElement p(A->spec_ptr(), r);
    for (int k = 1; k <= 2; ++k) {
      Block b(r, r);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) b(i, j) = cplx(nd(rng), nd(rng));
      p.add(generator(A->spec(), k), b);
    }
    p = p + star(p);
    const auto op = representation_matrix(A, p);
    const auto sys = eigendecompose(op);
    CHECK(sys.dim == 80 * r);
    CHECK(sys.N == 80);
    CHECK(sys.r == r);
    CHECK(residual(sys, op.matrix) <= 1e-9 * std::max(1.0, op.dense().norm()));
    CHECK(orthonormality_defect(sys) < 1e-10);
    for (int a = 1; a < sys.size(); ++a) CHECK(sys.values[a] >= sys.values[a - 1]);

    // range mode returns the same eigenvalues as the full solve
    EigenOptions o;
    o.range = std::make_pair(-1.0, 1.5);
    const auto part = eigendecompose(op, o);
    const auto idx = sys.window(-1.0, 1.5);
    REQUIRE(part.size() == static_cast<int>(idx.size()));
    for (int a = 0; a < part.size(); ++a) CHECK(std::abs(part.values[a] - sys.values[idx[a]]) < 1e-10);
    CHECK(part.partial);
    CHECK_THROWS_AS(part.window(-2.0, 0.0), ArgumentError);

    // Tr f(P) = Σ f(λ) for a degree-20 polynomial
    Eigen::MatrixXcd P = op.dense();
    const double s = 1.0 / P.norm();
    Eigen::MatrixXcd X = P * s, pw = Eigen::MatrixXcd::Identity(P.rows(), P.cols());
    cplx tr = 0.0;
    double spec_sum = 0.0;
    for (int k = 0; k <= 20; ++k) {
      const double c = 1.0 / (k + 1);
      tr += c * pw.trace();
      for (int a = 0; a < sys.size(); ++a) spec_sum += c * std::pow(sys.values[a] * s, k);
      pw = pw * X;
    }
    CHECK(std::abs(tr - spec_sum) < 1e-8 * std::abs(spec_sum));
  }
}

TEST_CASE("windows, counts and the empirical measure") {
  const auto sys = eigendecompose(adjacency(torus_action(12, 1)));
  CHECK(count(sys, -1e9, 1e9) == 12);
  CHECK(count(sys, 2.5, 3.0) == 0);
  CHECK(count(sys, 3.0, 2.5) == 0);
  // 2cos(2πk/12) in [1, 2]: 2, √3 twice, 1 twice
  CHECK(count(sys, 1.0 - 1e-12, 2.0 + 1e-12) == 5);
  CHECK(count(sys, 1.0 + 1e-9, 2.0 - 1e-9) == 2);
  CHECK(count(sys, -2.0, -2.0) == 1);
  const auto mu = empirical_measure(sys);
  CHECK(mu.mass(-1e9, 1e9) == doctest::Approx(1.0));
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int k = 0; k < 100; ++k) {
    double a = u(rng), b = u(rng), c = u(rng);
    std::array<double, 3> v{a, b, c};
    std::sort(v.begin(), v.end());
    CHECK(count(sys, v[0], v[2]) == count(sys, v[0], v[1]) + count(sys, std::nextafter(v[1], 10.0), v[2]));
  }
}

TEST_CASE("3-regular random graph follows Kesten-McKay") {
  auto A = random_matching_action(2000, 3, 5);
  const auto sys = eigendecompose(adjacency(A));
  const double frac = count(sys, -1.0, 1.0) / 2000.0;
  CHECK(std::abs(frac - km_mass(3, -1.0, 1.0)) < 0.05);
  CHECK(km_mass(3, -10, 10) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("spectral measures at vectors") {
  const int M = 9;
  for (int d : {1, 2}) {
    auto T = torus_action(M, d);
    const auto sys = eigendecompose(adjacency(T));
    Eigen::VectorXcd delta = Eigen::VectorXcd::Zero(sys.dim);
    delta[0] = 1.0;
    const auto mu = spectral_measure_at(sys, delta);
    double total = 0.0;
    for (double w : mu.weights) total += w;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    for (int k = 0; k <= 6; ++k) CHECK(mu.moment(k) == doctest::Approx(static_cast<double>(lattice_walks(d, k))).epsilon(1e-9));

    // eigenvector → point mass
    const auto phi = sys.vector(3);
    const auto pm = spectral_measure_at(sys, phi);
    double at = 0.0;
    for (std::size_t a = 0; a < pm.points.size(); ++a)
      if (std::abs(pm.points[a] - sys.values[3]) < 1e-9) at += pm.weights[a];
    CHECK(at == doctest::Approx(1.0).epsilon(1e-10));

    // spatial average of μ^{δ_x} is μ_{P_N}
    const auto emp = empirical_measure(sys);
    for (int k = 1; k <= 4; ++k) {
      double avg = 0.0;
      for (int x = 0; x < sys.dim; ++x) {
        Eigen::VectorXcd dx = Eigen::VectorXcd::Zero(sys.dim);
        dx[x] = 1.0;
        avg += spectral_measure_at(sys, dx).moment(k) / sys.dim;
      }
      double m = 0.0;
      for (double t : emp.atoms) m += std::pow(t, k) / emp.atoms.size();
      CHECK(avg == doctest::Approx(m).epsilon(1e-9));
    }
  }
  const auto sys = eigendecompose(adjacency(torus_action(4, 1)));
  CHECK_THROWS_AS(spectral_measure_at(sys, Eigen::VectorXcd::Zero(4)), ArgumentError);
}

TEST_CASE("diagonal moments match group-algebra powers away from the bad set") {
  auto A = random_free_action(400, 2, 7);
  const auto S = standard_generators(A->spec());
  const auto p = AlgebraElement::indicator(A->spec_ptr(), S);
  const auto sys = eigendecompose(representation_matrix(A, p));
  const auto bad = bad_set(*A, S, 3);
  for (int k = 1; k <= 6; ++k) {
    std::vector<double> mono(k + 1, 0.0);
    mono[k] = 1.0;
    const double expect = apply_polynomial(mono, p).coeff(identity(A->spec()))(0, 0).real();
    int checked = 0;
    for (int x = 0; x < 400 && checked < 30; ++x) {
      if (std::binary_search(bad.begin(), bad.end(), x)) continue;
      Eigen::VectorXcd dx = Eigen::VectorXcd::Zero(400);
      dx[x] = 1.0;
      CHECK(spectral_measure_at(sys, dx).moment(k) == doctest::Approx(expect).epsilon(1e-9));
      ++checked;
    }
  }
}

TEST_CASE("Weyl perturbation") {
  std::mt19937 rng(4);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd H(40, 40);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) H(i, j) = nd(rng);
  H = (H + H.transpose()).eval();
  Eigen::VectorXd v(40);
  for (int i = 0; i < 40; ++i) v[i] = nd(rng);
  v.normalize();
  const double eps = 1e-3;
  const auto a = eigendecompose_dense(H);
  const auto b = eigendecompose_dense(Eigen::MatrixXd(H + eps * v * v.transpose()));
  for (int k = 0; k < 40; ++k) {
    CHECK(b.values[k] - a.values[k] >= -1e-12);
    CHECK(b.values[k] - a.values[k] <= eps + 1e-12);
  }
  Eigen::MatrixXcd Hc = H.cast<cplx>();
  Hc(0, 1) += cplx(0, 1);
  CHECK_THROWS_AS(eigendecompose_dense(Hc), ValidationError);
}

TEST_CASE("degenerate clusters can be rotated") {
  const auto op = adjacency(torus_action(8, 2));
  auto sys = eigendecompose(op);
  const auto clusters = degenerate_clusters(sys);
  int biggest = 0;
  for (const auto& c : clusters) biggest = std::max(biggest, static_cast<int>(c.size()));
  CHECK(biggest > 1);
  auto rot = sys;
  randomize_degenerate_blocks(rot, 99);
  CHECK(residual(rot, op.matrix) < 1e-9);
  CHECK(orthonormality_defect(rot) < 1e-10);
  CHECK((rot.values - sys.values).norm() == 0.0);
}

TEST_CASE("export formats") {
  const auto sys = eigendecompose(adjacency(torus_action(6, 1)));
  const auto dir = std::filesystem::temp_directory_path() / "qmix_spectra_test";
  std::filesystem::create_directories(dir);
  const auto bin = (dir / "vec.bin").string();
  write_eigenvectors_binary(sys, bin);
  CHECK(std::filesystem::file_size(bin) == 16 + 36 * 16);
  int N = 0, r = 0;
  const auto V = read_eigenvectors_binary(bin, N, r);
  CHECK(N == 6);
  CHECK(r == 1);
  for (int a = 0; a < 6; ++a) CHECK((V.col(a) - sys.vector(a)).norm() == 0.0);
  const auto csv = (dir / "values.csv").string();
  write_eigenvalues_csv(sys, csv);
  std::ifstream in(csv);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 7);
  std::filesystem::remove_all(dir);
}
