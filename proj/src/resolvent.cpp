#include "qmix/resolvent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace qmix {

namespace {

using Vec = Eigen::VectorXcd;

cplx ipow(cplx v, int k) {
  cplx r = 1.0;
  for (int i = 0; i < k; ++i) r *= v;
  return r;
}

cplx monomial(cplx v, int a, int b) { return ipow(v, a) * ipow(std::conj(v), b); }

void require_upper(cplx z) {
  if (!(z.imag() != 0.0) || !std::isfinite(z.real()) || !std::isfinite(z.imag()))
    throw PreconditionError("resolvent needs Im z != 0");
}

// Polynomial system in the Green-function unknowns, solved by Newton continuation in η
// along the vertical line Re z = E, starting in the Neumann regime.
struct PolySystem {
  int n = 0;
  double scale = 1.0;
  std::function<Vec(cplx, const Vec&)> F;
  std::function<Eigen::MatrixXcd(cplx, const Vec&)> J;
  std::function<Vec(cplx, const Vec&)> Phi;
  std::function<Vec(cplx)> initial;
  std::function<bool(cplx, const Vec&)> physical;
};

struct ContinuationResult {
  Vec x;
  double residual = 0.0;
  int newton = 0;
  int steps = 0;
  bool fallback = false;
};

bool all_finite(const Vec& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i].real()) || !std::isfinite(x[i].imag())) return false;
  return true;
}

double inf_norm(const Vec& x) { return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff(); }

bool newton(const PolySystem& s, cplx z, Vec& x, int& iters, double tol) {
  for (int it = 0; it < 60; ++it) {
    Vec r = s.F(z, x);
    if (!all_finite(r)) return false;
    if (inf_norm(r) < tol) return true;
    Vec dx = s.J(z, x).partialPivLu().solve(-r);
    if (!all_finite(dx)) return false;
    x += dx;
    ++iters;
  }
  return inf_norm(s.F(z, x)) < tol;
}

ContinuationResult continuation(const PolySystem& s, cplx z) {
  const double tol = 1e-13 * std::max(1.0, s.scale);
  const double E = z.real(), eta_t = z.imag();
  double eta = std::max(eta_t, 4.0 * (1.0 + s.scale));
  ContinuationResult res;
  Vec x = s.initial(cplx(E, eta));
  if (!newton(s, cplx(E, eta), x, res.newton, tol) || !s.physical(cplx(E, eta), x))
    throw SolverError("continuation failed at its starting point");
  double factor = 0.7;
  while (eta > eta_t) {
    const double next = std::max(eta_t, eta * factor);
    Vec y = x;
    bool ok = newton(s, cplx(E, next), y, res.newton, tol) && s.physical(cplx(E, next), y);
    if (ok) {
      const double jump = inf_norm(y - x), size = std::max(1.0, inf_norm(x));
      if (jump > 0.5 * size && factor < 0.999) ok = false;
    }
    if (ok) {
      x = y;
      eta = next;
      ++res.steps;
      factor = std::max(0.5, factor * factor);
      continue;
    }
    factor = std::sqrt(factor);
    if (factor > 0.9999) {
      // damped fixed point at the target, then polish
      res.fallback = true;
      const cplx zt(E, eta_t);
      Vec w = x;
      for (int it = 0; it < 100000; ++it) {
        w = 0.5 * w + 0.5 * s.Phi(zt, w);
        if (!all_finite(w)) break;
        if (it % 64 == 0 && inf_norm(s.F(zt, w)) < tol) break;
      }
      int dummy = 0;
      newton(s, zt, w, dummy, tol);
      const double r = all_finite(w) ? inf_norm(s.F(zt, w)) : std::numeric_limits<double>::infinity();
      if (!(r < 1e-12 * std::max(1.0, s.scale)) || !s.physical(zt, w)) {
        std::ostringstream os;
        os << "solver did not converge at z = " << E << "+" << eta_t << "i (continuation stalled at eta = " << eta
           << ", residual " << r << ")";
        throw SolverError(os.str());
      }
      x = w;
      eta = eta_t;
    }
  }
  res.x = x;
  res.residual = inf_norm(s.F(cplx(E, eta_t), x));
  if (!(res.residual < 1e-12 * std::max(1.0, s.scale))) {
    std::ostringstream os;
    os << "solver residual " << res.residual << " at z = " << E << "+" << eta_t << "i";
    throw SolverError(os.str());
  }
  return res;
}

// Geometric tail Σ_{k≥1} c^k (R+k)^p relative to the value at R.
double tail_series(double c, int R, double p) {
  if (!(c < 1.0)) return std::numeric_limits<double>::infinity();
  if (c <= 0.0) return 0.0;
  double sum = 0.0, ck = 1.0;
  const double base = R > 0 ? std::pow(static_cast<double>(R), p) : 1.0;
  for (int k = 1; k < 100000000; ++k) {
    ck *= c;
    const double term = ck * (p == 0.0 ? 1.0 : std::pow(static_cast<double>(R + k), p) / base);
    sum += term;
    if (term < 1e-17 * sum && k > 8) break;
  }
  return sum;
}

double contraction(const std::vector<double>& s, int R) {
  double c = 0.0;
  for (int l = std::max(1, R - 7); l <= R; ++l) {
    if (s[l - 1] > 0.0) c = std::max(c, s[l] / s[l - 1]);
    else if (s[l] > 0.0) return std::numeric_limits<double>::infinity();
  }
  return c;
}

Block scalar_block(cplx v) {
  Block b(1, 1);
  b(0, 0) = v;
  return b;
}

}  // namespace

// ---------------------------------------------------------------- defaults

std::vector<double> ResolventModel::ward_shells(cplx z, int L) const {
  auto s = monomial_shells({z}, {1}, {1}, L);
  std::vector<double> out(s.size());
  for (std::size_t l = 0; l < s.size(); ++l) out[l] = s[l].real();
  return out;
}

std::vector<double> ResolventModel::fourth_shells(cplx z, int L) const {
  // (Im v)⁴ = (1/16) Σ_j C(4,j) (−1)^{4−j} v^j v̄^{4−j}
  static const double binom[5] = {1, 4, 6, 4, 1};
  std::vector<double> out(L + 1, 0.0);
  for (int j = 0; j <= 4; ++j) {
    auto s = monomial_shells({z}, {j}, {4 - j}, L);
    const double c = binom[j] * ((4 - j) % 2 ? -1.0 : 1.0) / 16.0;
    for (int l = 0; l <= L; ++l) out[l] += c * s[l].real();
  }
  for (auto& v : out) v = std::max(v, 0.0);
  return out;
}

std::vector<double> ResolventModel::modulus4_shells(cplx z, int L) const {
  auto s = monomial_shells({z}, {2}, {2}, L);
  std::vector<double> out(s.size());
  for (std::size_t l = 0; l < s.size(); ++l) out[l] = s[l].real();
  return out;
}

// ---------------------------------------------------------------- regular tree

RegularTreeModel::RegularTreeModel(int d, double w, SpecPtr spec) : d_(d), w_(w), spec_(std::move(spec)) {
  if (d < 1) throw ArgumentError("tree degree must be >= 1");
  if (!(w > 0.0)) throw ArgumentError("tree edge weight must be positive");
  if (!spec_) {
    std::vector<FiniteGroup> f(d, FiniteGroup::cyclic(2));
    spec_ = std::make_shared<GroupSpec>(GroupSpec::free_product(f));
  }
  const int deg = static_cast<int>(standard_generators(*spec_).generators.size());
  if (deg != d) throw ArgumentError("group does not have a " + std::to_string(d) + "-regular Cayley graph");
  if (spec_->kind() == GroupKind::FreeProduct) {
    for (const auto& f : spec_->factors())
      if (f.order != 2) throw ArgumentError("regular tree model needs Z_2 factors");
  } else if (spec_->kind() != GroupKind::Free) {
    throw ArgumentError("regular tree model needs a free group or a free product of Z_2");
  }
}

std::string RegularTreeModel::name() const {
  std::ostringstream os;
  os << "RegularTree(d=" << d_ << ",w=" << w_ << ")";
  return os.str();
}

AlgebraElement RegularTreeModel::symbol() const {
  return AlgebraElement::indicator(spec_, standard_generators(*spec_), w_);
}

double RegularTreeModel::norm_bound() const { return d_ >= 2 ? 2.0 * std::sqrt(d_ - 1.0) * w_ : w_; }

cplx RegularTreeModel::branch(cplx z) const {
  require_upper(z);
  if (z.imag() < 0.0) return std::conj(branch(std::conj(z)));
  if (d_ == 1) return -1.0 / z;
  const double a = (d_ - 1.0) * w_ * w_;
  const cplx disc = std::sqrt(z * z - 4.0 * a);
  cplx g1 = (-z + disc) / (2.0 * a);
  cplx g2 = (-z - disc) / (2.0 * a);
  // the two roots multiply to 1/a; refine the smaller-magnitude one through the product
  if (std::abs(g1) < std::abs(g2)) g1 = 1.0 / (a * g2);
  else g2 = 1.0 / (a * g1);
  return g1.imag() > 0.0 ? g1 : g2;
}

cplx RegularTreeModel::diag(cplx z) const {
  const cplx g = branch(z);
  return -1.0 / (z + static_cast<double>(d_) * w_ * w_ * g);
}

cplx RegularTreeModel::zeta(cplx z) const { return -w_ * branch(z); }

std::vector<double> RegularTreeModel::shell_sizes(int L) const {
  std::vector<double> n(L + 1, 1.0);
  for (int l = 1; l <= L; ++l) n[l] = l == 1 ? d_ : n[l - 1] * (d_ - 1);
  return n;
}

Block RegularTreeModel::solve_diag(cplx z) const { return scalar_block(diag(z)); }

Block RegularTreeModel::offdiag(const GroupElement& g, cplx z) const {
  const int len = word_length(*spec_, g);
  return scalar_block(diag(z) * std::pow(zeta(z), len));
}

std::vector<cplx> RegularTreeModel::monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                                    const std::vector<int>& beta, int L) const {
  // S_ℓ = n_ℓ W0 Π_k ζ_k^{ℓ α_k} ζ̄_k^{ℓ β_k}, evaluated in log-polar form
  double logw0 = 0.0, argw0 = 0.0, logstep = 0.0, argstep = 0.0;
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const cplx r0 = diag(zs[k]), zt = zeta(zs[k]);
    const int a = alpha[k], b = beta[k];
    logw0 += (a + b) * std::log(std::abs(r0));
    argw0 += (a - b) * std::arg(r0);
    logstep += (a + b) * std::log(std::abs(zt));
    argstep += (a - b) * std::arg(zt);
  }
  std::vector<cplx> out(L + 1);
  for (int l = 0; l <= L; ++l) {
    double logn = 0.0;
    if (l >= 1) logn = std::log(static_cast<double>(d_)) + (l - 1) * std::log(std::max(d_ - 1.0, 1e-300));
    if (d_ == 1 && l >= 2) {
      out[l] = 0.0;
      continue;
    }
    const double lm = logn + logw0 + l * logstep;
    out[l] = std::polar(std::exp(lm), argw0 + l * argstep);
  }
  return out;
}

// ---------------------------------------------------------------- free product

FreeProductModel::FreeProductModel(const AlgebraElement& p) : spec_(p.spec_ptr()), p_(p) {
  if (spec_->kind() != GroupKind::FreeProduct) throw ArgumentError("free product model needs a free product group");
  if (p.block_size() != 1) throw ArgumentError("free product model needs a scalar symbol");
  const auto& fs = spec_->factors();
  weight_.resize(fs.size());
  for (std::size_t f = 0; f < fs.size(); ++f) weight_[f].assign(fs[f].order, 0.0);
  for (const auto& [g, b] : p.terms()) {
    const cplx c = b(0, 0);
    if (std::abs(c.imag()) > 1e-12 * (1.0 + std::abs(c))) throw ArgumentError("free product model needs real weights");
    if (g.word.empty()) {
      pe_ += c.real();
    } else if (g.word.size() == 1) {
      const int f = spec_->factor_of(g.word[0]);
      weight_[f][g.word[0] - spec_->factor_offset(f)] += c.real();
    } else {
      throw ArgumentError("free product symbol must be supported on the factors");
    }
  }
  for (std::size_t f = 0; f < fs.size(); ++f) {
    for (int a = 0; a < fs[f].order; ++a) {
      if (std::abs(weight_[f][a] - weight_[f][fs[f].inverse[a]]) > 1e-12)
        throw ArgumentError("free product model needs a symmetric symbol");
      if (a != fs[f].identity) unknowns_.emplace_back(static_cast<int>(f), a);
    }
  }
}

std::shared_ptr<FreeProductModel> FreeProductModel::standard(SpecPtr spec, double w) {
  return std::make_shared<FreeProductModel>(AlgebraElement::indicator(spec, standard_generators(*spec), w));
}

std::string FreeProductModel::name() const { return "FreeProduct(" + spec_->describe() + ")"; }

double FreeProductModel::norm_bound() const {
  double s = std::abs(pe_);
  for (const auto& w : weight_)
    for (double v : w) s += std::abs(v);
  return s;
}

FreeProductModel::Solution FreeProductModel::solve_zeta_system(cplx z) const {
  require_upper(z);
  if (z.imag() < 0.0) {
    Solution s = solve_zeta_system(std::conj(z));
    s.z = z;
    s.diag = std::conj(s.diag);
    for (auto& v : s.zeta)
      for (auto& c : v) c = std::conj(c);
    return s;
  }
  const auto key = std::make_pair(z.real(), z.imag());
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }

  const auto& fs = spec_->factors();
  const int nf = static_cast<int>(fs.size());
  const int n = static_cast<int>(unknowns_.size());
  std::vector<std::vector<int>> index(nf);
  for (int f = 0; f < nf; ++f) index[f].assign(fs[f].order, -1);
  for (int u = 0; u < n; ++u) index[unknowns_[u].first][unknowns_[u].second] = u;

  auto zeta_of = [&](const Vec& x, int f, int a) -> cplx { return a == fs[f].identity ? cplx(1.0) : x[index[f][a]]; };
  auto B = [&](const Vec& x) {
    std::vector<cplx> b(nf, 0.0);
    for (int f = 0; f < nf; ++f)
      for (int v = 0; v < fs[f].order; ++v)
        if (v != fs[f].identity && weight_[f][v] != 0.0) b[f] += weight_[f][v] * zeta_of(x, f, fs[f].inverse[v]);
    return b;
  };

  PolySystem sys;
  sys.n = n;
  sys.scale = norm_bound();
  sys.F = [&](cplx zz, const Vec& x) {
    auto b = B(x);
    cplx total = 0.0;
    for (auto v : b) total += v;
    Vec r(n);
    for (int u = 0; u < n; ++u) {
      auto [f, h] = unknowns_[u];
      cplx acc = weight_[f][h] + (pe_ - zz + total - b[f]) * x[u];
      for (int w = 0; w < fs[f].order; ++w) {
        if (w == fs[f].identity || w == h) continue;
        const double c = weight_[f][fs[f].mul(h, fs[f].inverse[w])];
        if (c != 0.0) acc += c * x[index[f][w]];
      }
      r[u] = acc;
    }
    return r;
  };
  sys.J = [&](cplx zz, const Vec& x) {
    auto b = B(x);
    cplx total = 0.0;
    for (auto v : b) total += v;
    Eigen::MatrixXcd J = Eigen::MatrixXcd::Zero(n, n);
    for (int u = 0; u < n; ++u) {
      auto [f, h] = unknowns_[u];
      J(u, u) += pe_ - zz + total - b[f];
      for (int w = 0; w < fs[f].order; ++w) {
        if (w == fs[f].identity || w == h) continue;
        J(u, index[f][w]) += weight_[f][fs[f].mul(h, fs[f].inverse[w])];
      }
      for (int g = 0; g < nf; ++g) {
        if (g == f) continue;
        for (int v = 0; v < fs[g].order; ++v) {
          if (v == fs[g].identity) continue;
          J(u, index[g][v]) += x[u] * weight_[g][fs[g].inverse[v]];
        }
      }
    }
    return J;
  };
  sys.Phi = [&](cplx zz, const Vec& x) {
    auto b = B(x);
    cplx total = 0.0;
    for (auto v : b) total += v;
    Vec y(n);
    for (int u = 0; u < n; ++u) {
      auto [f, h] = unknowns_[u];
      cplx num = weight_[f][h];
      for (int w = 0; w < fs[f].order; ++w) {
        if (w == fs[f].identity || w == h) continue;
        num += weight_[f][fs[f].mul(h, fs[f].inverse[w])] * x[index[f][w]];
      }
      y[u] = num / (zz - pe_ - (total - b[f]));
    }
    return y;
  };
  sys.initial = [&](cplx zz) {
    Vec x(n);
    for (int u = 0; u < n; ++u) x[u] = weight_[unknowns_[u].first][unknowns_[u].second] / zz;
    return x;
  };
  sys.physical = [&](cplx zz, const Vec& x) {
    auto b = B(x);
    cplx total = 0.0;
    for (auto v : b) total += v;
    const cplx r0 = 1.0 / (pe_ + total - zz);
    return std::isfinite(r0.imag()) && r0.imag() > 0.0;
  };

  ContinuationResult cr = continuation(sys, z);
  Solution s;
  s.z = z;
  s.zeta.resize(nf);
  for (int f = 0; f < nf; ++f) {
    s.zeta[f].assign(fs[f].order, 1.0);
    for (int a = 0; a < fs[f].order; ++a) s.zeta[f][a] = zeta_of(cr.x, f, a);
  }
  auto b = B(cr.x);
  cplx total = 0.0;
  for (auto v : b) total += v;
  s.diag = 1.0 / (pe_ + total - z);
  if (!(s.diag.imag() > 0.0)) throw SolverError("Herglotz sign violated at " + std::to_string(z.real()));
  s.residual = cr.residual;
  s.newton_steps = cr.newton;
  s.continuation_steps = cr.steps;
  s.fixed_point_fallback = cr.fallback;
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, s);
  return s;
}

Block FreeProductModel::solve_diag(cplx z) const { return scalar_block(solve_zeta_system(z).diag); }

Block FreeProductModel::offdiag(const GroupElement& g, cplx z) const {
  const Solution s = solve_zeta_system(z);
  cplx v = s.diag;
  for (int l : g.word) {
    const int f = spec_->factor_of(l);
    if (f < 0) throw ArgumentError("element does not belong to the model's group");
    v *= s.zeta[f][l - spec_->factor_offset(f)];
  }
  return scalar_block(v);
}

std::vector<cplx> FreeProductModel::monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                                    const std::vector<int>& beta, int L) const {
  const auto& fs = spec_->factors();
  const int nf = static_cast<int>(fs.size());
  std::vector<Solution> sol;
  for (cplx z : zs) sol.push_back(solve_zeta_system(z));
  cplx w0 = 1.0;
  for (std::size_t k = 0; k < zs.size(); ++k) w0 *= monomial(sol[k].diag, alpha[k], beta[k]);
  // A[f][m] = Σ_{h ∈ Γ_f, |h| = m} Π_k monomial(ζ_k(h))
  std::vector<std::vector<cplx>> A(nf);
  int maxlen = 1;
  for (int f = 0; f < nf; ++f) {
    const int ml = *std::max_element(fs[f].length.begin(), fs[f].length.end());
    maxlen = std::max(maxlen, ml);
    A[f].assign(ml + 1, 0.0);
    for (int h = 0; h < fs[f].order; ++h) {
      if (h == fs[f].identity) continue;
      cplx v = 1.0;
      for (std::size_t k = 0; k < zs.size(); ++k) v *= monomial(sol[k].zeta[f][h], alpha[k], beta[k]);
      A[f][fs[f].length[h]] += v;
    }
  }
  // T[ℓ][f]: sum over reduced words of length ℓ whose last syllable lies in factor f
  std::vector<std::vector<cplx>> T(L + 1, std::vector<cplx>(nf, 0.0));
  std::vector<cplx> out(L + 1, 0.0);
  out[0] = w0;
  for (int l = 1; l <= L; ++l) {
    for (int f = 0; f < nf; ++f) {
      cplx acc = 0.0;
      for (int m = 1; m < static_cast<int>(A[f].size()) && m <= l; ++m) {
        if (A[f][m] == 0.0) continue;
        cplx prev = 0.0;
        if (m == l) prev = 1.0;
        else
          for (int g = 0; g < nf; ++g)
            if (g != f) prev += T[l - m][g];
        acc += A[f][m] * prev;
      }
      T[l][f] = acc;
      out[l] += acc;
    }
    out[l] *= w0;
  }
  return out;
}

// ---------------------------------------------------------------- lattice

LatticeModel::LatticeModel(int d, std::vector<double> weights) : d_(d), w_(std::move(weights)) {
  if (d < 1) throw ArgumentError("lattice rank must be >= 1");
  if (w_.empty()) w_.assign(d, 1.0);
  if (static_cast<int>(w_.size()) != d) throw ArgumentError("one weight per lattice direction expected");
  for (double w : w_)
    if (!(w > 0.0)) throw ArgumentError("lattice weights must be positive");
  spec_ = std::make_shared<GroupSpec>(GroupSpec::lattice(d));
}

std::string LatticeModel::name() const {
  std::ostringstream os;
  os << "Lattice(d=" << d_ << ")";
  return os.str();
}

AlgebraElement LatticeModel::symbol() const {
  AlgebraElement p(spec_, 1);
  for (int i = 0; i < d_; ++i) {
    p.add(generator(*spec_, i + 1), w_[i]);
    p.add(generator(*spec_, -(i + 1)), w_[i]);
  }
  return p;
}

double LatticeModel::norm_bound() const {
  double s = 0.0;
  for (double w : w_) s += 2.0 * w;
  return s;
}

int LatticeModel::quadrature_nodes(cplx z) const {
  const double wmax = *std::max_element(w_.begin(), w_.end());
  return std::max(512, static_cast<int>(std::ceil(60.0 * wmax / std::abs(z.imag()))));
}

namespace {

// 1D lattice with weight w: R(0,n) = R0 ζ^{|n|}.
std::pair<cplx, cplx> chain(cplx z, double w) {
  RegularTreeModel t(2, w);
  return {t.diag(z), t.zeta(z)};
}

}  // namespace

cplx LatticeModel::value(const std::vector<int>& n, cplx z) const {
  require_upper(z);
  if (static_cast<int>(n.size()) != d_) throw ArgumentError("lattice element has the wrong rank");
  const int last = std::abs(n[d_ - 1]);
  if (d_ == 1) {
    auto [r0, zt] = chain(z, w_[0]);
    return r0 * std::pow(zt, last);
  }
  const int J = quadrature_nodes(z);
  const int m = d_ - 1;
  std::vector<int> idx(m, 0);
  cplx sum = 0.0;
  long total = 1;
  for (int i = 0; i < m; ++i) total *= J;
  for (long t = 0; t < total; ++t) {
    long rem = t;
    double shift = 0.0, phase = 0.0;
    for (int i = 0; i < m; ++i) {
      const int k = static_cast<int>(rem % J);
      rem /= J;
      const double th = 2.0 * std::numbers::pi * k / J;
      shift += 2.0 * w_[i] * std::cos(th);
      phase += n[i] * th;
    }
    auto [r0, zt] = chain(z - shift, w_[m]);
    sum += std::polar(1.0, phase) * r0 * std::pow(zt, last);
  }
  return sum / static_cast<double>(total);
}

Block LatticeModel::solve_diag(cplx z) const { return scalar_block(value(std::vector<int>(d_, 0), z)); }

Block LatticeModel::offdiag(const GroupElement& g, cplx z) const {
  if (static_cast<int>(g.word.size()) != d_) throw ArgumentError("element does not belong to the model's group");
  return scalar_block(value(g.word, z));
}

std::vector<cplx> LatticeModel::monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                                const std::vector<int>& beta, int L) const {
  if (d_ == 1) {
    RegularTreeModel chain_model(2, w_[0]);
    return chain_model.monomial_shells(zs, alpha, beta, L);
  }
  // Per z: quadrature nodes over the first d−1 angles, each carrying the chain resolvent in the last
  // direction; rows of fixed |n_last| reuse r0·ζ^{|n_last|}.
  struct Nodes {
    int J = 0;
    std::vector<std::vector<int>> k;  // node angle indices
    std::vector<cplx> r0, zt, row;
    std::vector<cplx> roots;  // e^{2πi j/J}
  };
  const int m = d_ - 1;
  std::vector<Nodes> nodes(zs.size());
  for (std::size_t q = 0; q < zs.size(); ++q) {
    require_upper(zs[q]);
    auto& nd = nodes[q];
    nd.J = quadrature_nodes(zs[q]);
    nd.roots.resize(nd.J);
    for (int j = 0; j < nd.J; ++j) nd.roots[j] = std::polar(1.0, 2.0 * std::numbers::pi * j / nd.J);
    long total = 1;
    for (int i = 0; i < m; ++i) total *= nd.J;
    std::vector<double> cosines(nd.J);
    for (int j = 0; j < nd.J; ++j) cosines[j] = std::cos(2.0 * std::numbers::pi * j / nd.J);
    const RegularTreeModel chain_model(2, w_[m]);
    for (long t = 0; t < total; ++t) {
      long rem = t;
      double shift = 0.0;
      std::vector<int> ks(m);
      for (int i = 0; i < m; ++i) {
        ks[i] = static_cast<int>(rem % nd.J);
        rem /= nd.J;
        shift += 2.0 * w_[i] * cosines[ks[i]];
      }
      nd.k.push_back(std::move(ks));
      nd.r0.push_back(chain_model.diag(zs[q] - shift) / static_cast<double>(total));
      nd.zt.push_back(chain_model.zeta(zs[q] - shift));
    }
    nd.row = nd.r0;
  }

  std::vector<cplx> out(L + 1, 0.0);
  std::vector<int> n(m, 0);
  std::function<void(int, int, int, int)> rec = [&](int i, int remaining, int used, int weight) {
    if (i == m) {
      cplx v = 1.0;
      for (std::size_t q = 0; q < zs.size(); ++q) {
        const auto& nd = nodes[q];
        cplx val = 0.0;
        for (std::size_t t = 0; t < nd.row.size(); ++t) {
          long idx = 0;
          for (int a = 0; a < m; ++a) idx += static_cast<long>(n[a]) * nd.k[t][a];
          idx %= nd.J;
          if (idx < 0) idx += nd.J;
          val += nd.roots[idx] * nd.row[t];
        }
        v *= monomial(val, alpha[q], beta[q]);
      }
      out[used] += static_cast<double>(weight) * v;
      return;
    }
    for (int a = -remaining; a <= remaining; ++a) {
      n[i] = a;
      rec(i + 1, remaining - std::abs(a), used + std::abs(a), weight);
    }
  };
  for (int s = 0; s <= L; ++s) {
    // n_last = ±s give equal values
    rec(0, L - s, s, s == 0 ? 1 : 2);
    for (auto& nd : nodes)
      for (std::size_t t = 0; t < nd.row.size(); ++t) nd.row[t] *= nd.zt[t];
  }
  return out;
}

// ---------------------------------------------------------------- tree lift

TreeLiftModel::TreeLiftModel(BaseGraph H, std::vector<double> weights) : H_(std::move(H)), a_(std::move(weights)) {
  const int E = static_cast<int>(H_.edges.size());
  if (H_.vertices < 1) throw ArgumentError("base graph needs at least one vertex");
  if (a_.empty()) a_.assign(E, 1.0);
  if (static_cast<int>(a_.size()) != E) throw ArgumentError("one weight per base edge expected");
  for (auto [u, v] : H_.edges)
    if (u < 0 || v < 0 || u >= H_.vertices || v >= H_.vertices) throw ArgumentError("base edge out of range");
  spec_ = lift_symbol(H_, a_).spec_ptr();
}

std::string TreeLiftModel::name() const {
  std::ostringstream os;
  os << "TreeLift(r=" << H_.vertices << ",edges=" << H_.edges.size() << ")";
  return os.str();
}

AlgebraElement TreeLiftModel::symbol() const {
  AlgebraElement p = lift_symbol(H_, a_);
  AlgebraElement q(spec_, H_.vertices);
  for (const auto& [g, b] : p.terms()) q.add(g, b);
  return q;
}

double TreeLiftModel::norm_bound() const {
  std::vector<double> row(H_.vertices, 0.0);
  for (std::size_t e = 0; e < H_.edges.size(); ++e) {
    row[H_.edges[e].first] += std::abs(a_[e]);
    row[H_.edges[e].second] += std::abs(a_[e]);
  }
  return *std::max_element(row.begin(), row.end());
}

int TreeLiftModel::tail(int j) const { return j % 2 == 0 ? H_.edges[j / 2].second : H_.edges[j / 2].first; }
int TreeLiftModel::head(int j) const { return j % 2 == 0 ? H_.edges[j / 2].first : H_.edges[j / 2].second; }

std::vector<cplx> TreeLiftModel::edge_greens(cplx z) const {
  require_upper(z);
  if (z.imag() < 0.0) {
    auto g = edge_greens(std::conj(z));
    for (auto& v : g) v = std::conj(v);
    return g;
  }
  const auto key = std::make_pair(z.real(), z.imag());
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  const int n = 2 * static_cast<int>(H_.edges.size());
  std::vector<std::vector<int>> children(n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (tail(k) == head(j) && k != (j ^ 1)) children[j].push_back(k);
  auto wsq = [&](int j) { return a_[j / 2] * a_[j / 2]; };

  PolySystem sys;
  sys.n = n;
  sys.scale = norm_bound();
  sys.F = [&](cplx zz, const Vec& x) {
    Vec r(n);
    for (int j = 0; j < n; ++j) {
      cplx s = zz;
      for (int k : children[j]) s += wsq(k) * x[k];
      r[j] = x[j] * s + 1.0;
    }
    return r;
  };
  sys.J = [&](cplx zz, const Vec& x) {
    Eigen::MatrixXcd J = Eigen::MatrixXcd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
      cplx s = zz;
      for (int k : children[j]) {
        s += wsq(k) * x[k];
        J(j, k) += x[j] * wsq(k);
      }
      J(j, j) += s;
    }
    return J;
  };
  sys.Phi = [&](cplx zz, const Vec& x) {
    Vec y(n);
    for (int j = 0; j < n; ++j) {
      cplx s = zz;
      for (int k : children[j]) s += wsq(k) * x[k];
      y[j] = -1.0 / s;
    }
    return y;
  };
  sys.initial = [&](cplx zz) { return Vec::Constant(n, -1.0 / zz); };
  sys.physical = [&](cplx, const Vec& x) {
    for (int j = 0; j < n; ++j)
      if (!(x[j].imag() > 0.0)) return false;
    return true;
  };
  std::vector<cplx> out;
  if (n > 0) {
    ContinuationResult cr = continuation(sys, z);
    out.assign(cr.x.data(), cr.x.data() + n);
  }
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, out);
  return out;
}

namespace {

std::vector<cplx> lift_diag(const TreeLiftModel& m, const std::vector<cplx>& G, cplx z) {
  const int r = m.base().vertices;
  std::vector<cplx> s(r, z);
  for (std::size_t j = 0; j < G.size(); ++j) {
    const double a = m.weights()[j / 2];
    s[m.tail(static_cast<int>(j))] += a * a * G[j];
  }
  std::vector<cplx> d(r);
  for (int c = 0; c < r; ++c) d[c] = -1.0 / s[c];
  return d;
}

}  // namespace

Block TreeLiftModel::solve_diag(cplx z) const {
  auto d = lift_diag(*this, edge_greens(z), z);
  Block b = Block::Zero(H_.vertices, H_.vertices);
  for (int c = 0; c < H_.vertices; ++c) b(c, c) = d[c];
  if (z.imag() > 0.0)
    for (int c = 0; c < H_.vertices; ++c)
      if (!(d[c].imag() > 0.0)) throw SolverError("Herglotz sign violated in tree lift");
  return b;
}

Block TreeLiftModel::offdiag(const GroupElement& g, cplx z) const {
  if (g.word.empty()) return solve_diag(z);
  const auto G = edge_greens(z);
  const auto d = lift_diag(*this, G, z);
  const int E = static_cast<int>(H_.edges.size());
  Block b = Block::Zero(H_.vertices, H_.vertices);
  // path j_1 = last letter, ..., j_k = first letter
  std::vector<int> path;
  for (auto it = g.word.rbegin(); it != g.word.rend(); ++it) {
    const int l = *it;
    if (l == 0 || std::abs(l) > E) throw ArgumentError("element does not belong to the model's group");
    path.push_back(l > 0 ? 2 * (l - 1) : 2 * (-l - 1) + 1);
  }
  for (std::size_t t = 1; t < path.size(); ++t)
    if (tail(path[t]) != head(path[t - 1])) return b;
  cplx v = d[tail(path.front())];
  for (int j : path) v *= -a_[j / 2] * G[j];
  b(tail(path.front()), head(path.back())) = v;
  return b;
}

std::vector<cplx> TreeLiftModel::monomial_shells(const std::vector<cplx>& zs, const std::vector<int>& alpha,
                                                 const std::vector<int>& beta, int L) const {
  const int r = H_.vertices;
  const int n = 2 * static_cast<int>(H_.edges.size());
  std::vector<cplx> init(r, 1.0), step(n, 1.0);
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const auto G = edge_greens(zs[k]);
    const auto d = lift_diag(*this, G, zs[k]);
    for (int c = 0; c < r; ++c) init[c] *= monomial(d[c], alpha[k], beta[k]);
    for (int j = 0; j < n; ++j) step[j] *= monomial(-a_[j / 2] * G[j], alpha[k], beta[k]);
  }
  std::vector<cplx> out(L + 1, 0.0);
  for (int c = 0; c < r; ++c) out[0] += init[c];
  if (L == 0 || n == 0) return out;
  std::vector<cplx> V(n), W(n);
  for (int j = 0; j < n; ++j) V[j] = init[tail(j)] * step[j];
  // incoming lists: predecessors k of j with head(k) = tail(j), k ≠ reverse j
  std::vector<std::vector<int>> pred(n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (head(k) == tail(j) && k != (j ^ 1)) pred[j].push_back(k);
  for (int l = 1; l <= L; ++l) {
    for (int j = 0; j < n; ++j) out[l] += V[j];
    if (l == L) break;
    for (int j = 0; j < n; ++j) {
      cplx s = 0.0;
      for (int k : pred[j]) s += V[k];
      W[j] = s * step[j];
    }
    std::swap(V, W);
  }
  return out;
}

std::vector<double> TreeLiftModel::fourth_shells(cplx z, int L) const {
  auto out = ResolventModel::fourth_shells(z, L);
  const Block d = solve_diag(z);
  double f = 0.0;
  for (int c = 0; c < H_.vertices; ++c) f += d(c, c).imag() * d(c, c).imag();
  out[0] = f * f;
  return out;
}

std::vector<double> TreeLiftModel::modulus4_shells(cplx z, int L) const {
  auto out = ResolventModel::modulus4_shells(z, L);
  const Block d = solve_diag(z);
  double f = 0.0;
  for (int c = 0; c < H_.vertices; ++c) f += std::norm(d(c, c));
  out[0] = f * f;
  return out;
}

// ---------------------------------------------------------------- cartesian

CartesianModel::CartesianModel(Eigen::MatrixXd A, ModelPtr inner) : A_(std::move(A)), inner_(std::move(inner)) {
  if (!inner_) throw ArgumentError("cartesian model needs an inner model");
  if (inner_->block_size() != 1) throw ArgumentError("cartesian model needs a scalar inner model");
  if (A_.rows() != A_.cols() || A_.rows() == 0) throw ArgumentError("cartesian model needs a square matrix");
  if ((A_ - A_.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ArgumentError("cartesian model needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A_);
  const auto& ev = es.eigenvalues();
  const auto& U = es.eigenvectors();
  const int r = static_cast<int>(A_.rows());
  for (int i = 0; i < r;) {
    int j = i + 1;
    while (j < r && ev[j] - ev[j - 1] <= 1e-9 * std::max(1.0, std::abs(ev[j]))) ++j;
    Eigen::MatrixXd P = U.middleCols(i, j - i) * U.middleCols(i, j - i).transpose();
    mu_.push_back(ev.segment(i, j - i).mean());
    mult_.push_back(j - i);
    proj_.push_back(P);
    i = j;
  }
}

std::string CartesianModel::name() const {
  std::ostringstream os;
  os << "Cartesian(r=" << A_.rows() << "," << inner_->name() << ")";
  return os.str();
}

AlgebraElement CartesianModel::symbol() const {
  const int r = static_cast<int>(A_.rows());
  AlgebraElement p(spec(), r);
  const auto q = inner_->symbol();
  for (const auto& [g, b] : q.terms()) p.add(g, Block(b(0, 0) * Block::Identity(r, r)));
  p.add(identity(*spec()), Block(A_.cast<cplx>()));
  return p;
}

double CartesianModel::norm_bound() const {
  double a = 0.0;
  for (double m : mu_) a = std::max(a, std::abs(m));
  return a + inner_->norm_bound();
}

Block CartesianModel::solve_diag(cplx z) const {
  const int r = static_cast<int>(A_.rows());
  Block b = Block::Zero(r, r);
  for (std::size_t k = 0; k < mu_.size(); ++k) b += inner_->solve_diag(z - mu_[k])(0, 0) * proj_[k].cast<cplx>();
  return b;
}

Block CartesianModel::offdiag(const GroupElement& g, cplx z) const {
  const int r = static_cast<int>(A_.rows());
  Block b = Block::Zero(r, r);
  for (std::size_t k = 0; k < mu_.size(); ++k) b += inner_->offdiag(g, z - mu_[k])(0, 0) * proj_[k].cast<cplx>();
  return b;
}

std::vector<cplx> CartesianModel::monomial_shells(const std::vector<cplx>&, const std::vector<int>&,
                                                  const std::vector<int>&, int) const {
  throw ArgumentError("cartesian blocks are not single-entry; use the norm shells");
}

std::vector<double> CartesianModel::ward_shells(cplx z, int L) const {
  std::vector<double> out(L + 1, 0.0);
  for (std::size_t k = 0; k < mu_.size(); ++k) {
    auto s = inner_->monomial_shells({z - mu_[k]}, {1}, {1}, L);
    for (int l = 0; l <= L; ++l) out[l] += mult_[k] * s[l].real();
  }
  return out;
}

std::vector<double> CartesianModel::fourth_shells(cplx z, int L) const {
  // ‖Im R(e,g)‖_F⁴ = (Σ_k m_k (Im R_k)²)², (Im v)² = (−v² + 2 v v̄ − v̄²)/4
  struct Term {
    int a, b;
    double c;
  };
  const Term terms[3] = {{2, 0, -0.25}, {1, 1, 0.5}, {0, 2, -0.25}};
  std::vector<double> out(L + 1, 0.0);
  const std::size_t K = mu_.size();
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = k; q < K; ++q) {
      const double mult = mult_[k] * mult_[q] * (k == q ? 1.0 : 2.0);
      for (const auto& s : terms) {
        for (const auto& t : terms) {
          std::vector<cplx> v;
          if (k == q) v = inner_->monomial_shells({z - mu_[k]}, {s.a + t.a}, {s.b + t.b}, L);
          else v = inner_->monomial_shells({z - mu_[k], z - mu_[q]}, {s.a, t.a}, {s.b, t.b}, L);
          for (int l = 0; l <= L; ++l) out[l] += mult * s.c * t.c * v[l].real();
        }
      }
    }
  }
  for (auto& v : out) v = std::max(v, 0.0);
  return out;
}

std::vector<double> CartesianModel::modulus4_shells(cplx z, int L) const {
  std::vector<double> out(L + 1, 0.0);
  const std::size_t K = mu_.size();
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = k; q < K; ++q) {
      const double mult = mult_[k] * mult_[q] * (k == q ? 1.0 : 2.0);
      std::vector<cplx> v;
      if (k == q) v = inner_->monomial_shells({z - mu_[k]}, {2}, {2}, L);
      else v = inner_->monomial_shells({z - mu_[k], z - mu_[q]}, {1, 1}, {1, 1}, L);
      for (int l = 0; l <= L; ++l) out[l] += mult * v[l].real();
    }
  }
  return out;
}

// ---------------------------------------------------------------- generic queries

WardReport ward_check(const ResolventModel& m, cplx z, int radius, double tol) {
  if (!(z.imag() > 0.0)) throw PreconditionError("ward check needs Im z > 0");
  WardReport rep;
  rep.z = z;
  rep.target = m.solve_diag(z).trace().imag();
  const double eta = z.imag();
  int R = radius >= 0 ? radius : 16;
  while (true) {
    auto s = m.ward_shells(z, R);
    rep.radius = R;
    rep.partial = 0.0;
    for (int l = 0; l <= R; ++l) rep.partial += eta * s[l];
    rep.contraction = R >= 1 ? contraction(s, R) : 0.0;
    rep.tail = eta * s[R] * tail_series(rep.contraction, R, 0.0);
    if (radius >= 0) break;
    if (rep.tail <= tol * std::max(rep.target, 1e-300) || 2 * R > m.max_radius()) break;
    R *= 2;
  }
  rep.residual = std::abs(rep.target - rep.partial);
  return rep;
}

FourthMomentReport fourth_moment(const ResolventModel& m, cplx z, double C1_prime, int radius, double rel_tol) {
  if (!(z.imag() > 0.0)) throw PreconditionError("fourth moment needs Im z > 0");
  FourthMomentReport rep;
  rep.z = z;
  rep.C1_prime = C1_prime;
  const double eta2 = z.imag() * z.imag();
  int R = radius >= 0 ? radius : 16;
  while (true) {
    auto f = m.fourth_shells(z, R);
    auto m4 = m.modulus4_shells(z, R);
    rep.radius = R;
    rep.partial = 0.0;
    for (int l = 1; l <= R; ++l) rep.partial += eta2 * f[l] * std::pow(static_cast<double>(l), C1_prime);
    rep.contraction = R >= 1 ? contraction(m4, R) : 0.0;
    rep.tail_available = rep.contraction < 1.0;
    rep.tail = rep.tail_available
                   ? eta2 * m4[R] * std::pow(static_cast<double>(std::max(R, 1)), C1_prime) *
                         tail_series(rep.contraction, R, C1_prime)
                   : std::numeric_limits<double>::infinity();
    if (radius >= 0) break;
    if (rep.tail <= rel_tol * rep.partial || rep.tail < 1e-300 || 2 * R > m.max_radius()) break;
    R *= 2;
  }
  return rep;
}

AcReport check_ac(const ResolventModel& m, const std::vector<double>& Es, const std::vector<double>& etas,
                  double floor) {
  AcReport rep;
  rep.min = std::numeric_limits<double>::infinity();
  rep.max = -std::numeric_limits<double>::infinity();
  for (double eta : etas) {
    if (!(eta > 0.0)) throw PreconditionError("AC grid needs η > 0");
    for (double E : Es) {
      const double v = m.solve_diag(cplx(E, eta)).trace().imag();
      rep.min = std::min(rep.min, v);
      rep.max = std::max(rep.max, v);
      if (!(v > floor)) rep.violations.emplace_back(E, eta);
    }
  }
  rep.C0 = std::max(rep.min > 0.0 ? 1.0 / rep.min : std::numeric_limits<double>::infinity(), rep.max);
  return rep;
}

namespace {

double neville_at_zero(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> p = y;
  const int n = static_cast<int>(x.size());
  for (int k = 1; k < n; ++k)
    for (int i = 0; i + k < n; ++i) p[i] = (x[i + k] * p[i] - x[i] * p[i + 1]) / (x[i + k] - x[i]);
  return p[0];
}

}  // namespace

DensityEstimate spectral_density(const ResolventModel& m, double E, const std::vector<double>& etas) {
  if (etas.empty()) throw ArgumentError("empty η ladder");
  DensityEstimate d;
  d.E = E;
  d.ladder = etas;
  const double r = m.block_size();
  for (double eta : etas) {
    if (!(eta > 0.0)) throw PreconditionError("density ladder needs η > 0");
    d.samples.push_back(m.solve_diag(cplx(E, eta)).trace().imag() / (std::numbers::pi * r));
  }
  bool dec = true, inc = true;
  for (std::size_t i = 1; i < etas.size(); ++i) {
    dec = dec && etas[i] < etas[i - 1];
    inc = inc && etas[i] > etas[i - 1];
  }
  d.monotone_ladder = dec || inc;
  std::vector<double> x = etas, y = d.samples;
  if (inc) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  if (x.size() == 1) {
    d.value = y[0];
    d.error = std::abs(y[0]);
    return d;
  }
  d.value = neville_at_zero(x, y);
  // drop the largest η
  std::vector<double> x2(x.begin() + 1, x.end()), y2(y.begin() + 1, y.end());
  d.error = std::abs(d.value - neville_at_zero(x2, y2));
  d.value = std::max(d.value, 0.0);
  return d;
}

std::vector<ScanRow> resolvent_scan(const ResolventModel& m, const std::vector<double>& Es,
                                    const std::vector<double>& etas, double C1_prime, bool with_moments) {
  std::vector<ScanRow> rows;
  for (double eta : etas) {
    for (double E : Es) {
      ScanRow row;
      row.E = E;
      row.eta = eta;
      const cplx t = m.solve_diag(cplx(E, eta)).trace();
      row.re = t.real();
      row.im = t.imag();
      if (with_moments) {
        row.fourth = fourth_moment(m, cplx(E, eta), C1_prime).total();
        row.ward_residual = ward_check(m, cplx(E, eta)).residual;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_scan_csv(const std::vector<ScanRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out.precision(17);
  out << "E,eta,re,im,fourth_moment,ward_residual\n";
  for (const auto& r : rows)
    out << r.E << ',' << r.eta << ',' << r.re << ',' << r.im << ',' << r.fourth << ',' << r.ward_residual << '\n';
}

ModelPtr model_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "RegularTree") return std::make_shared<RegularTreeModel>(j.at("d").get<int>(), j.value("w", 1.0));
  if (type == "Lattice")
    return std::make_shared<LatticeModel>(j.at("d").get<int>(), j.value("weights", std::vector<double>{}));
  if (type == "FreeProduct") {
    auto spec = std::make_shared<GroupSpec>(group_spec_from_json(j.at("group")));
    if (j.contains("symbol")) return std::make_shared<FreeProductModel>(algebra_from_json(spec, j.at("symbol")));
    return FreeProductModel::standard(spec, j.value("w", 1.0));
  }
  if (type == "TreeLift")
    return std::make_shared<TreeLiftModel>(parse_base_graph(j.at("base").get<std::string>()),
                                           j.value("weights", std::vector<double>{}));
  if (type == "Cartesian") {
    const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd A(rows.size(), rows.size());
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].size() != rows.size()) throw ArgumentError("Cartesian matrix must be square");
      for (std::size_t b = 0; b < rows.size(); ++b) A(a, b) = rows[a][b];
    }
    return std::make_shared<CartesianModel>(A, model_from_json(j.at("inner")));
  }
  throw ArgumentError("unknown model type " + type);
}

}  // namespace qmix
