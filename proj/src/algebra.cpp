#include "qmix/algebra.hpp"

#include <algorithm>
#include <cmath>

namespace qmix {

AlgebraElement::AlgebraElement(SpecPtr spec, int block_size) : spec_(std::move(spec)), r_(block_size) {
  if (!spec_) throw ArgumentError("algebra element needs a group spec");
  if (r_ < 1) throw ArgumentError("block size must be positive");
}

AlgebraElement AlgebraElement::delta(SpecPtr spec, const GroupElement& g, const Block& coeff) {
  if (coeff.rows() != coeff.cols()) throw ArgumentError("coefficient block must be square");
  AlgebraElement p(std::move(spec), static_cast<int>(coeff.rows()));
  p.add(g, coeff);
  return p;
}

AlgebraElement AlgebraElement::delta(SpecPtr spec, const GroupElement& g, cplx coeff) {
  return delta(std::move(spec), g, Block::Constant(1, 1, coeff));
}

AlgebraElement AlgebraElement::unit(SpecPtr spec, int block_size) {
  GroupElement e = identity(*spec);
  return delta(std::move(spec), e, Block::Identity(block_size, block_size));
}

AlgebraElement AlgebraElement::indicator(SpecPtr spec, const GeneratingSet& S, double weight) {
  AlgebraElement p(std::move(spec), 1);
  for (const auto& s : S.generators) p.add(s, cplx(weight, 0.0));
  return p;
}

Block AlgebraElement::coeff(const GroupElement& g) const {
  auto it = terms_.find(g);
  if (it == terms_.end()) return Block::Zero(r_, r_);
  return it->second;
}

void AlgebraElement::add(const GroupElement& g, const Block& b) {
  if (b.rows() != r_ || b.cols() != r_) throw ArgumentError("block size mismatch");
  auto [it, inserted] = terms_.try_emplace(g, b);
  if (!inserted) {
    it->second += b;
    if (it->second.cwiseAbs().maxCoeff() == 0.0) terms_.erase(it);
  } else if (b.cwiseAbs().maxCoeff() == 0.0) {
    terms_.erase(it);
  }
}

void AlgebraElement::add(const GroupElement& g, cplx c) {
  if (r_ != 1) throw ArgumentError("scalar coefficient on a block element");
  add(g, Block::Constant(1, 1, c));
}

void AlgebraElement::prune(double rel_tol) {
  double l1 = 0.0;
  for (const auto& [g, b] : terms_) l1 += block_norm(b);
  const double cut = rel_tol * l1;
  for (auto it = terms_.begin(); it != terms_.end();) {
    if (block_norm(it->second) <= cut)
      it = terms_.erase(it);
    else
      ++it;
  }
}

bool AlgebraElement::is_self_adjoint(double tol) const {
  for (const auto& [g, b] : terms_) {
    Block other = coeff(inverse(*spec_, g));
    if ((other - b.adjoint()).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

double AlgebraElement::max_abs_difference(const AlgebraElement& o) const {
  check_compatible(o);
  double m = 0.0;
  for (const auto& [g, b] : terms_) m = std::max(m, (b - o.coeff(g)).cwiseAbs().maxCoeff());
  for (const auto& [g, b] : o.terms_)
    if (!terms_.count(g)) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

void AlgebraElement::check_compatible(const AlgebraElement& o) const {
  if (!spec_ || !o.spec_ || (spec_ != o.spec_ && *spec_ != *o.spec_)) throw ArgumentError("group spec mismatch");
  if (r_ != o.r_) throw ArgumentError("block size mismatch");
}

AlgebraElement& AlgebraElement::operator+=(const AlgebraElement& o) {
  check_compatible(o);
  for (const auto& [g, b] : o.terms_) add(g, b);
  return *this;
}

AlgebraElement& AlgebraElement::operator-=(const AlgebraElement& o) {
  check_compatible(o);
  for (const auto& [g, b] : o.terms_) add(g, Block(-b));
  return *this;
}

AlgebraElement& AlgebraElement::operator*=(cplx c) {
  if (c == cplx(0.0)) {
    terms_.clear();
    return *this;
  }
  for (auto& [g, b] : terms_) b *= c;
  return *this;
}

double block_norm(const Block& b) {
  if (b.size() == 1) return std::abs(b(0, 0));
  Eigen::JacobiSVD<Block> svd(b);
  return svd.singularValues()(0);
}

AlgebraElement convolve(const AlgebraElement& p, const AlgebraElement& q) {
  if (!p.spec_ptr() || !q.spec_ptr() || (p.spec_ptr() != q.spec_ptr() && p.spec() != q.spec()))
    throw ArgumentError("group spec mismatch");
  if (p.block_size() != q.block_size()) throw ArgumentError("block size mismatch");
  AlgebraElement out(p.spec_ptr(), p.block_size());
  for (const auto& [g, a] : p.terms())
    for (const auto& [h, b] : q.terms()) out.add(multiply(p.spec(), g, h), Block(a * b));
  out.prune();
  return out;
}

AlgebraElement star(const AlgebraElement& p) {
  AlgebraElement out(p.spec_ptr(), p.block_size());
  for (const auto& [g, b] : p.terms()) out.add(inverse(p.spec(), g), Block(b.adjoint()));
  return out;
}

AlgebraElement apply_polynomial(const std::vector<double>& coeffs, const AlgebraElement& p) {
  const int r = p.block_size();
  AlgebraElement acc(p.spec_ptr(), r);
  if (coeffs.empty()) return acc;
  const AlgebraElement one = AlgebraElement::unit(p.spec_ptr(), r);
  acc = cplx(coeffs.back()) * one;
  for (std::size_t k = coeffs.size() - 1; k-- > 0;) {
    acc = convolve(acc, p);
    if (coeffs[k] != 0.0) acc += cplx(coeffs[k]) * one;
  }
  return acc;
}

AlgebraNorms norms(const AlgebraElement& p, const GeneratingSet& S) {
  AlgebraNorms n;
  double s2 = 0.0;
  for (const auto& [g, b] : p.terms()) {
    double v = block_norm(b);
    n.l1 += v;
    s2 += v * v;
    n.diam = std::max(n.diam, word_length(p.spec(), g, S));
  }
  n.l2 = std::sqrt(s2);
  return n;
}

AlgebraNorms norms(const AlgebraElement& p) { return norms(p, standard_generators(p.spec())); }

double rd_norm_bound(const AlgebraElement& p, double C1_prime, double C, const GeneratingSet& S) {
  if (!(C1_prime > 0.0)) throw ArgumentError("C1' must be positive");
  double s = 0.0;
  for (const auto& [g, b] : p.terms()) {
    double v = block_norm(b);
    s += v * v * std::pow(word_length(p.spec(), g, S) + 1.0, C1_prime);
  }
  return C * std::sqrt(s);
}

double rd_norm_bound(const AlgebraElement& p, double C1_prime, double C) {
  return rd_norm_bound(p, C1_prime, C, standard_generators(p.spec()));
}

nlohmann::json to_json(const AlgebraElement& p) {
  nlohmann::json out = nlohmann::json::array();
  const int r = p.block_size();
  for (const auto& [g, b] : p.terms()) {
    if (r == 1) {
      out.push_back({to_json(g), b(0, 0).real(), b(0, 0).imag()});
      continue;
    }
    nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
    for (int i = 0; i < r; ++i) {
      std::vector<double> rr(r), ii(r);
      for (int k = 0; k < r; ++k) {
        rr[k] = b(i, k).real();
        ii[k] = b(i, k).imag();
      }
      re.push_back(rr);
      im.push_back(ii);
    }
    out.push_back({to_json(g), re, im});
  }
  return out;
}

AlgebraElement algebra_from_json(SpecPtr spec, const nlohmann::json& j) {
  if (!j.is_array()) throw ArgumentError("algebra element must be a JSON array");
  int r = 1;
  if (!j.empty() && j.at(0).at(1).is_array()) r = static_cast<int>(j.at(0).at(1).size());
  AlgebraElement p(spec, r);
  for (const auto& t : j) {
    GroupElement g = group_element_from_json(*spec, t.at(0));
    Block b(r, r);
    if (r == 1) {
      b(0, 0) = cplx(t.at(1).get<double>(), t.at(2).get<double>());
    } else {
      for (int i = 0; i < r; ++i)
        for (int k = 0; k < r; ++k) b(i, k) = cplx(t.at(1).at(i).at(k).get<double>(), t.at(2).at(i).at(k).get<double>());
    }
    p.add(g, b);
  }
  return p;
}

}  // namespace qmix
