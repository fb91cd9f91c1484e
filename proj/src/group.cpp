#include "qmix/group.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace qmix {

void FiniteGroup::validate() {
  if (order < 1) throw ArgumentError("finite group order must be positive");
  if (table.size() != static_cast<std::size_t>(order) * order)
    throw ArgumentError("multiplication table has wrong size");
  for (int v : table)
    if (v < 0 || v >= order) throw ArgumentError("multiplication table entry out of range");

  identity = -1;
  for (int e = 0; e < order && identity < 0; ++e) {
    bool ok = true;
    for (int a = 0; a < order && ok; ++a) ok = mul(e, a) == a && mul(a, e) == a;
    if (ok) identity = e;
  }
  if (identity < 0) throw ArgumentError("multiplication table has no identity");

  inverse.assign(order, -1);
  for (int a = 0; a < order; ++a)
    for (int b = 0; b < order; ++b)
      if (mul(a, b) == identity && mul(b, a) == identity) inverse[a] = b;
  for (int a = 0; a < order; ++a)
    if (inverse[a] < 0) throw ArgumentError("multiplication table lacks inverses");

  for (int a = 0; a < order; ++a)
    for (int b = 0; b < order; ++b)
      for (int c = 0; c < order; ++c)
        if (mul(mul(a, b), c) != mul(a, mul(b, c))) throw ArgumentError("multiplication table is not associative");

  for (int s : generators) {
    if (s < 0 || s >= order || s == identity) throw ArgumentError("invalid factor generator");
    if (std::find(generators.begin(), generators.end(), inverse[s]) == generators.end())
      throw ArgumentError("factor generating set is not symmetric");
  }

  length.assign(order, -1);
  length[identity] = 0;
  std::deque<int> queue{identity};
  while (!queue.empty()) {
    int a = queue.front();
    queue.pop_front();
    for (int s : generators) {
      int b = mul(a, s);
      if (length[b] < 0) {
        length[b] = length[a] + 1;
        queue.push_back(b);
      }
    }
  }
  for (int l : length)
    if (l < 0) throw ArgumentError("factor generators do not generate the group");
}

FiniteGroup FiniteGroup::cyclic(int n) {
  FiniteGroup g;
  g.order = n;
  g.table.resize(static_cast<std::size_t>(n) * n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) g.table[static_cast<std::size_t>(a) * n + b] = (a + b) % n;
  if (n == 2)
    g.generators = {1};
  else if (n > 2)
    g.generators = {1, n - 1};
  g.validate();
  return g;
}

GroupSpec GroupSpec::free_group(int d) {
  if (d < 1) throw ArgumentError("free group needs at least one generator");
  GroupSpec s;
  s.kind_ = GroupKind::Free;
  s.rank_ = d;
  return s;
}

GroupSpec GroupSpec::free_product(std::vector<FiniteGroup> factors) {
  if (factors.empty()) throw ArgumentError("free product needs at least one factor");
  GroupSpec s;
  s.kind_ = GroupKind::FreeProduct;
  s.rank_ = static_cast<int>(factors.size());
  int offset = 0;
  for (auto& f : factors) {
    f.validate();
    s.offsets_.push_back(offset);
    offset += f.order;
  }
  s.factors_ = std::move(factors);
  return s;
}

GroupSpec GroupSpec::lattice(int d) {
  if (d < 1) throw ArgumentError("lattice rank must be positive");
  GroupSpec s;
  s.kind_ = GroupKind::Lattice;
  s.rank_ = d;
  return s;
}

GroupSpec GroupSpec::racg(int n, const std::vector<std::pair<int, int>>& commuting_edges) {
  if (n < 1) throw ArgumentError("RACG needs at least one generator");
  GroupSpec s;
  s.kind_ = GroupKind::Racg;
  s.rank_ = n;
  s.commuting_.assign(static_cast<std::size_t>(n) * n, 0);
  for (auto [a, b] : commuting_edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw ArgumentError("RACG edge out of range");
    if (a == b) throw ArgumentError("RACG diagram must have no loops");
    s.commuting_[static_cast<std::size_t>(a) * n + b] = 1;
    s.commuting_[static_cast<std::size_t>(b) * n + a] = 1;
  }
  return s;
}

int GroupSpec::factor_of(int letter) const {
  for (int f = rank_ - 1; f >= 0; --f)
    if (letter >= offsets_[f]) return letter < offsets_[f] + factors_[f].order ? f : -1;
  return -1;
}

int GroupSpec::letter_count() const {
  switch (kind_) {
    case GroupKind::Free:
    case GroupKind::Lattice:
    case GroupKind::Racg:
      return rank_;
    case GroupKind::FreeProduct:
      return offsets_.back() + factors_.back().order;
  }
  return 0;
}

std::vector<std::pair<int, int>> GroupSpec::commuting_edges() const {
  std::vector<std::pair<int, int>> out;
  if (kind_ != GroupKind::Racg) return out;
  for (int a = 0; a < rank_; ++a)
    for (int b = a + 1; b < rank_; ++b)
      if (commute(a, b)) out.emplace_back(a, b);
  return out;
}

std::string GroupSpec::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case GroupKind::Free:
      os << "F_" << rank_;
      break;
    case GroupKind::Lattice:
      os << "Z^" << rank_;
      break;
    case GroupKind::Racg:
      os << "RACG(" << rank_ << ")";
      break;
    case GroupKind::FreeProduct:
      for (int f = 0; f < rank_; ++f) os << (f ? "*" : "") << "G" << factors_[f].order;
      break;
  }
  return os.str();
}

bool GroupSpec::operator==(const GroupSpec& o) const {
  if (kind_ != o.kind_ || rank_ != o.rank_) return false;
  if (kind_ == GroupKind::Racg) return commuting_ == o.commuting_;
  if (kind_ == GroupKind::FreeProduct) {
    for (int f = 0; f < rank_; ++f)
      if (factors_[f].table != o.factors_[f].table || factors_[f].generators != o.factors_[f].generators) return false;
  }
  return true;
}

std::size_t GroupElementHash::operator()(const GroupElement& g) const noexcept {
  std::size_t h = 0xcbf29ce484222325ULL ^ g.word.size();
  for (int v : g.word) {
    h ^= static_cast<std::size_t>(static_cast<unsigned>(v)) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

GroupElement identity(const GroupSpec& spec) {
  GroupElement e;
  if (spec.kind() == GroupKind::Lattice) e.word.assign(spec.rank(), 0);
  return e;
}

bool is_identity(const GroupSpec& spec, const GroupElement& g) {
  if (spec.kind() == GroupKind::Lattice)
    return std::all_of(g.word.begin(), g.word.end(), [](int v) { return v == 0; });
  return g.word.empty();
}

namespace {

void check_signed_letter(const GroupSpec& spec, int letter) {
  if (letter == 0 || std::abs(letter) > spec.rank())
    throw ArgumentError("invalid generator letter " + std::to_string(letter));
}

// lexicographically least word in the commutation class of a reduced RACG word
std::vector<int> racg_lex_normal(const GroupSpec& spec, std::vector<int> w) {
  std::vector<int> out;
  out.reserve(w.size());
  while (!w.empty()) {
    std::size_t best = w.size();
    for (std::size_t k = 0; k < w.size(); ++k) {
      bool available = true;
      for (std::size_t j = 0; j < k && available; ++j)
        available = w[j] != w[k] && spec.commute(w[j], w[k]);
      if (available && (best == w.size() || w[k] < w[best])) best = k;
    }
    out.push_back(w[best]);
    w.erase(w.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

}  // namespace

GroupElement reduce(const GroupSpec& spec, const std::vector<int>& raw) {
  GroupElement g;
  switch (spec.kind()) {
    case GroupKind::Free: {
      for (int l : raw) {
        check_signed_letter(spec, l);
        if (!g.word.empty() && g.word.back() == -l)
          g.word.pop_back();
        else
          g.word.push_back(l);
      }
      break;
    }
    case GroupKind::Lattice: {
      g.word.assign(spec.rank(), 0);
      for (int l : raw) {
        check_signed_letter(spec, l);
        g.word[std::abs(l) - 1] += l > 0 ? 1 : -1;
      }
      break;
    }
    case GroupKind::FreeProduct: {
      const auto& fs = spec.factors();
      for (int l : raw) {
        int f = spec.factor_of(l);
        if (f < 0) throw ArgumentError("invalid free-product letter " + std::to_string(l));
        int a = l - spec.factor_offset(f);
        if (a == fs[f].identity) continue;
        if (!g.word.empty() && spec.factor_of(g.word.back()) == f) {
          int b = fs[f].mul(g.word.back() - spec.factor_offset(f), a);
          if (b == fs[f].identity)
            g.word.pop_back();
          else
            g.word.back() = spec.factor_offset(f) + b;
        } else {
          g.word.push_back(l);
        }
      }
      break;
    }
    case GroupKind::Racg: {
      std::vector<int> w;
      for (int s : raw) {
        if (s < 0 || s >= spec.rank()) throw ArgumentError("invalid RACG letter " + std::to_string(s));
        bool cancelled = false;
        for (std::size_t k = w.size(); k-- > 0;) {
          if (w[k] == s) {
            w.erase(w.begin() + static_cast<std::ptrdiff_t>(k));
            cancelled = true;
            break;
          }
          if (!spec.commute(w[k], s)) break;
        }
        if (!cancelled) w.push_back(s);
      }
      g.word = racg_lex_normal(spec, std::move(w));
      break;
    }
  }
  return g;
}

std::vector<int> letters(const GroupSpec& spec, const GroupElement& g) {
  if (spec.kind() != GroupKind::Lattice) return g.word;
  std::vector<int> out;
  for (int i = 0; i < spec.rank(); ++i) {
    int c = g.word[i];
    for (int k = 0; k < std::abs(c); ++k) out.push_back(c > 0 ? i + 1 : -(i + 1));
  }
  return out;
}

GroupElement multiply(const GroupSpec& spec, const GroupElement& a, const GroupElement& b) {
  if (spec.kind() == GroupKind::Lattice) {
    if (a.word.size() != static_cast<std::size_t>(spec.rank()) || b.word.size() != a.word.size())
      throw ArgumentError("lattice element has wrong rank");
    GroupElement c = a;
    for (std::size_t i = 0; i < c.word.size(); ++i) c.word[i] += b.word[i];
    return c;
  }
  std::vector<int> raw = a.word;
  raw.insert(raw.end(), b.word.begin(), b.word.end());
  return reduce(spec, raw);
}

GroupElement inverse(const GroupSpec& spec, const GroupElement& a) {
  GroupElement out;
  switch (spec.kind()) {
    case GroupKind::Free:
      out.word.assign(a.word.rbegin(), a.word.rend());
      for (int& l : out.word) l = -l;
      return out;
    case GroupKind::Lattice:
      out = a;
      for (int& l : out.word) l = -l;
      return out;
    case GroupKind::FreeProduct:
      out.word.assign(a.word.rbegin(), a.word.rend());
      for (int& l : out.word) {
        int f = spec.factor_of(l);
        l = spec.factor_offset(f) + spec.factors()[f].inverse[l - spec.factor_offset(f)];
      }
      return out;
    case GroupKind::Racg:
      out.word = racg_lex_normal(spec, std::vector<int>(a.word.rbegin(), a.word.rend()));
      return out;
  }
  return out;
}

GroupElement generator(const GroupSpec& spec, int letter) { return reduce(spec, {letter}); }

GeneratingSet standard_generators(const GroupSpec& spec) {
  GeneratingSet S;
  switch (spec.kind()) {
    case GroupKind::Free:
    case GroupKind::Lattice:
      for (int i = 1; i <= spec.rank(); ++i) {
        S.generators.push_back(generator(spec, i));
        S.generators.push_back(generator(spec, -i));
      }
      break;
    case GroupKind::FreeProduct:
      for (int f = 0; f < spec.rank(); ++f)
        for (int s : spec.factors()[f].generators) S.generators.push_back(generator(spec, spec.factor_offset(f) + s));
      break;
    case GroupKind::Racg:
      for (int i = 0; i < spec.rank(); ++i) S.generators.push_back(generator(spec, i));
      break;
  }
  return S;
}

std::vector<BallEntry> ball(const GroupSpec& spec, const GeneratingSet& S, int r) {
  std::vector<BallEntry> out;
  std::unordered_set<GroupElement, GroupElementHash> seen;
  GroupElement e = identity(spec);
  seen.insert(e);
  out.push_back({e, 0});
  std::size_t frontier_begin = 0;
  for (int len = 1; len <= r; ++len) {
    std::size_t frontier_end = out.size();
    for (std::size_t k = frontier_begin; k < frontier_end; ++k) {
      for (const auto& s : S.generators) {
        GroupElement h = multiply(spec, out[k].element, s);
        if (seen.insert(h).second) out.push_back({std::move(h), len});
      }
    }
    if (out.size() == frontier_end) break;
    frontier_begin = frontier_end;
  }
  std::sort(out.begin(), out.end(), [](const BallEntry& a, const BallEntry& b) {
    return a.length != b.length ? a.length < b.length : a.element < b.element;
  });
  return out;
}

namespace {
bool is_standard(const GroupSpec& spec, const GeneratingSet& S) {
  auto std_set = standard_generators(spec).generators;
  if (std_set.size() != S.generators.size()) return false;
  auto a = std_set;
  auto b = S.generators;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}
}  // namespace

int word_length(const GroupSpec& spec, const GroupElement& a) {
  switch (spec.kind()) {
    case GroupKind::Free:
    case GroupKind::Racg:
      return static_cast<int>(a.word.size());
    case GroupKind::Lattice: {
      int n = 0;
      for (int v : a.word) n += std::abs(v);
      return n;
    }
    case GroupKind::FreeProduct: {
      int n = 0;
      for (int l : a.word) {
        int f = spec.factor_of(l);
        n += spec.factors()[f].length[l - spec.factor_offset(f)];
      }
      return n;
    }
  }
  return 0;
}

int word_length(const GroupSpec& spec, const GroupElement& a, const GeneratingSet& S) {
  if (is_standard(spec, S)) return word_length(spec, a);
  if (is_identity(spec, a)) return 0;
  std::unordered_set<GroupElement, GroupElementHash> seen{identity(spec)};
  std::vector<GroupElement> frontier{identity(spec)};
  constexpr std::size_t kLimit = 5'000'000;
  for (int len = 1; !frontier.empty() && seen.size() < kLimit; ++len) {
    std::vector<GroupElement> next;
    for (const auto& g : frontier)
      for (const auto& s : S.generators) {
        GroupElement h = multiply(spec, g, s);
        if (h == a) return len;
        if (seen.insert(h).second) next.push_back(std::move(h));
      }
    frontier = std::move(next);
  }
  throw ArgumentError("element not reached by the generating set within the search limit");
}

std::optional<std::vector<int>> find_diagram_automorphism(const GroupSpec& spec, std::vector<int> partial) {
  if (spec.kind() != GroupKind::Racg) throw ArgumentError("diagram automorphisms need a RACG");
  const int n = spec.rank();
  if (static_cast<int>(partial.size()) != n) throw ArgumentError("partial assignment has wrong size");
  std::vector<int> degree(n, 0);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) degree[a] += spec.commute(a, b) ? 1 : 0;
  std::vector<char> used(n, 0);
  for (int v = 0; v < n; ++v) {
    if (partial[v] < 0) continue;
    if (partial[v] >= n || used[partial[v]] || degree[partial[v]] != degree[v]) return std::nullopt;
    used[partial[v]] = 1;
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (partial[a] >= 0 && partial[b] >= 0 && spec.commute(a, b) != spec.commute(partial[a], partial[b]))
        return std::nullopt;

  std::vector<int> order;
  for (int v = 0; v < n; ++v)
    if (partial[v] < 0) order.push_back(v);

  std::function<bool(std::size_t)> extend = [&](std::size_t k) -> bool {
    if (k == order.size()) return true;
    int v = order[k];
    for (int img = 0; img < n; ++img) {
      if (used[img] || degree[img] != degree[v]) continue;
      bool ok = true;
      for (int w = 0; w < n && ok; ++w)
        if (partial[w] >= 0) ok = spec.commute(v, w) == spec.commute(img, partial[w]);
      if (!ok) continue;
      partial[v] = img;
      used[img] = 1;
      if (extend(k + 1)) return true;
      partial[v] = -1;
      used[img] = 0;
    }
    return false;
  };
  if (!extend(0)) return std::nullopt;
  return partial;
}

SuperflexResult is_superflexible(const GroupSpec& spec) {
  if (spec.kind() != GroupKind::Racg) throw ArgumentError("superflexibility is defined for RACG diagrams");
  const int n = spec.rank();
  SuperflexResult res;
  res.superflexible = true;
  auto try_condition = [&](int fixed, int a, int b) -> std::optional<std::vector<int>> {
    std::vector<int> partial(n, -1);
    partial[fixed] = fixed;
    for (int v = 0; v < n; ++v)
      if (spec.commute(fixed, v)) partial[v] = v;
    if (partial[a] >= 0 || partial[b] >= 0) return std::nullopt;
    partial[a] = b;
    partial[b] = a;
    return find_diagram_automorphism(spec, partial);
  };
  for (int s = 0; s < n; ++s) {
    for (int t = s + 1; t < n; ++t) {
      if (spec.commute(s, t)) continue;
      bool found = false;
      for (int u = 0; u < n && !found; ++u) {
        if (u == s || u == t || spec.commute(u, s) || spec.commute(u, t)) continue;
        if (auto phi = try_condition(s, t, u)) {
          res.witnesses.push_back({s, t, u, 1, *phi});
          found = true;
        } else if (auto psi = try_condition(t, s, u)) {
          res.witnesses.push_back({s, t, u, 2, *psi});
          found = true;
        }
      }
      if (!found) {
        res.superflexible = false;
        res.witnesses.clear();
        res.failing_pair = std::make_pair(s, t);
        return res;
      }
    }
  }
  return res;
}

nlohmann::json to_json(const GroupSpec& spec) {
  nlohmann::json j;
  switch (spec.kind()) {
    case GroupKind::Free:
      j = {{"variant", "FreeGroup"}, {"d", spec.rank()}};
      break;
    case GroupKind::Lattice:
      j = {{"variant", "IntegerLattice"}, {"d", spec.rank()}};
      break;
    case GroupKind::Racg: {
      nlohmann::json edges = nlohmann::json::array();
      for (auto [a, b] : spec.commuting_edges()) edges.push_back({a, b});
      j = {{"variant", "RACG"}, {"n", spec.rank()}, {"edges", edges}};
      break;
    }
    case GroupKind::FreeProduct: {
      nlohmann::json fs = nlohmann::json::array();
      for (const auto& f : spec.factors())
        fs.push_back({{"order", f.order}, {"table", f.table}, {"generators", f.generators}});
      j = {{"variant", "FreeProductFinite"}, {"factors", fs}};
      break;
    }
  }
  return j;
}

GroupSpec group_spec_from_json(const nlohmann::json& j) {
  try {
    const std::string v = j.at("variant").get<std::string>();
    if (v == "FreeGroup") return GroupSpec::free_group(j.at("d").get<int>());
    if (v == "IntegerLattice") return GroupSpec::lattice(j.at("d").get<int>());
    if (v == "RACG") {
      std::vector<std::pair<int, int>> edges;
      for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
      return GroupSpec::racg(j.at("n").get<int>(), edges);
    }
    if (v == "FreeProductFinite") {
      std::vector<FiniteGroup> fs;
      for (const auto& f : j.at("factors")) {
        if (f.contains("cyclic")) {
          fs.push_back(FiniteGroup::cyclic(f.at("cyclic").get<int>()));
          continue;
        }
        FiniteGroup g;
        g.order = f.at("order").get<int>();
        g.table = f.at("table").get<std::vector<int>>();
        g.generators = f.at("generators").get<std::vector<int>>();
        fs.push_back(std::move(g));
      }
      return GroupSpec::free_product(std::move(fs));
    }
    throw ArgumentError("unknown group variant '" + v + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed group spec: ") + e.what());
  }
}

nlohmann::json to_json(const GroupElement& g) { return g.word; }

GroupElement group_element_from_json(const GroupSpec& spec, const nlohmann::json& j) {
  auto raw = j.get<std::vector<int>>();
  if (spec.kind() == GroupKind::Lattice) {
    if (raw.size() != static_cast<std::size_t>(spec.rank())) throw ArgumentError("lattice element has wrong rank");
    return GroupElement{raw};
  }
  return reduce(spec, raw);
}

std::string to_string(const GroupSpec& spec, const GroupElement& g) {
  std::ostringstream os;
  if (spec.kind() == GroupKind::Lattice) {
    os << "(";
    for (std::size_t i = 0; i < g.word.size(); ++i) os << (i ? "," : "") << g.word[i];
    os << ")";
    return os.str();
  }
  if (g.word.empty()) return "e";
  for (std::size_t i = 0; i < g.word.size(); ++i) {
    if (i) os << "*";
    int l = g.word[i];
    switch (spec.kind()) {
      case GroupKind::Free:
        os << "g" << std::abs(l) << (l < 0 ? "^-1" : "");
        break;
      case GroupKind::Racg:
        os << "s" << l;
        break;
      case GroupKind::FreeProduct: {
        int f = spec.factor_of(l);
        os << "f" << f << ":" << l - spec.factor_offset(f);
        break;
      }
      default:
        break;
    }
  }
  return os.str();
}

}  // namespace qmix
