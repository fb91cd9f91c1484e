#include "qmix/action.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "qmix/rng.hpp"

namespace qmix {

PermutationAction::PermutationAction(SpecPtr spec, int N, std::vector<std::vector<int>> perms, nlohmann::json metadata)
    : spec_(std::move(spec)), N_(N), perms_(std::move(perms)), metadata_(std::move(metadata)) {
  if (!spec_) throw ArgumentError("action needs a group spec");
  if (N_ < 1) throw ArgumentError("action needs at least one point");
  if (metadata_.is_null()) metadata_ = nlohmann::json::object();
  validate();
  if (spec_->kind() == GroupKind::Free || spec_->kind() == GroupKind::Lattice) {
    inverse_perms_.resize(perms_.size());
    for (std::size_t i = 0; i < perms_.size(); ++i) {
      inverse_perms_[i].resize(N_);
      for (int x = 0; x < N_; ++x) inverse_perms_[i][perms_[i][x]] = x;
    }
  }
}

void PermutationAction::validate() const {
  const auto& spec = *spec_;
  const std::size_t expected =
      spec.kind() == GroupKind::FreeProduct ? static_cast<std::size_t>(spec.letter_count()) : static_cast<std::size_t>(spec.rank());
  if (perms_.size() != expected) throw ValidationError("wrong number of generator permutations");
  std::vector<char> hit(N_);
  for (const auto& p : perms_) {
    if (p.size() != static_cast<std::size_t>(N_)) throw ValidationError("permutation has wrong length");
    std::fill(hit.begin(), hit.end(), 0);
    for (int y : p) {
      if (y < 0 || y >= N_ || hit[y]) throw ValidationError("generator map is not a bijection");
      hit[y] = 1;
    }
  }
  auto commute = [&](const std::vector<int>& a, const std::vector<int>& b) {
    for (int x = 0; x < N_; ++x)
      if (a[b[x]] != b[a[x]]) return false;
    return true;
  };
  switch (spec.kind()) {
    case GroupKind::Free:
      break;
    case GroupKind::Lattice:
      for (int i = 0; i < spec.rank(); ++i)
        for (int j = i + 1; j < spec.rank(); ++j)
          if (!commute(perms_[i], perms_[j])) throw ValidationError("lattice generators do not commute");
      break;
    case GroupKind::Racg:
      for (int s = 0; s < spec.rank(); ++s) {
        for (int x = 0; x < N_; ++x)
          if (perms_[s][perms_[s][x]] != x) throw ValidationError("RACG generator is not an involution");
        for (int t = s + 1; t < spec.rank(); ++t)
          if (spec.commute(s, t) && !commute(perms_[s], perms_[t]))
            throw ValidationError("commuting RACG generators act non-commutatively");
      }
      break;
    case GroupKind::FreeProduct:
      for (int f = 0; f < spec.rank(); ++f) {
        const auto& G = spec.factors()[f];
        const int off = spec.factor_offset(f);
        for (int x = 0; x < N_; ++x)
          if (perms_[off + G.identity][x] != x) throw ValidationError("factor identity acts non-trivially");
        for (int a = 0; a < G.order; ++a)
          for (int b = 0; b < G.order; ++b) {
            const auto& pa = perms_[off + a];
            const auto& pb = perms_[off + b];
            const auto& pab = perms_[off + G.mul(a, b)];
            for (int x = 0; x < N_; ++x)
              if (pa[pb[x]] != pab[x]) throw ValidationError("factor relations fail in the action");
          }
      }
      break;
  }
}

int PermutationAction::apply_letter(int letter, int x) const {
  switch (spec_->kind()) {
    case GroupKind::Free:
    case GroupKind::Lattice:
      return letter > 0 ? perms_[letter - 1][x] : inverse_perms_[-letter - 1][x];
    case GroupKind::FreeProduct:
    case GroupKind::Racg:
      return perms_[letter][x];
  }
  return x;
}

std::vector<int> PermutationAction::permutation_of(const GroupElement& g) const {
  std::vector<int> out(N_);
  std::iota(out.begin(), out.end(), 0);
  const auto word = letters(*spec_, g);
  for (auto it = word.rbegin(); it != word.rend(); ++it)
    for (int x = 0; x < N_; ++x) out[x] = apply_letter(*it, out[x]);
  return out;
}

int act(const PermutationAction& action, const GroupElement& g, int x) {
  if (x < 0 || x >= action.N()) throw ArgumentError("point out of range");
  const auto word = letters(action.spec(), g);
  for (auto it = word.rbegin(); it != word.rend(); ++it) x = action.apply_letter(*it, x);
  return x;
}

double SchreierOperator::hermitian_defect() const {
  SparseMatrix adj = matrix.adjoint();
  SparseMatrix diff = matrix - adj;
  double m = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

bool SchreierOperator::is_real(double tol) const {
  for (int k = 0; k < matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix, k); it; ++it)
      if (std::abs(it.value().imag()) > tol) return false;
  return true;
}

Eigen::MatrixXcd SchreierOperator::dense() const { return Eigen::MatrixXcd(matrix); }

SchreierOperator representation_matrix(ActionPtr action, const AlgebraElement& p) {
  if (!action) throw ArgumentError("null action");
  if (p.spec_ptr() != action->spec_ptr() && p.spec() != action->spec()) throw ArgumentError("symbol and action use different groups");
  const int N = action->N();
  const int r = p.block_size();
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(p.size() * static_cast<std::size_t>(N) * r);
  for (const auto& [g, b] : p.terms()) {
    const auto perm = action->permutation_of(g);
    for (int y = 0; y < N; ++y) {
      const int x = perm[y];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          if (b(i, j) != cplx(0.0)) trip.emplace_back(x * r + i, y * r + j, b(i, j));
    }
  }
  SchreierOperator op{action, p, SparseMatrix(N * r, N * r)};
  op.matrix.setFromTriplets(trip.begin(), trip.end());
  op.matrix.makeCompressed();
  return op;
}

std::vector<int> fixed_points(const PermutationAction& action, const GroupElement& g) {
  const auto perm = action.permutation_of(g);
  std::vector<int> out;
  for (int x = 0; x < action.N(); ++x)
    if (perm[x] == x) out.push_back(x);
  return out;
}

namespace {

// For each point, the smallest n such that the point lies in Bad_S(n), or r_max + 1.
// x ∈ Bad_S(n) iff h ↦ h.x is not injective on the ball B_S(n).
std::vector<int> first_bad_radius(const PermutationAction& action, const GeneratingSet& S, int r_max) {
  const auto& spec = action.spec();
  const int N = action.N();
  struct Node {
    int parent;
    int gen;
    int layer;
  };
  std::vector<std::vector<int>> gen_perm;
  for (const auto& s : S.generators) gen_perm.push_back(action.permutation_of(s));

  std::vector<Node> nodes{{-1, -1, 0}};
  std::vector<GroupElement> elems{identity(spec)};
  std::unordered_set<GroupElement, GroupElementHash> seen{elems[0]};
  std::size_t begin = 0;
  for (int layer = 1; layer <= r_max; ++layer) {
    const std::size_t end = elems.size();
    for (std::size_t k = begin; k < end; ++k)
      for (std::size_t si = 0; si < S.generators.size(); ++si) {
        GroupElement h = multiply(spec, S.generators[si], elems[k]);
        if (seen.insert(h).second) {
          elems.push_back(std::move(h));
          nodes.push_back({static_cast<int>(k), static_cast<int>(si), layer});
        }
      }
    begin = end;
    if (elems.size() > 4000000 || static_cast<double>(elems.size()) * N > 4e9)
      throw BudgetError("ball of radius " + std::to_string(layer) + " is too large for the bad-set scan");
  }

  std::vector<int> result(N, r_max + 1);
  std::vector<int> stamp(N, -1);
  std::vector<int> image(nodes.size());
  for (int x = 0; x < N; ++x) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      image[k] = k == 0 ? x : gen_perm[nodes[k].gen][image[nodes[k].parent]];
      if (stamp[image[k]] == x) {
        result[x] = nodes[k].layer;
        break;
      }
      stamp[image[k]] = x;
    }
  }
  return result;
}

}  // namespace

GeneratingSet support_set(const AlgebraElement& p) {
  GeneratingSet S;
  for (const auto& [g, b] : p.terms())
    if (!is_identity(p.spec(), g)) S.generators.push_back(g);
  S.symmetric = p.is_self_adjoint();
  return S;
}

std::vector<int> bad_set(const PermutationAction& action, const GeneratingSet& S, int n) {
  if (n < 0) throw ArgumentError("bad-set radius must be non-negative");
  const auto radius = first_bad_radius(action, S, n);
  std::vector<int> out;
  for (int x = 0; x < action.N(); ++x)
    if (radius[x] <= n) out.push_back(x);
  return out;
}

std::vector<double> bs_profile(const PermutationAction& action, const GeneratingSet& S, int r_max) {
  if (r_max < 0) throw ArgumentError("profile radius must be non-negative");
  const auto radius = first_bad_radius(action, S, r_max);
  std::vector<double> out(r_max + 1, 0.0);
  for (int x = 0; x < action.N(); ++x)
    for (int n = radius[x]; n <= r_max; ++n) out[n] += 1.0;
  for (double& v : out) v /= action.N();
  return out;
}

ActionPtr torus_action(int M, int d) {
  if (M < 1 || d < 1) throw ArgumentError("torus needs M ≥ 1 and d ≥ 1");
  int N = 1;
  for (int i = 0; i < d; ++i) N *= M;
  std::vector<std::vector<int>> perms(d, std::vector<int>(N));
  int stride = 1;
  for (int i = 0; i < d; ++i) {
    for (int x = 0; x < N; ++x) {
      int c = (x / stride) % M;
      perms[i][x] = x + ((c + 1) % M - c) * stride;
    }
    stride *= M;
  }
  return std::make_shared<PermutationAction>(std::make_shared<GroupSpec>(GroupSpec::lattice(d)), N, std::move(perms),
                                             nlohmann::json{{"construction", "torus"}, {"M", M}, {"d", d}});
}

ActionPtr random_free_action(int N, int d, std::uint64_t seed) {
  CounterRng rng(seed, 0x46524545);
  std::vector<std::vector<int>> perms;
  for (int i = 0; i < d; ++i) perms.push_back(rng.split(i).permutation(N));
  return std::make_shared<PermutationAction>(std::make_shared<GroupSpec>(GroupSpec::free_group(d)), N, std::move(perms),
                                             nlohmann::json{{"construction", "random_free"}, {"seed", seed}});
}

ActionPtr random_matching_action(int N, int k, std::uint64_t seed) {
  if (N % 2 != 0) throw ArgumentError("random matchings need an even point count");
  CounterRng rng(seed, 0x4d415443);
  std::vector<FiniteGroup> factors(k, FiniteGroup::cyclic(2));
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_product(factors));
  std::vector<std::vector<int>> perms;
  for (int i = 0; i < k; ++i) {
    std::vector<int> id(N), inv(N);
    std::iota(id.begin(), id.end(), 0);
    auto pi = rng.split(i).permutation(N);
    for (int j = 0; j < N; j += 2) {
      inv[pi[j]] = pi[j + 1];
      inv[pi[j + 1]] = pi[j];
    }
    perms.push_back(id);
    perms.push_back(inv);
  }
  return std::make_shared<PermutationAction>(spec, N, std::move(perms),
                                             nlohmann::json{{"construction", "random_matching"}, {"seed", seed}});
}

ActionPtr finite_factor_random_action(SpecPtr spec, int N, std::uint64_t seed) {
  if (spec->kind() != GroupKind::FreeProduct) throw ArgumentError("finite-factor actions need a free product");
  CounterRng rng(seed, 0x46414354);
  std::vector<std::vector<int>> perms;
  for (int f = 0; f < spec->rank(); ++f) {
    const auto& G = spec->factors()[f];
    if (N % G.order != 0) throw ArgumentError("factor order must divide N");
    auto pi = rng.split(f).permutation(N);
    std::vector<int> pinv(N);
    for (int x = 0; x < N; ++x) pinv[pi[x]] = x;
    for (int a = 0; a < G.order; ++a) {
      std::vector<int> perm(N);
      for (int x = 0; x < N; ++x) {
        int y = pinv[x];
        int g = y % G.order;
        int m = y / G.order;
        perm[x] = pi[m * G.order + G.mul(a, g)];
      }
      perms.push_back(std::move(perm));
    }
  }
  return std::make_shared<PermutationAction>(spec, N, std::move(perms),
                                             nlohmann::json{{"construction", "finite_factor_random"}, {"seed", seed}});
}

BaseGraph read_base_graph(std::istream& in) {
  BaseGraph H;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    int u, v;
    if (!(ls >> u)) continue;
    if (!(ls >> v) || u < 0 || v < 0) throw ArgumentError("bad base-graph edge on line " + std::to_string(lineno));
    H.edges.emplace_back(u, v);
    H.vertices = std::max({H.vertices, u + 1, v + 1});
  }
  return H;
}

BaseGraph parse_base_graph(const std::string& text) {
  std::istringstream in(text);
  return read_base_graph(in);
}

ActionPtr lift_action(const BaseGraph& H, int N, std::uint64_t seed) {
  if (H.edges.empty()) throw ArgumentError("base graph has no edges");
  auto a = random_free_action(N, static_cast<int>(H.edges.size()), seed);
  auto meta = a->metadata();
  meta["construction"] = "lift";
  meta["base_vertices"] = H.vertices;
  return std::make_shared<PermutationAction>(a->spec_ptr(), N, a->perms(), meta);
}

AlgebraElement lift_symbol(const BaseGraph& H, const std::vector<double>& weights) {
  const int E = static_cast<int>(H.edges.size());
  if (!weights.empty() && static_cast<int>(weights.size()) != E) throw ArgumentError("one weight per base edge expected");
  auto spec = std::make_shared<GroupSpec>(GroupSpec::free_group(E));
  AlgebraElement p(spec, H.vertices);
  for (int e = 0; e < E; ++e) {
    const double w = weights.empty() ? 1.0 : weights[e];
    auto [u, v] = H.edges[e];
    Block fwd = Block::Zero(H.vertices, H.vertices);
    Block bwd = Block::Zero(H.vertices, H.vertices);
    fwd(u, v) = w;
    bwd(v, u) = w;
    p.add(generator(*spec, e + 1), fwd);
    p.add(generator(*spec, -(e + 1)), bwd);
  }
  return p;
}

namespace {

// Kuhn's augmenting-path matching on a bipartite multigraph given by left adjacency lists of edge ids.
bool augment(int u, const std::vector<std::vector<int>>& adj, const std::vector<int>& head, const std::vector<char>& alive,
             std::vector<int>& match_right, std::vector<int>& via_edge, std::vector<int>& visit, int stamp) {
  for (int e : adj[u]) {
    if (!alive[e]) continue;
    int v = head[e];
    if (visit[v] == stamp) continue;
    visit[v] = stamp;
    if (match_right[v] < 0 || augment(match_right[v], adj, head, alive, match_right, via_edge, visit, stamp)) {
      match_right[v] = u;
      via_edge[v] = e;
      return true;
    }
  }
  return false;
}

}  // namespace

ActionPtr glued_copies_action(const PermutationAction& base, std::uint64_t seed) {
  if (base.spec().kind() != GroupKind::Free) throw ArgumentError("glued copies need a free-group action");
  const int k = base.spec().rank();
  const int d = 2 * k;
  const int N = base.N();

  // lexicographically smallest non-loop edge (min, max, generator)
  std::tuple<int, int, int> del{N, N, k};
  for (int i = 0; i < k; ++i)
    for (int x = 0; x < N; ++x) {
      int y = base.perms()[i][x];
      if (x == y) continue;
      del = std::min(del, std::make_tuple(std::min(x, y), std::max(x, y), i));
    }
  if (std::get<0>(del) == N) throw ArgumentError("base graph has no non-loop edge to delete");
  const auto [da, db, dg] = del;

  const int V = k * N + 1;
  const int hub = k * N;
  std::vector<std::pair<int, int>> edges;
  for (int c = 0; c < k; ++c) {
    bool skipped = false;
    for (int i = 0; i < k; ++i)
      for (int x = 0; x < N; ++x) {
        int y = base.perms()[i][x];
        if (!skipped && i == dg && std::min(x, y) == da && std::max(x, y) == db) {
          skipped = true;
          continue;
        }
        edges.emplace_back(c * N + x, c * N + y);
      }
    edges.emplace_back(hub, c * N + da);
    edges.emplace_back(hub, c * N + db);
  }

  CounterRng rng(seed, 0x474c5545);
  auto order = rng.permutation(static_cast<int>(edges.size()));

  // Eulerian orientation: closed trails from every vertex with unused edges
  std::vector<std::vector<int>> inc(V);
  for (int e : order) {
    inc[edges[e].first].push_back(e);
    if (edges[e].second != edges[e].first) inc[edges[e].second].push_back(e);
  }
  std::vector<char> used(edges.size(), 0);
  std::vector<std::size_t> ptr(V, 0);
  std::vector<int> tail(edges.size()), head(edges.size());
  for (int v0 = 0; v0 < V; ++v0) {
    while (true) {
      while (ptr[v0] < inc[v0].size() && used[inc[v0][ptr[v0]]]) ++ptr[v0];
      if (ptr[v0] == inc[v0].size()) break;
      int cur = v0;
      while (true) {
        while (ptr[cur] < inc[cur].size() && used[inc[cur][ptr[cur]]]) ++ptr[cur];
        if (ptr[cur] == inc[cur].size()) break;
        int e = inc[cur][ptr[cur]];
        used[e] = 1;
        int other = edges[e].first == cur ? edges[e].second : edges[e].first;
        tail[e] = cur;
        head[e] = other;
        cur = other;
      }
    }
  }

  // split the k-regular bipartite (out, in) multigraph into k perfect matchings
  std::vector<std::vector<int>> adj(V);
  for (int e : order) adj[tail[e]].push_back(e);
  for (int v = 0; v < V; ++v)
    if (static_cast<int>(adj[v].size()) != k) throw ValidationError("glued graph orientation is unbalanced");
  std::vector<char> alive(edges.size(), 1);
  std::vector<std::vector<int>> perms;
  std::vector<int> visit(V, -1);
  int stamp = 0;
  for (int j = 0; j < k; ++j) {
    std::vector<int> match_right(V, -1), via_edge(V, -1);
    for (int u = 0; u < V; ++u) {
      if (!augment(u, adj, head, alive, match_right, via_edge, visit, stamp++))
        throw ValidationError("no perfect matching in regular bipartite graph");
    }
    std::vector<int> perm(V);
    for (int v = 0; v < V; ++v) {
      perm[match_right[v]] = v;
      alive[via_edge[v]] = 0;
    }
    perms.push_back(std::move(perm));
  }

  std::vector<int> copy_of(V, -1);
  for (int c = 0; c < k; ++c)
    for (int x = 0; x < N; ++x) copy_of[c * N + x] = c;
  nlohmann::json meta{{"construction", "glued_copies"},
                      {"copies", k},
                      {"degree", d},
                      {"hub", hub},
                      {"deleted_edge", {da, db, dg}},
                      {"copy_of", copy_of},
                      {"seed", seed}};
  return std::make_shared<PermutationAction>(base.spec_ptr(), V, std::move(perms), meta);
}

nlohmann::json to_json(const PermutationAction& action) {
  return {{"spec", to_json(action.spec())}, {"N", action.N()}, {"perms", action.perms()}, {"metadata", action.metadata()}};
}

ActionPtr action_from_json(const nlohmann::json& j) {
  try {
    auto spec = std::make_shared<GroupSpec>(group_spec_from_json(j.at("spec")));
    nlohmann::json meta = j.contains("metadata") ? j.at("metadata") : nlohmann::json::object();
    return std::make_shared<PermutationAction>(spec, j.at("N").get<int>(), j.at("perms").get<std::vector<std::vector<int>>>(),
                                               meta);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed action: ") + e.what());
  }
}

}  // namespace qmix
