#pragma once

#include <istream>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <json.hpp>

#include "qmix/algebra.hpp"

namespace qmix {

/// One permutation of [N] per letter slot:
///   Free(d), Lattice(d): slot i is the generator g_i / e_i
///   FreeProduct:         slot offset(f) + a for every element a of factor f
///   Racg(n):             slot s
/// act(g, x) composes letters right to left, so act(gh, x) = act(g, act(h, x)).
class PermutationAction {
 public:
  PermutationAction(SpecPtr spec, int N, std::vector<std::vector<int>> perms, nlohmann::json metadata = {});

  const GroupSpec& spec() const { return *spec_; }
  const SpecPtr& spec_ptr() const { return spec_; }
  int N() const { return N_; }
  const std::vector<std::vector<int>>& perms() const { return perms_; }
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

  int apply_letter(int letter, int x) const;
  /// Permutation x -> g.x as an array.
  std::vector<int> permutation_of(const GroupElement& g) const;

 private:
  void validate() const;

  SpecPtr spec_;
  int N_;
  std::vector<std::vector<int>> perms_;
  std::vector<std::vector<int>> inverse_perms_;  // Free and Lattice only
  nlohmann::json metadata_;
};

using ActionPtr = std::shared_ptr<const PermutationAction>;

using SparseMatrix = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

/// ρ_N(p) on C^N ⊗ C^r with index x * r + i.
struct SchreierOperator {
  ActionPtr action;
  AlgebraElement symbol;
  SparseMatrix matrix;

  int dim() const { return static_cast<int>(matrix.rows()); }
  double hermitian_defect() const;
  bool is_real(double tol = 0.0) const;
  Eigen::MatrixXcd dense() const;
};

int act(const PermutationAction& action, const GroupElement& g, int x);
SchreierOperator representation_matrix(ActionPtr action, const AlgebraElement& p);

std::vector<int> fixed_points(const PermutationAction& action, const GroupElement& g);
/// Points fixed by some g ≠ e with |g|_S ≤ 2n.
std::vector<int> bad_set(const PermutationAction& action, const GeneratingSet& S, int n);
/// |Bad_S(n)| / N for n = 0..r_max.
std::vector<double> bs_profile(const PermutationAction& action, const GeneratingSet& S, int r_max);
/// Support of p minus the identity, as a generating set.
GeneratingSet support_set(const AlgebraElement& p);

ActionPtr torus_action(int M, int d);
ActionPtr random_free_action(int N, int d, std::uint64_t seed);
ActionPtr random_matching_action(int N, int k, std::uint64_t seed);
ActionPtr finite_factor_random_action(SpecPtr free_product_spec, int N, std::uint64_t seed);

struct BaseGraph {
  int vertices = 0;
  std::vector<std::pair<int, int>> edges;  // edge e = (u, v): p_{g_e} = a_e E_{uv}
};
BaseGraph read_base_graph(std::istream& in);
BaseGraph parse_base_graph(const std::string& text);
/// Free group on the edges of H acting by independent uniform permutations.
ActionPtr lift_action(const BaseGraph& H, int N, std::uint64_t seed);
/// Block symbol with p_{g_e} = a_e E_{u_e v_e} and p_{g_e^{-1}} = a_e E_{v_e u_e}.
AlgebraElement lift_symbol(const BaseGraph& H, const std::vector<double>& weights);

/// d/2 copies of the Schreier graph of F_{d/2} with one edge removed, joined through a hub.
/// The glued d-regular graph is realized as an F_{d/2} action via an Eulerian orientation
/// and a perfect-matching split. metadata: copy index per vertex (-1 for the hub), hub, deleted edge.
ActionPtr glued_copies_action(const PermutationAction& base, std::uint64_t seed);

nlohmann::json to_json(const PermutationAction& action);
ActionPtr action_from_json(const nlohmann::json& j);

}  // namespace qmix
