#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qmix/common.hpp"

namespace qmix {

enum class GroupKind { Free, FreeProduct, Lattice, Racg };

/// Finite group given by a multiplication table, with a symmetric generating set.
struct FiniteGroup {
  int order = 1;
  std::vector<int> table;       // row-major, table[a * order + b] = a * b
  std::vector<int> generators;  // element indices of S_i

  // filled by validate()
  int identity = 0;
  std::vector<int> inverse;
  std::vector<int> length;  // word length w.r.t. generators

  int mul(int a, int b) const { return table[static_cast<std::size_t>(a) * order + b]; }
  void validate();

  static FiniteGroup cyclic(int n);  // generators {1, n-1} (or {1} when n == 2)
};

/// Letters of raw words, per variant:
///   Free(d):        +(i+1) for g_i, -(i+1) for g_i^{-1}
///   FreeProduct:    offset(f) + a for element a of factor f (identity letters are dropped)
///   Lattice(d):     +(i+1) for e_i, -(i+1) for -e_i
///   Racg(n):        0 .. n-1
/// Normal forms use the same letters, except Lattice which stores the exponent vector.
class GroupSpec {
 public:
  static GroupSpec free_group(int d);
  static GroupSpec free_product(std::vector<FiniteGroup> factors);
  static GroupSpec lattice(int d);
  static GroupSpec racg(int n, const std::vector<std::pair<int, int>>& commuting_edges);

  GroupKind kind() const { return kind_; }
  int rank() const { return rank_; }
  const std::vector<FiniteGroup>& factors() const { return factors_; }
  int factor_offset(int f) const { return offsets_[f]; }
  int factor_of(int letter) const;
  int letter_count() const;  // number of distinct positive letter codes
  bool commute(int s, int t) const { return commuting_[static_cast<std::size_t>(s) * rank_ + t]; }
  std::vector<std::pair<int, int>> commuting_edges() const;
  std::string describe() const;

  bool operator==(const GroupSpec& o) const;
  bool operator!=(const GroupSpec& o) const { return !(*this == o); }

 private:
  GroupKind kind_ = GroupKind::Free;
  int rank_ = 0;
  std::vector<FiniteGroup> factors_;
  std::vector<int> offsets_;
  std::vector<char> commuting_;
};

using SpecPtr = std::shared_ptr<const GroupSpec>;

struct GroupElement {
  std::vector<int> word;

  bool operator==(const GroupElement& o) const { return word == o.word; }
  bool operator!=(const GroupElement& o) const { return word != o.word; }
  bool operator<(const GroupElement& o) const {
    if (word.size() != o.word.size()) return word.size() < o.word.size();
    return word < o.word;
  }
};

struct GroupElementHash {
  std::size_t operator()(const GroupElement& g) const noexcept;
};

struct GeneratingSet {
  std::vector<GroupElement> generators;
  bool symmetric = true;
};

GroupElement identity(const GroupSpec& spec);
bool is_identity(const GroupSpec& spec, const GroupElement& g);
GroupElement reduce(const GroupSpec& spec, const std::vector<int>& raw);
GroupElement multiply(const GroupSpec& spec, const GroupElement& a, const GroupElement& b);
GroupElement inverse(const GroupSpec& spec, const GroupElement& a);
/// Expands a normal form into a raw letter sequence (the inverse of reduce up to equivalence).
std::vector<int> letters(const GroupSpec& spec, const GroupElement& g);
GroupElement generator(const GroupSpec& spec, int letter);

/// g_i^{±1} / ∪ S_i / ±e_i / {s_i}.
GeneratingSet standard_generators(const GroupSpec& spec);

struct BallEntry {
  GroupElement element;
  int length = 0;
};
/// Breadth-first ball of radius r in Cay(Γ, S), sorted by (length, normal form).
std::vector<BallEntry> ball(const GroupSpec& spec, const GeneratingSet& S, int r);
int word_length(const GroupSpec& spec, const GroupElement& a, const GeneratingSet& S);
/// Word length with respect to the standard generators.
int word_length(const GroupSpec& spec, const GroupElement& a);

struct SuperflexWitness {
  int s = 0, t = 0, u = 0;
  int condition = 1;  // 1: fixes star(s), swaps t,u; 2: fixes star(t), swaps s,u
  std::vector<int> automorphism;
};
struct SuperflexResult {
  bool superflexible = false;
  std::vector<SuperflexWitness> witnesses;
  std::optional<std::pair<int, int>> failing_pair;
};
SuperflexResult is_superflexible(const GroupSpec& spec);

/// Finds a diagram automorphism extending the partial assignment (-1 = free).
std::optional<std::vector<int>> find_diagram_automorphism(const GroupSpec& spec, std::vector<int> partial);

nlohmann::json to_json(const GroupSpec& spec);
GroupSpec group_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroupElement& g);
GroupElement group_element_from_json(const GroupSpec& spec, const nlohmann::json& j);
std::string to_string(const GroupSpec& spec, const GroupElement& g);

}  // namespace qmix
