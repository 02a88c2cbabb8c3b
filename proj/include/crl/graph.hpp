#pragma once

// Graph algorithms over latent index sets {0..n-1}: DAGs, Markov networks,
// moralization, intimate neighbors, permutation matching and the
// structural zero-pattern lemmas used by the identifiability checks.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace crl {

using Vertex = std::size_t;
using VertexSet = std::set<Vertex>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when no permutation places nonzeros on the whole diagonal.
class NoMatching : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Directed acyclic graph. parents(i) is PA(i); edges j -> i for j in PA(i).
/// Acyclicity, range and self-loop checks happen on construction.
class Dag {
 public:
  Dag() = default;
  explicit Dag(std::size_t n);
  Dag(std::size_t n, const std::vector<std::pair<Vertex, Vertex>>& edges);

  std::size_t size() const { return parents_.size(); }
  const VertexSet& parents(Vertex i) const { return parents_.at(i); }
  VertexSet children(Vertex i) const;
  bool has_edge(Vertex from, Vertex to) const;
  bool adjacent(Vertex a, Vertex b) const { return has_edge(a, b) || has_edge(b, a); }

  /// Edges as (parent, child), sorted lexicographically.
  std::vector<std::pair<Vertex, Vertex>> edges() const;
  std::size_t edge_count() const;

  /// Kahn order with smallest-index tie breaking.
  const std::vector<Vertex>& topological_order() const { return order_; }

 private:
  std::vector<VertexSet> parents_;
  std::vector<Vertex> order_;
  void validate();
};

/// Undirected simple graph with canonical i<j edge storage.
class MarkovNet {
 public:
  MarkovNet() = default;
  explicit MarkovNet(std::size_t n);
  MarkovNet(std::size_t n, const std::vector<std::pair<Vertex, Vertex>>& edges);

  std::size_t size() const { return adj_.size(); }
  void add_edge(Vertex a, Vertex b);
  bool has_edge(Vertex a, Vertex b) const;
  const VertexSet& neighbors(Vertex i) const { return adj_.at(i); }
  std::size_t edge_count() const { return edge_count_; }

  /// Edges (i, j) with i < j in lexicographic order.
  std::vector<std::pair<Vertex, Vertex>> edges() const;

  bool is_subgraph_of(const MarkovNet& other) const;
  friend bool operator==(const MarkovNet& a, const MarkovNet& b) { return a.adj_ == b.adj_; }

 private:
  std::vector<VertexSet> adj_;
  std::size_t edge_count_ = 0;
};

/// Bijection on {0..n-1}; p(i) is the image of i.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<Vertex> map);
  static Permutation identity(std::size_t n);

  std::size_t size() const { return map_.size(); }
  Vertex operator()(Vertex i) const { return map_.at(i); }
  const std::vector<Vertex>& map() const { return map_; }
  Permutation inverse() const;
  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<Vertex> map_;
};

/// n x n boolean pattern; true means the entry may be nonzero.
class ZeroPattern {
 public:
  ZeroPattern() = default;
  explicit ZeroPattern(std::size_t n, bool value = false) : n_(n), cells_(n * n, value) {}
  static ZeroPattern from_matrix(const Eigen::MatrixXd& a, double tol = 1e-6);

  std::size_t size() const { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return cells_.at(i * n_ + j) != 0; }
  void set(std::size_t i, std::size_t j, bool v) { cells_.at(i * n_ + j) = v ? 1 : 0; }
  bool is_subset_of(const ZeroPattern& other) const;
  friend bool operator==(const ZeroPattern&, const ZeroPattern&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<unsigned char> cells_;
};

MarkovNet skeleton(const Dag& g);

/// Skeleton plus an edge between every pair of parents sharing a child.
MarkovNet moralize(const Dag& g);

/// Neighbors j of i that are also adjacent to every other neighbor of i.
VertexSet intimate_neighbors(const MarkovNet& m, Vertex i);

struct Collider {
  Vertex left;
  Vertex middle;
  Vertex right;
  friend bool operator==(const Collider&, const Collider&) = default;
};

/// Triples left -> middle <- right with left, right non-adjacent and left < right.
std::vector<Collider> unshielded_colliders(const Dag& g);

/// True iff {i,j} in m1 <=> {p(i),p(j)} in m2. Throws GraphError on size mismatch.
bool isomorphic_under(const MarkovNet& m1, const MarkovNet& m2, const Permutation& p);

/// Exhaustive search, lexicographically smallest permutation first. n <= 8.
std::optional<Permutation> find_isomorphism(const MarkovNet& m1, const MarkovNet& m2);

/// Column permutation sigma with |a(i, sigma(i))| > tol for every row i,
/// from a maximum bipartite matching on the nonzero pattern.
Permutation nonzero_diagonal_permutation(const Eigen::MatrixXd& a, double tol = 1e-6);

/// Size of a maximum matching between rows and columns over true cells.
std::size_t maximum_matching_size(const ZeroPattern& p);

/// True iff some all-false R x C block has |R| + |C| > n. By Konig's theorem
/// this is exactly a matching deficiency.
bool has_blocking_zero_submatrix(const ZeroPattern& p);

/// Allowed Jacobian pattern: (i, j) true iff j == i or j is an intimate
/// neighbor of i. Closed under products and inversion.
ZeroPattern inverse_zero_pattern_closure(const MarkovNet& m);

// Plain-text edge lists: first line n, then "i j" per directed edge or
// "i - j" per undirected edge.
void write_edge_list(std::ostream& os, const Dag& g);
void write_edge_list(std::ostream& os, const MarkovNet& m);
Dag read_dag(std::istream& is);
MarkovNet read_markov_net(std::istream& is);

}  // namespace crl
