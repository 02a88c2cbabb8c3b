#include "crl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace crl {

namespace {

void check_vertex(Vertex v, std::size_t n) {
  if (v >= n) {
    throw GraphError("vertex " + std::to_string(v) + " out of range for n=" + std::to_string(n));
  }
}

// Kuhn's augmenting paths. match_col[c] is the row matched to column c.
bool augment(const ZeroPattern& p, std::size_t row, std::vector<char>& seen,
             std::vector<std::ptrdiff_t>& match_col) {
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (!p(row, c) || seen[c]) continue;
    seen[c] = 1;
    if (match_col[c] < 0 ||
        augment(p, static_cast<std::size_t>(match_col[c]), seen, match_col)) {
      match_col[c] = static_cast<std::ptrdiff_t>(row);
      return true;
    }
  }
  return false;
}

std::vector<std::ptrdiff_t> max_matching(const ZeroPattern& p) {
  std::vector<std::ptrdiff_t> match_col(p.size(), -1);
  for (std::size_t r = 0; r < p.size(); ++r) {
    std::vector<char> seen(p.size(), 0);
    augment(p, r, seen, match_col);
  }
  return match_col;
}

}  // namespace

// ---- Dag ------------------------------------------------------------------

Dag::Dag(std::size_t n) : parents_(n) { validate(); }

Dag::Dag(std::size_t n, const std::vector<std::pair<Vertex, Vertex>>& edges) : parents_(n) {
  for (auto [from, to] : edges) {
    check_vertex(from, n);
    check_vertex(to, n);
    if (from == to) throw GraphError("self-loop on vertex " + std::to_string(from));
    parents_[to].insert(from);
  }
  validate();
}

void Dag::validate() {
  const std::size_t n = parents_.size();
  std::vector<std::size_t> indegree(n);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = parents_[i].size();
  std::set<Vertex> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.insert(i);
  order_.clear();
  while (!ready.empty()) {
    Vertex v = *ready.begin();
    ready.erase(ready.begin());
    order_.push_back(v);
    for (std::size_t c = 0; c < n; ++c) {
      if (parents_[c].count(v) && --indegree[c] == 0) ready.insert(c);
    }
  }
  if (order_.size() != n) throw GraphError("graph contains a directed cycle");
}

VertexSet Dag::children(Vertex i) const {
  VertexSet out;
  for (std::size_t c = 0; c < size(); ++c)
    if (parents_[c].count(i)) out.insert(c);
  return out;
}

bool Dag::has_edge(Vertex from, Vertex to) const {
  return to < size() && parents_[to].count(from) > 0;
}

std::vector<std::pair<Vertex, Vertex>> Dag::edges() const {
  std::vector<std::pair<Vertex, Vertex>> out;
  for (std::size_t c = 0; c < size(); ++c)
    for (Vertex p : parents_[c]) out.emplace_back(p, c);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t Dag::edge_count() const {
  std::size_t k = 0;
  for (const auto& pa : parents_) k += pa.size();
  return k;
}

// ---- MarkovNet ------------------------------------------------------------

MarkovNet::MarkovNet(std::size_t n) : adj_(n) {}

MarkovNet::MarkovNet(std::size_t n, const std::vector<std::pair<Vertex, Vertex>>& edges)
    : adj_(n) {
  for (auto [a, b] : edges) add_edge(a, b);
}

void MarkovNet::add_edge(Vertex a, Vertex b) {
  check_vertex(a, size());
  check_vertex(b, size());
  if (a == b) throw GraphError("self-loop on vertex " + std::to_string(a));
  if (adj_[a].insert(b).second) {
    adj_[b].insert(a);
    ++edge_count_;
  }
}

bool MarkovNet::has_edge(Vertex a, Vertex b) const {
  return a < size() && adj_[a].count(b) > 0;
}

std::vector<std::pair<Vertex, Vertex>> MarkovNet::edges() const {
  std::vector<std::pair<Vertex, Vertex>> out;
  for (std::size_t i = 0; i < size(); ++i)
    for (Vertex j : adj_[i])
      if (i < j) out.emplace_back(i, j);
  return out;
}

bool MarkovNet::is_subgraph_of(const MarkovNet& other) const {
  if (other.size() != size()) return false;
  for (auto [a, b] : edges())
    if (!other.has_edge(a, b)) return false;
  return true;
}

// ---- Permutation ----------------------------------------------------------

Permutation::Permutation(std::vector<Vertex> map) : map_(std::move(map)) {
  std::vector<char> hit(map_.size(), 0);
  for (Vertex v : map_) {
    if (v >= map_.size() || hit[v]) throw GraphError("not a bijection");
    hit[v] = 1;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<Vertex> m(n);
  std::iota(m.begin(), m.end(), Vertex{0});
  return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
  std::vector<Vertex> inv(map_.size());
  for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
  return Permutation(std::move(inv));
}

// ---- ZeroPattern ----------------------------------------------------------

ZeroPattern ZeroPattern::from_matrix(const Eigen::MatrixXd& a, double tol) {
  if (a.rows() != a.cols()) throw GraphError("pattern requires a square matrix");
  ZeroPattern p(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      p.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j), std::abs(a(i, j)) > tol);
  return p;
}

bool ZeroPattern::is_subset_of(const ZeroPattern& other) const {
  if (other.n_ != n_) return false;
  for (std::size_t k = 0; k < cells_.size(); ++k)
    if (cells_[k] && !other.cells_[k]) return false;
  return true;
}

// ---- algorithms -----------------------------------------------------------

MarkovNet skeleton(const Dag& g) {
  MarkovNet m(g.size());
  for (auto [p, c] : g.edges()) m.add_edge(p, c);
  return m;
}

MarkovNet moralize(const Dag& g) {
  MarkovNet m = skeleton(g);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto& pa = g.parents(c);
    for (auto a = pa.begin(); a != pa.end(); ++a)
      for (auto b = std::next(a); b != pa.end(); ++b) m.add_edge(*a, *b);
  }
  return m;
}

VertexSet intimate_neighbors(const MarkovNet& m, Vertex i) {
  check_vertex(i, m.size());
  VertexSet out;
  const auto& nb = m.neighbors(i);
  for (Vertex j : nb) {
    bool all = true;
    for (Vertex k : nb) {
      if (k != j && !m.has_edge(j, k)) {
        all = false;
        break;
      }
    }
    if (all) out.insert(j);
  }
  return out;
}

std::vector<Collider> unshielded_colliders(const Dag& g) {
  std::vector<Collider> out;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& pa = g.parents(k);
    for (auto a = pa.begin(); a != pa.end(); ++a)
      for (auto b = std::next(a); b != pa.end(); ++b)
        if (!g.adjacent(*a, *b)) out.push_back({*a, k, *b});
  }
  std::sort(out.begin(), out.end(), [](const Collider& x, const Collider& y) {
    return std::tie(x.left, x.right, x.middle) < std::tie(y.left, y.right, y.middle);
  });
  // A spouse pair sharing several colliders is reported once.
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Collider& x, const Collider& y) {
                          return x.left == y.left && x.right == y.right;
                        }),
            out.end());
  return out;
}

bool isomorphic_under(const MarkovNet& m1, const MarkovNet& m2, const Permutation& p) {
  if (m1.size() != m2.size() || p.size() != m1.size()) {
    throw GraphError("size mismatch: " + std::to_string(m1.size()) + ", " +
                     std::to_string(m2.size()) + ", permutation " + std::to_string(p.size()));
  }
  if (m1.edge_count() != m2.edge_count()) return false;
  for (auto [a, b] : m1.edges())
    if (!m2.has_edge(p(a), p(b))) return false;
  return true;
}

std::optional<Permutation> find_isomorphism(const MarkovNet& m1, const MarkovNet& m2) {
  if (m1.size() != m2.size()) throw GraphError("size mismatch");
  if (m1.size() > 8) throw GraphError("exhaustive isomorphism search limited to n <= 8");
  std::vector<Vertex> map(m1.size());
  std::iota(map.begin(), map.end(), Vertex{0});
  do {
    Permutation p(map);
    if (isomorphic_under(m1, m2, p)) return p;
  } while (std::next_permutation(map.begin(), map.end()));
  return std::nullopt;
}

Permutation nonzero_diagonal_permutation(const Eigen::MatrixXd& a, double tol) {
  ZeroPattern p = ZeroPattern::from_matrix(a, tol);
  auto match_col = max_matching(p);
  std::vector<Vertex> sigma(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (match_col[c] < 0) throw NoMatching("matrix pattern is structurally singular");
    sigma[static_cast<std::size_t>(match_col[c])] = c;
  }
  return Permutation(std::move(sigma));
}

std::size_t maximum_matching_size(const ZeroPattern& p) {
  auto match_col = max_matching(p);
  return static_cast<std::size_t>(
      std::count_if(match_col.begin(), match_col.end(), [](auto r) { return r >= 0; }));
}

bool has_blocking_zero_submatrix(const ZeroPattern& p) {
  return maximum_matching_size(p) < p.size();
}

ZeroPattern inverse_zero_pattern_closure(const MarkovNet& m) {
  ZeroPattern p(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    p.set(i, i, true);
    for (Vertex j : intimate_neighbors(m, i)) p.set(i, j, true);
  }
  return p;
}

// ---- edge-list IO ---------------------------------------------------------

void write_edge_list(std::ostream& os, const Dag& g) {
  os << g.size() << '\n';
  for (auto [p, c] : g.edges()) os << p << ' ' << c << '\n';
}

void write_edge_list(std::ostream& os, const MarkovNet& m) {
  os << m.size() << '\n';
  for (auto [a, b] : m.edges()) os << a << " - " << b << '\n';
}

namespace {

std::size_t read_header(std::istream& is) {
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    long long n;
    if (ls >> n) {
      if (n < 0) throw GraphError("negative vertex count");
      return static_cast<std::size_t>(n);
    }
  }
  throw GraphError("missing vertex count");
}

}  // namespace

Dag read_dag(std::istream& is) {
  std::size_t n = read_header(is);
  std::vector<std::pair<Vertex, Vertex>> edges;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    long long a, b;
    if (!(ls >> a)) continue;
    if (!(ls >> b) || a < 0 || b < 0) throw GraphError("malformed edge line: " + line);
    edges.emplace_back(static_cast<Vertex>(a), static_cast<Vertex>(b));
  }
  return Dag(n, edges);
}

MarkovNet read_markov_net(std::istream& is) {
  std::size_t n = read_header(is);
  MarkovNet m(n);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    long long a, b;
    std::string dash;
    if (!(ls >> a)) continue;
    if (!(ls >> dash >> b) || dash != "-" || a < 0 || b < 0)
      throw GraphError("malformed edge line: " + line);
    m.add_edge(static_cast<Vertex>(a), static_cast<Vertex>(b));
  }
  return m;
}

}  // namespace crl
