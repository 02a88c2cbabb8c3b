#include "crl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace crl {

namespace {

std::vector<Eigen::VectorXd> random_points(std::size_t n, std::size_t count, double scale, Rng& rng) {
  std::vector<Eigen::VectorXd> pts;
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = scale * rng.normal();
    pts.push_back(z);
  }
  return pts;
}

std::vector<LatentDensity> densities(const LinearSemSpec& spec, const std::vector<DomainParams>& params) {
  std::vector<LatentDensity> out;
  for (const auto& p : params) out.push_back({spec, p});
  return out;
}

MarkovNet net_from_bits(std::size_t n, std::uint64_t bits) {
  MarkovNet m(n);
  std::size_t k = 0;
  for (Vertex i = 0; i < n; ++i)
    for (Vertex j = i + 1; j < n; ++j, ++k)
      if (bits >> k & 1U) m.add_edge(i, j);
  return m;
}

// Closed neighborhoods from the raw edge list, independent of MarkovNet::neighbors.
std::vector<std::vector<bool>> closed_neighborhoods(const MarkovNet& m) {
  std::vector<std::vector<bool>> nb(m.size(), std::vector<bool>(m.size(), false));
  for (Vertex i = 0; i < m.size(); ++i) nb[i][i] = true;
  for (auto [a, b] : m.edges()) {
    nb[a][b] = true;
    nb[b][a] = true;
  }
  return nb;
}

bool subset(const std::vector<bool>& a, const std::vector<bool>& b) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k] && !b[k]) return false;
  return true;
}

MarkovNet random_net(std::size_t n, double p, Rng& rng) {
  MarkovNet m(n);
  for (Vertex i = 0; i < n; ++i)
    for (Vertex j = i + 1; j < n; ++j)
      if (rng.uniform() < p) m.add_edge(i, j);
  return m;
}

CheckResult finish(CheckResult r, std::string detail = {}) {
  r.passed = r.successes == r.trials;
  r.detail = std::move(detail);
  return r;
}

}  // namespace

Dag random_dag(std::size_t n, double p, Rng& rng) {
  std::vector<Vertex> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::pair<Vertex, Vertex>> edges;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (rng.uniform() < p) edges.emplace_back(order[a], order[b]);
  return Dag(n, edges);
}

DomainParams draw_generic_gaussian_params(const LinearSemSpec& spec, double min_abs, Rng& rng,
                                          std::size_t* rejected) {
  const auto n = static_cast<Eigen::Index>(spec.n());
  const MarkovNet moral = moralize(spec.dag);
  for (std::size_t attempt = 0;; ++attempt) {
    DomainParams p;
    p.C = Eigen::MatrixXd::Zero(n, n);
    for (auto [parent, child] : spec.dag.edges())
      p.C(static_cast<Eigen::Index>(child), static_cast<Eigen::Index>(parent)) = rng.uniform(0.5, 2.0);
    p.S.resize(n);
    p.B.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p.S(i) = rng.uniform(0.5, 2.0);
      p.B(i) = rng.uniform(-2.0, 2.0);
    }
    const Eigen::MatrixXd theta = precision_matrix(spec, p);
    bool generic = true;
    for (auto [i, j] : moral.edges())
      if (std::abs(theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) < min_abs) generic = false;
    if (generic) {
      if (rejected) *rejected = attempt;
      return p;
    }
  }
}

CheckResult check_moralization_oracle(std::size_t instances, std::size_t max_n, std::uint64_t seed,
                                      double tau) {
  CheckResult r;
  r.name = "moralization oracle";
  std::size_t rejected_total = 0;
  std::string first_failure;
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng(seed).split(k);
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(max_n - 1));
    LinearSemSpec spec{random_dag(n, rng.uniform(0.2, 0.8), rng), NoiseFamily::Gaussian};
    std::size_t rejected = 0;
    LatentDensity ld{spec, draw_generic_gaussian_params(spec, 2.0 * tau, rng, &rejected)};
    rejected_total += rejected;
    const MarkovNet net = markov_net_from_density({ld}, random_points(n, 3, 2.0, rng), tau);
    ++r.trials;
    if (net == moralize(spec.dag)) {
      ++r.successes;
    } else if (first_failure.empty()) {
      first_failure = "; first mismatch at instance " + std::to_string(k);
    }
  }
  return finish(r, "non-generic redraws " + std::to_string(rejected_total) + first_failure);
}

CheckResult check_path_cancellation() {
  CheckResult r;
  r.name = "path cancellation";
  const LatentDensity ld = path_cancellation_instance();
  Rng rng(7);
  const MarkovNet net = markov_net_from_density({ld}, random_points(3, 3, 1.0, rng), 0.05);
  const MarkovNet moral = moralize(ld.spec.dag);
  const FaithfulnessReport rep = check_saf_sucf(ld.spec.dag, gaussian_ci_oracle(ld.spec, ld.params));
  const bool strict_subgraph = net.is_subgraph_of(moral) && !(net == moral);
  const bool flagged = std::any_of(rep.violations.begin(), rep.violations.end(), [](const auto& v) {
    return v.kind == FaithfulnessViolation::Kind::Adjacency && v.a == 0 && v.b == 1;
  });
  r.trials = 2;
  r.successes = static_cast<std::size_t>(strict_subgraph) + static_cast<std::size_t>(flagged && !rep.saf_ok);
  std::string detail = "density net has " + std::to_string(net.edge_count()) + " of " +
                       std::to_string(moral.edge_count()) + " moral edges";
  for (const auto& v : rep.violations) detail += "; " + v.describe();
  return finish(r, detail);
}

CheckResult check_density_net_matches_moral_graph(const LinearSemSpec& spec, std::size_t num_domains,
                                                  std::uint64_t seed, double tau) {
  CheckResult r;
  r.name = "density Markov net == moral graph";
  Rng rng = Rng(seed).split(1);
  const auto ds = densities(spec, sample_domain_params(spec, num_domains, seed));
  const MarkovNet net = markov_net_from_density(ds, random_points(spec.n(), 5, 2.0, rng), tau);
  const MarkovNet moral = moralize(spec.dag);
  r.trials = 1;
  r.successes = net == moral ? 1 : 0;
  std::ostringstream os;
  os << "density net " << net.edge_count() << " edges, moral graph " << moral.edge_count() << " edges";
  return finish(r, os.str());
}

CheckResult check_sufficient_change_rank(const LinearSemSpec& spec, std::size_t num_domains,
                                         std::size_t points, std::size_t seeds, std::uint64_t seed) {
  CheckResult r;
  r.name = "sufficient change rank";
  std::size_t min_rank = std::numeric_limits<std::size_t>::max(), required = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto ds = densities(spec, sample_domain_params(spec, num_domains, derive_seed(seed, s)));
    Rng rng = Rng(seed).split(1000 + s);
    for (const auto& z : random_points(spec.n(), points, 2.0, rng)) {
      const RankReport rep = sufficient_change_rank(ds, z);
      required = rep.required;
      min_rank = std::min(min_rank, rep.rank);
      ++r.trials;
      if (rep.full()) ++r.successes;
    }
  }
  return finish(r, "min rank " + std::to_string(min_rank) + "/" + std::to_string(required));
}

CheckResult check_saf_sucf_sampled(const LinearSemSpec& spec, std::size_t num_domains, std::uint64_t seed) {
  CheckResult r;
  r.name = "SAF/SUCF on sampled domains";
  std::string detail;
  for (const auto& p : sample_domain_params(spec, num_domains, seed)) {
    const FaithfulnessReport rep = check_saf_sucf(spec.dag, gaussian_ci_oracle(spec, p));
    ++r.trials;
    if (rep.saf_ok && rep.sucf_ok) {
      ++r.successes;
    } else if (detail.empty()) {
      detail = "domain " + std::to_string(p.domain) + ": " + rep.violations.front().describe();
    }
  }
  return finish(r, detail);
}

CheckResult check_neighbor_set_lemma(std::size_t max_n) {
  CheckResult r;
  r.name = "neighbor-set lemma";
  for (std::size_t n = 1; n <= max_n; ++n) {
    const std::size_t pairs = n * (n - 1) / 2;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << pairs); ++bits) {
      const MarkovNet m = net_from_bits(n, bits);
      const auto nb = closed_neighborhoods(m);
      bool ok = true;
      for (Vertex i = 0; i < n; ++i) {
        const VertexSet psi = intimate_neighbors(m, i);
        for (Vertex j = 0; j < n; ++j)
          if (j != i && (psi.count(j) > 0) != subset(nb[i], nb[j])) ok = false;
      }
      ++r.trials;
      if (ok) ++r.successes;
    }
  }
  return finish(r, "all networks on 1.." + std::to_string(max_n) + " vertices");
}

CheckResult check_intimate_closure_lemma(std::size_t max_n) {
  CheckResult r;
  r.name = "intimate-closure lemma";
  std::size_t premises = 0;
  for (std::size_t n = 2; n <= max_n; ++n) {
    const std::size_t pairs = n * (n - 1) / 2;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << pairs); ++bits) {
      const MarkovNet m = net_from_bits(n, bits);
      const auto nb = closed_neighborhoods(m);
      for (Vertex i = 0; i < n; ++i)
        for (Vertex j = i + 1; j < n; ++j) {
          if (nb[i] != nb[j]) continue;
          ++premises;
          VertexSet a = intimate_neighbors(m, i), b = intimate_neighbors(m, j);
          a.insert(i);
          b.insert(j);
          ++r.trials;
          if (a == b) ++r.successes;
        }
    }
  }
  return finish(r, std::to_string(premises) + " pairs with equal closed neighborhoods");
}

CheckResult check_inverse_zero_pattern(std::size_t instances, std::uint64_t seed, double tol) {
  CheckResult r;
  r.name = "inverse zero-pattern preservation";
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng(seed).split(k);
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(5));
    const ZeroPattern pattern = inverse_zero_pattern_closure(random_net(n, rng.uniform(0.2, 0.9), rng));
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
    for (Vertex i = 0; i < n; ++i)
      for (Vertex j = 0; j < n; ++j)
        if (pattern(i, j)) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.uniform(-1.0, 1.0);
    // Keep the draw comfortably invertible.
    for (Eigen::Index i = 0; i < N; ++i) a(i, i) += (a(i, i) >= 0 ? 1.0 : -1.0) * static_cast<double>(n);
    const Eigen::MatrixXd inv = a.inverse();
    const double scale = inv.cwiseAbs().maxCoeff();
    bool ok = true;
    for (Vertex i = 0; i < n; ++i)
      for (Vertex j = 0; j < n; ++j)
        if (std::abs(inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) > tol * scale && !pattern(i, j))
          ok = false;
    ++r.trials;
    if (ok) ++r.successes;
  }
  return finish(r);
}

CheckResult check_nonzero_diagonal(std::size_t instances, std::uint64_t seed) {
  CheckResult r;
  r.name = "nonzero-diagonal matching";
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng(seed).split(k);
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(5));
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd a(N, N);
    do {
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) a(i, j) = rng.uniform() < 0.5 ? 0.0 : rng.normal();
    } while (std::abs(a.determinant()) < 1e-6);
    ++r.trials;
    try {
      const Permutation p = nonzero_diagonal_permutation(a);
      bool ok = true;
      for (Eigen::Index i = 0; i < N; ++i)
        if (std::abs(a(i, static_cast<Eigen::Index>(p(static_cast<Vertex>(i))))) <= 1e-6) ok = false;
      if (ok) ++r.successes;
    } catch (const NoMatching&) {
    }
  }
  return finish(r);
}

CheckResult check_blocking_zero_detection(std::size_t instances, std::uint64_t seed) {
  CheckResult r;
  r.name = "blocking zero-submatrix detection";
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng(seed).split(k);
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(5));
    const std::size_t i = static_cast<std::size_t>(rng.below(n));  // block (i+1) x (n-i)
    std::vector<Vertex> rows(n), cols(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    for (std::size_t t = n; t > 1; --t) std::swap(rows[t - 1], rows[rng.below(t)]);
    for (std::size_t t = n; t > 1; --t) std::swap(cols[t - 1], cols[rng.below(t)]);
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd a(N, N);
    for (Eigen::Index x = 0; x < N; ++x)
      for (Eigen::Index y = 0; y < N; ++y) a(x, y) = rng.normal();
    for (std::size_t x = 0; x <= i; ++x)
      for (std::size_t y = 0; y < n - i; ++y)
        a(static_cast<Eigen::Index>(rows[x]), static_cast<Eigen::Index>(cols[y])) = 0.0;
    ++r.trials;
    if (has_blocking_zero_submatrix(ZeroPattern::from_matrix(a, 0.0)) && std::abs(a.determinant()) < 1e-9)
      ++r.successes;
  }
  return finish(r);
}

std::string format_check(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.successes << "/" << r.trials << ")";
  if (!r.detail.empty()) os << ": " << r.detail;
  return os.str();
}

}  // namespace crl
