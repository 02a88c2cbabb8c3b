#pragma once

// Simulator-side theory checks. None of them needs a trained model.

#include <cstdint>
#include <string>
#include <vector>

#include "crl/density.hpp"
#include "crl/graph.hpp"

namespace crl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::size_t successes = 0;
  std::size_t trials = 0;
  std::string detail;
};

/// Uniformly random DAG on n vertices under a random topological order, each
/// pair an edge with probability p.
Dag random_dag(std::size_t n, double p, Rng& rng);

/// Redraws C, S until every moral-graph pair has |precision| >= min_abs.
/// Returns the number of rejected draws through `rejected`.
DomainParams draw_generic_gaussian_params(const LinearSemSpec& spec, double min_abs, Rng& rng,
                                          std::size_t* rejected = nullptr);

/// Density-derived Markov net equals the moral graph for `instances` random
/// Gaussian SEMs with 2 <= n <= max_n, generic at margin 2 * tau.
CheckResult check_moralization_oracle(std::size_t instances, std::size_t max_n, std::uint64_t seed,
                                      double tau = 0.05);

/// Density net of the cancellation instance is a strict subgraph of the moral
/// graph and the SAF check flags the cancelled edge.
CheckResult check_path_cancellation();

/// Density net for params sampled by the simulator's own sampler.
CheckResult check_density_net_matches_moral_graph(const LinearSemSpec& spec, std::size_t num_domains,
                                                  std::uint64_t seed, double tau = 0.05);

/// Stacked-difference rank equals 2n + |M| at every (seed, point) pair.
CheckResult check_sufficient_change_rank(const LinearSemSpec& spec, std::size_t num_domains,
                                         std::size_t points, std::size_t seeds, std::uint64_t seed);

CheckResult check_saf_sucf_sampled(const LinearSemSpec& spec, std::size_t num_domains, std::uint64_t seed);

/// j in Psi_i iff {i} u N_i subset of {j} u N_j, exhaustive over all
/// networks on 1..max_n vertices.
CheckResult check_neighbor_set_lemma(std::size_t max_n);

/// {i} u N_i = {j} u N_j implies {i} u Psi_i = {j} u Psi_j, exhaustive.
CheckResult check_intimate_closure_lemma(std::size_t max_n);

/// Random invertible matrices supported on inverse_zero_pattern_closure(m)
/// have inverses supported there too (entries below tol * max |A^-1| count as zero).
CheckResult check_inverse_zero_pattern(std::size_t instances, std::uint64_t seed, double tol = 1e-9);

/// Random invertible matrices admit a nonzero-diagonal permutation.
CheckResult check_nonzero_diagonal(std::size_t instances, std::uint64_t seed);

/// Matrices with a planted (i+1) x (n-i) zero block are flagged and singular.
CheckResult check_blocking_zero_detection(std::size_t instances, std::uint64_t seed);

std::string format_check(const CheckResult& r);

}  // namespace crl
