#pragma once

// Analytic and finite-difference oracles for the simulator's latent density:
// log p(z), score, cross second derivatives, the derivative-based Markov
// network, the sufficient-change rank test and SAF/SUCF checks.

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crl/graph.hpp"
#include "crl/sem.hpp"

namespace crl {

class DensityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LatentDensity {
  LinearSemSpec spec;
  DomainParams params;
};

/// Standardized residuals r_i = (z_i - B_i - (W z)_i) / S_i.
Eigen::VectorXd standardized_residuals(const LatentDensity& ld, const Eigen::VectorXd& z);

double log_density(const LatentDensity& ld, const Eigen::VectorXd& z);

/// Analytic score d log p / dz (the Laplace kink set is measure zero).
Eigen::VectorXd score(const LatentDensity& ld, const Eigen::VectorXd& z);

/// Precision matrix (I - W)^T D^{-1} (I - W), D = diag(S^2).
Eigen::MatrixXd precision_matrix(const LinearSemSpec& spec, const DomainParams& params);

enum class HessianMethod { Analytic, CentralDifference };

/// H(i, j) = d^2 log p / dz_i dz_j. Analytic is Gaussian only; central
/// differences use h_i = 1e-4 * max(1, |z_i|).
Eigen::MatrixXd cross_hessian(const LatentDensity& ld, const Eigen::VectorXd& z,
                              HessianMethod method = HessianMethod::Analytic);

/// True when every standardized residual is at least `margin` away from the
/// Laplace kink at 0. Always true for Gaussian noise.
bool is_smooth_point(const LatentDensity& ld, const Eigen::VectorXd& z, double margin = 1e-3);

/// Edge {i, j} iff the mean |H(i, j)| over points and domains exceeds tau.
MarkovNet markov_net_from_density(const std::vector<LatentDensity>& domains,
                                  const std::vector<Eigen::VectorXd>& points, double tau = 0.05,
                                  HessianMethod method = HessianMethod::CentralDifference);

/// w(z, u): score (n) + diagonal second derivatives (n) + cross derivatives
/// on the edges of `net` in lexicographic order.
Eigen::VectorXd change_vector(const LatentDensity& ld, const Eigen::VectorXd& z,
                              const MarkovNet& net);
/// Uses moralize(dag) as the network.
Eigen::VectorXd change_vector(const LatentDensity& ld, const Eigen::VectorXd& z);

struct RankReport {
  std::size_t rank = 0;
  std::size_t required = 0;
  bool full() const { return rank >= required; }
};

/// Numerical rank (singular values above 1e-8 * sigma_max) of the stacked
/// rows w(z, u) - w(z, 0) for u = 1..m; required = 2n + |M|.
RankReport sufficient_change_rank(const std::vector<LatentDensity>& domains,
                                  const Eigen::VectorXd& z, const MarkovNet& net);
RankReport sufficient_change_rank(const std::vector<LatentDensity>& domains,
                                  const Eigen::VectorXd& z);

/// ci(i, j) reports Z_i independent of Z_j given all the other latents.
using CiOracle = std::function<bool(Vertex, Vertex)>;

/// Gaussian oracle: precision entry magnitude below tol.
CiOracle gaussian_ci_oracle(const LinearSemSpec& spec, const DomainParams& params,
                            double tol = 1e-10);

struct FaithfulnessViolation {
  enum class Kind { Adjacency, UnshieldedCollider } kind;
  Vertex a;
  Vertex b;
  std::string describe() const;
};

struct FaithfulnessReport {
  bool saf_ok = true;
  bool sucf_ok = true;
  std::vector<FaithfulnessViolation> violations;
};

FaithfulnessReport check_saf_sucf(const Dag& g, const CiOracle& ci);

/// Triangle 0 -> 1 -> 2, 0 -> 2 with C(2, 0) C(2, 1) / S_2^2 = C(1, 0) / S_1^2,
/// so the precision entry of the adjacent pair (0, 1) cancels exactly.
LatentDensity path_cancellation_instance();

}  // namespace crl
