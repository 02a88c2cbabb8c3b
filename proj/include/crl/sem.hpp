#pragma once

// Multi-domain latent linear SEM with scale/shift mechanism changes, pushed
// through an invertible LeakyReLU network with orthogonal weights.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crl/graph.hpp"
#include "crl/rng.hpp"

namespace crl {

enum class NoiseFamily { Gaussian, Laplace };

std::string to_string(NoiseFamily f);
NoiseFamily parse_noise_family(const std::string& s);

struct LinearSemSpec {
  Dag dag;
  NoiseFamily noise = NoiseFamily::Gaussian;

  std::size_t n() const { return dag.size(); }
};

/// Mechanism parameters of one domain: Z = (A o C) Z + diag(S) eps + B.
struct DomainParams {
  Eigen::MatrixXd C;  // C(i, j) nonzero only for j in PA(i)
  Eigen::VectorXd S;
  Eigen::VectorXd B;
  std::size_t domain = 0;

  /// C restricted to the DAG edges, i.e. the weighted adjacency W.
  Eigen::MatrixXd weights(const Dag& dag) const;
};

/// Draws C ~ U[0.5, 2] on DAG edges, S ~ U[0.5, 2], B ~ U[-2, 2] per domain.
std::vector<DomainParams> sample_domain_params(const LinearSemSpec& spec, std::size_t num_domains,
                                               std::uint64_t seed);

/// Unit-scale noise draw for the family.
double draw_noise(NoiseFamily f, Rng& rng);

/// m x n matrix of latent samples, rows solved by forward substitution in
/// topological order.
Eigen::MatrixXd simulate_latents(const LinearSemSpec& spec, const DomainParams& params,
                                 std::size_t m, std::uint64_t seed);

/// Same as simulate_latents but from explicit unit noise (rows are samples).
Eigen::MatrixXd latents_from_noise(const LinearSemSpec& spec, const DomainParams& params,
                                   const Eigen::MatrixXd& noise);

struct MixingLayer {
  Eigen::MatrixXd weight;  // out x in
  double slope = 0.2;      // LeakyReLU negative slope
};

class MixingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x = leaky(W_L ... leaky(W_1 z)). Every weight has orthonormal columns, so
/// each layer is inverted by the transpose and an analytic LeakyReLU inverse.
class MixingFunction {
 public:
  MixingFunction() = default;
  explicit MixingFunction(std::vector<MixingLayer> layers);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  const std::vector<MixingLayer>& layers() const { return layers_; }

  Eigen::VectorXd mix(const Eigen::VectorXd& z) const;
  /// Row-wise mix of a sample matrix.
  Eigen::MatrixXd mix_rows(const Eigen::MatrixXd& z) const;

  struct Unmixed {
    Eigen::VectorXd z;
    /// Distance of x from the image; above 1e-6 means out-of-image input.
    double residual = 0.0;
  };
  Unmixed unmix(const Eigen::VectorXd& x) const;

  /// Analytic d x n Jacobian.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const;
  /// log |det J| for square mixings.
  double log_abs_det_jacobian(const Eigen::VectorXd& z) const;

 private:
  std::vector<MixingLayer> layers_;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
};

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// column signs fixed so the draw is Haar distributed.
Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng);

MixingFunction make_mixing(std::size_t n, std::size_t d, std::size_t num_layers, double alpha,
                           std::uint64_t seed);

struct MixingConfig {
  std::size_t out_dim = 0;  // 0 means d = n
  std::size_t num_layers = 2;
  double alpha = 0.2;
};

/// Samples from all domains. Row k of x and z belongs to domain[k].
struct Dataset {
  LinearSemSpec spec;
  std::vector<DomainParams> params;
  MixingFunction mixing;
  MixingConfig mixing_config;
  std::uint64_t seed = 0;
  std::size_t samples_per_domain = 0;

  std::vector<std::size_t> domain;
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;

  std::size_t size() const { return domain.size(); }
  std::size_t num_domains() const { return params.size(); }
  std::size_t latent_dim() const { return spec.n(); }
  std::size_t observed_dim() const { return static_cast<std::size_t>(x.cols()); }
};

Dataset generate_dataset(const LinearSemSpec& spec, std::size_t num_domains,
                         std::size_t samples_per_domain, const MixingConfig& mixing,
                         std::uint64_t seed);

/// CSV with header domain,x_1..x_d,z_1..z_n and 17 significant digits.
void write_dataset_csv(std::ostream& os, const Dataset& ds);
/// Fills domain, x, z from a CSV produced by write_dataset_csv.
void read_dataset_csv(std::istream& is, Dataset& ds);

/// Metadata sidecar (JSON): seed, graph, per-domain C/S/B, mixing layers.
std::string dataset_metadata_json(const Dataset& ds);
/// Restores everything but the samples from a metadata sidecar.
Dataset dataset_from_metadata(const std::string& json_text);

}  // namespace crl
