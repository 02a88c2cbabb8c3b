#pragma once

// Change-encoding VAE: Gaussian encoder q(z | x, u), Gaussian decoder with
// fixed variance, masked adjacency A, and either an affine flow prior or a
// per-domain scale/shift prior over the dependent latents.
//
// Parameters live in a ParameterSet. Every forward pass binds them onto a
// fresh ad::Tape, so the same code serves training, evaluation and gradcheck.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crl/autodiff.hpp"
#include "crl/rng.hpp"
#include "crl/sem.hpp"

namespace crl {

enum class PriorKind { Flow, Parametric };

std::string to_string(PriorKind k);
PriorKind parse_prior_kind(const std::string& s);

struct ModelConfig {
  std::size_t latent_dim = 4;
  std::size_t observed_dim = 4;
  std::size_t num_domains = 1;
  PriorKind prior = PriorKind::Parametric;
  NoiseFamily base = NoiseFamily::Gaussian;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;  // encoder and decoder
  std::size_t conditioner_hidden = 64;
  std::size_t flow_layers = 1;
  double slope = 0.2;
  double decoder_variance = 0.01;
  /// Holds A at exactly zero (independent-latent baseline).
  bool freeze_adjacency = false;

  /// Stable text form, used for the checkpoint hash.
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct Parameter {
  std::string name;
  ad::Tensor value;
  bool frozen = false;
};

class ParameterSet {
 public:
  std::size_t add(std::string name, ad::Tensor value, bool frozen = false);
  std::size_t index(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  Parameter& operator[](std::size_t i) { return params_.at(i); }
  const Parameter& operator[](std::size_t i) const { return params_.at(i); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// Affine layers x W + b followed by LeakyReLU except after the last one.
struct Mlp {
  std::vector<std::size_t> weights;  // indices into the ParameterSet, in x out
  std::vector<std::size_t> biases;   // 1 x out
  double slope = 0.2;
};

struct Batch {
  ad::Tensor x;                     // m x d
  std::vector<std::size_t> domain;  // length m
  std::size_t size() const { return domain.size(); }
};

Batch make_batch(const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                 const std::vector<std::size_t>& rows);

struct LossParts {
  ad::Var loss;  // -ELBO, batch mean
  double elbo = 0.0;
  double kl = 0.0;
  double recon = 0.0;  // E_q log p(x | z)
  double sparsity = 0.0;
  double full = 0.0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Leaves for trainable parameters, constants for frozen ones; indices
  /// match the ParameterSet.
  std::vector<ad::Var> bind(ad::Tape& tape) const;

  struct Posterior {
    ad::Var mean;   // m x n
    ad::Var scale;  // m x n, strictly positive
  };
  Posterior encode(ad::Tape& tape, const std::vector<ad::Var>& p, const Batch& b) const;
  /// z = mean + scale * eta for fixed standard-normal eta (m x n).
  static ad::Var reparameterize(ad::Tape& tape, const Posterior& q, const ad::Tensor& eta);
  ad::Var decode(const std::vector<ad::Var>& p, ad::Var z) const;

  /// Effective A = raw o strict-lower mask.
  ad::Var adjacency(ad::Tape& tape, const std::vector<ad::Var>& p) const;
  Eigen::MatrixXd adjacency_matrix() const;

  /// Per-latent base residuals eps (m x n) and log-determinant terms
  /// (m x n); log p(z) = sum_i log p_eps(eps_i) + log_det_i.
  struct PriorTerms {
    ad::Var eps;
    ad::Var log_det;
  };
  PriorTerms prior_terms(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var z,
                         const std::vector<std::size_t>& domain) const;

  /// m x 1 log prior density of each row of z under its domain.
  ad::Var prior_log_density(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var z,
                            const std::vector<std::size_t>& domain) const;
  ad::Var prior_log_density_flow(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var z,
                                 const std::vector<std::size_t>& domain) const;
  ad::Var prior_log_density_parametric(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var z,
                                       const std::vector<std::size_t>& domain) const;

  /// Single-sample estimate from noise eta (m x n).
  LossParts elbo(ad::Tape& tape, const std::vector<ad::Var>& p, const Batch& b,
                 const ad::Tensor& eta) const;
  LossParts elbo(ad::Tape& tape, const std::vector<ad::Var>& p, const Batch& b, Rng& rng) const;
  ad::Var sparsity_loss(ad::Tape& tape, const std::vector<ad::Var>& p) const;
  /// -ELBO + lambda * |A|_1; the returned parts carry all components.
  LossParts full_loss(ad::Tape& tape, const std::vector<ad::Var>& p, const Batch& b,
                      const ad::Tensor& eta, double lambda) const;

  /// Posterior means for a sample matrix (no gradient).
  Eigen::MatrixXd encode_mean(const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain) const;

  /// Parameter names follow "<block>.<layer>.<w|b>".
  std::string checkpoint_json() const;
  static Model from_checkpoint_json(const std::string& text);
  void load_parameters_json(const std::string& text);

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  Mlp encoder_;
  Mlp decoder_;
  std::size_t adjacency_ = 0;
  std::vector<std::vector<Mlp>> conditioners_;  // [flow layer][latent]
  std::size_t coef_ = 0;                       // num_domains x n*n
  std::size_t scale_raw_ = 0;                  // num_domains x n
  std::size_t shift_ = 0;                      // num_domains x n
  ad::Tensor mask_;                            // strict lower, n x n

  Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng);
  ad::Var run_mlp(const Mlp& m, const std::vector<ad::Var>& p, ad::Var x) const;
  ad::Var one_hot(ad::Tape& tape, const std::vector<std::size_t>& domain) const;
  ad::Var base_log_density(ad::Var eps) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crl
