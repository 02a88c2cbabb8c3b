#pragma once

// Adam over a ParameterSet, seeded minibatching with a per-domain held-out
// split, loss tracing and resumable checkpoints.
//
// Randomness is keyed by (seed, epoch) for shuffling and (seed, step) for the
// reparameterization noise, so a run resumed from a checkpoint retraces the
// uninterrupted run exactly.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crl/autodiff.hpp"
#include "crl/model.hpp"

namespace crl {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 60;
  double lambda = 1e-2;
  std::uint64_t seed = 0;
  double heldout_fraction = 0.1;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic hooks

  /// Throws ConfigError.
  void validate() const;
};

struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::size_t step = 0;

  static AdamState zeros_like(const ParameterSet& params);
};

/// Bias-corrected Adam. Frozen parameters are skipped. Throws NumericalError
/// naming the parameter on a non-finite gradient.
void adam_step(ParameterSet& params, const std::vector<ad::Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct TraceRow {
  std::size_t step = 0;
  double elbo = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double sparsity = 0.0;
  double full = 0.0;
};

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Reserves floor(fraction * size) rows of every domain, chosen by a seeded
/// shuffle; both lists are sorted.
Split split_heldout(const std::vector<std::size_t>& domain, std::size_t num_domains,
                    double fraction, std::uint64_t seed);

/// Mean ELBO over the rows with reparameterization noise fixed by `seed`.
double mean_elbo(const Model& model, const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                 const std::vector<std::size_t>& rows, std::uint64_t seed);

struct TrainState {
  AdamState adam;
  std::size_t epochs_done = 0;
};

struct FitResult {
  std::vector<TraceRow> trace;
  Split split;
  TrainState state;
  double heldout_elbo = 0.0;
};

using EpochHook = std::function<void(const Model&, const TrainState&)>;

/// Trains until cfg.epochs epochs are done, continuing from `resume` when given.
/// The hook runs after every cfg.checkpoint_every-th epoch.
FitResult fit(Model& model, const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
              const TrainConfig& cfg, const TrainState* resume = nullptr,
              const EpochHook& hook = {});

/// Model checkpoint plus optimizer state.
std::string training_checkpoint_json(const Model& model, const TrainState& state);
/// Restores both; the model must already have the checkpoint's configuration.
TrainState load_training_checkpoint(Model& model, const std::string& text);

}  // namespace crl
