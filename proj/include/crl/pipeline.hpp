#pragma once

// End-to-end steps shared by the CLI and the acceptance runs.

#include <cstdint>

#include "crl/config.hpp"
#include "crl/eval.hpp"

namespace crl {

Dataset simulate(const RunConfig& c);

/// Seed of the model's parameter initialization.
std::uint64_t model_seed(const RunConfig& c);

/// Builds and trains a fresh model on the dataset.
struct TrainedRun {
  Model model;
  FitResult fit;
};
TrainedRun train_model(const RunConfig& c, const Dataset& ds);

/// Matching and Jacobian support on the held-out rows of the training split,
/// structure metrics on the adjacency, and the baseline gap when requested.
EvalReport evaluate(const Model& model, const Dataset& ds, const RunConfig& c, bool baseline);

/// Held-out matched Spearman >= min_corr for every latent with an empty
/// intimate-neighbor set.
bool isolated_latents_recovered(const MatchReport& m, const MarkovNet& truth, double min_corr = 0.9);

}  // namespace crl
