#pragma once

// Run configuration shared by the CLI subcommands. Stored as YAML; every
// field has a default so an empty file is a valid configuration.

#include <cstdint>
#include <string>

#include "crl/errors.hpp"
#include "crl/graph.hpp"
#include "crl/model.hpp"
#include "crl/sem.hpp"
#include "crl/train.hpp"

namespace crl {

/// y4, chain4, fig1 or fig2 (0-based vertices). Throws ConfigError otherwise.
Dag preset_dag(const std::string& name);

struct EvalConfig {
  double threshold = 0.1;
  double tau_j = 0.1;
  double jacobian_h = 1e-3;
  std::size_t points = 2000;
  bool baseline = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";

  std::string preset = "y4";  // or "custom" with graph_file
  std::string graph_file;
  NoiseFamily noise = NoiseFamily::Gaussian;
  std::size_t num_domains = 13;
  std::size_t samples_per_domain = 5000;
  MixingConfig mixing;

  PriorKind prior = PriorKind::Parametric;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t conditioner_hidden = 64;
  std::size_t flow_layers = 1;
  double decoder_variance = 0.01;
  /// "topological", "random" or a comma-separated list; slot k of the
  /// model's causal order holds true variable ordering[k].
  std::string ordering = "topological";

  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  Dag dag() const;
  LinearSemSpec sem_spec() const { return {dag(), noise}; }
  Permutation causal_ordering() const;
  ModelConfig model_config(std::size_t observed_dim) const;

  std::string to_yaml() const;
  /// FNV-1a of to_yaml(), 16 hex digits.
  std::string hash() const;
};

/// Fields absent from the text keep their defaults; unknown keys are errors.
RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::string& path);

}  // namespace crl
