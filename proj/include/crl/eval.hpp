#pragma once

// Identifiability metrics for a trained model against simulator ground truth.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crl/graph.hpp"
#include "crl/model.hpp"
#include "crl/train.hpp"

namespace crl {

/// Column ranks with ties sharing their average rank (1-based).
Eigen::VectorXd average_ranks(const Eigen::VectorXd& v);
/// NaN when either column has zero variance.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Maximizes sum_i score(perm(i), i). Exhaustive with lexicographically
/// smallest tie-break up to n = 8, Hungarian assignment beyond.
Permutation best_assignment(const Eigen::MatrixXd& score);

enum class CorrKind { Pearson, Spearman };

struct MatchReport {
  /// perm(i) is the estimated column matched to true latent i.
  Permutation perm;
  CorrKind objective = CorrKind::Spearman;
  /// Entry (a, b) = |corr(zhat_a, z_b)|.
  Eigen::MatrixXd pearson;
  Eigen::MatrixXd spearman;
  Eigen::VectorXd matched_pearson;
  Eigen::VectorXd matched_spearman;
  double mcc = 0.0;  // mean matched |corr| under the objective
  std::vector<std::size_t> degenerate_estimated;
  std::vector<std::size_t> degenerate_true;
};

MatchReport match_latents(const Eigen::MatrixXd& zhat, const Eigen::MatrixXd& z,
                          CorrKind objective = CorrKind::Spearman);

/// Maps true latents (rows) with their domains to estimated latents.
using LatentMap =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, const std::vector<std::size_t>&)>;

struct JacobianSupportReport {
  /// Row i is zhat_{perm(i)}, column j is z_j: mean |d zhat / d z| over points.
  Eigen::MatrixXd magnitude;
  Eigen::MatrixXd normalized;  // each row divided by its maximum
  ZeroPattern present;
  ZeroPattern allowed;  // {i} u Psi_i
  std::vector<bool> row_pass;
  double tau = 0.1;

  bool all_pass() const;
};

JacobianSupportReport jacobian_support(const LatentMap& f, const Eigen::MatrixXd& points,
                                       const std::vector<std::size_t>& domain,
                                       const Permutation& perm, const MarkovNet& truth,
                                       double h = 1e-3, double tau = 0.1);

/// Composition z -> mix(z) -> encoder mean.
LatentMap encoder_latent_map(const Model& model, const MixingFunction& mixing);

struct StructureReport {
  double threshold = 0.1;
  /// Estimated edges in true-variable labels, (parent, child).
  std::vector<std::pair<Vertex, Vertex>> estimated;
  std::vector<std::pair<Vertex, Vertex>> truth;
  std::size_t shd = 0;
  std::size_t moral_shd = 0;
};

/// A(i, j) above threshold in magnitude is the edge slot j -> slot i; slot k
/// holds true variable ordering(k).
StructureReport structure_metrics(const Eigen::MatrixXd& a_hat, double threshold, const Dag& truth,
                                  const Permutation& ordering);

/// Pairs differing in adjacency or orientation.
std::size_t structural_hamming_distance(const Dag& a, const Dag& b);

struct BaselineGap {
  double dependent_elbo = 0.0;
  double independent_elbo = 0.0;
  double gap() const { return dependent_elbo - independent_elbo; }
};

/// Trains the model twice with identical seeds, the second time with A frozen
/// at zero, and compares held-out ELBO.
BaselineGap independence_baseline_gap(const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                                      ModelConfig mcfg, const TrainConfig& tcfg,
                                      std::uint64_t model_seed);

struct EvalReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<MatchReport> match;
  std::optional<JacobianSupportReport> jacobian;
  std::optional<StructureReport> structure;
  std::optional<BaselineGap> baseline;
  /// Paired samples for the scatter files: estimated (rows x n), true (rows x n).
  Eigen::MatrixXd zhat;
  Eigen::MatrixXd z;
};

std::string summary_json(const EvalReport& r);

/// Writes matrices, per-pair scatter data and summary.json into `dir`, each
/// through a temporary file and rename. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace crl
