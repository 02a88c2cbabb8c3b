#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "crl/config.hpp"
#include "crl/eval.hpp"
#include "crl/rng.hpp"

using namespace crl;

namespace {

Eigen::MatrixXd gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  return m;
}

Permutation perm_of(std::vector<Vertex> v) { return Permutation(std::move(v)); }

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("crl_test_eval_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(Correlation, RanksAndCoefficients) {
  Eigen::VectorXd v(5);
  v << 3.0, 1.0, 4.0, 1.0, 5.0;
  Eigen::VectorXd r(5);
  r << 3.0, 1.5, 4.0, 1.5, 5.0;
  EXPECT_EQ(average_ranks(v), r);

  Eigen::VectorXd a(4), b(4);
  a << 1, 2, 3, 4;
  b << 2, 4, 6, 8;
  EXPECT_NEAR(pearson(a, b), 1.0, 1e-12);
  EXPECT_NEAR(pearson(a, -b), -1.0, 1e-12);
  EXPECT_TRUE(std::isnan(pearson(a, Eigen::VectorXd::Constant(4, 2.0))));
}

TEST(BestAssignment, MatchesBruteForce) {
  Rng rng(3);
  for (std::size_t n : {2u, 4u, 6u, 9u}) {
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::MatrixXd s(n, n);
      for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = rng.uniform(0.0, 1.0);
      const Permutation p = best_assignment(s);
      double got = 0.0;
      for (std::size_t i = 0; i < n; ++i) got += s(p(i), i);
      std::vector<Vertex> q(n);
      std::iota(q.begin(), q.end(), 0);
      double best = -1.0;
      do {
        double t = 0.0;
        for (std::size_t i = 0; i < n; ++i) t += s(q[i], i);
        best = std::max(best, t);
      } while (std::next_permutation(q.begin(), q.end()));
      EXPECT_NEAR(got, best, 1e-12) << "n=" << n;
    }
  }
}

TEST(MatchLatents, SwapAndScaleGivesPerfectScore) {
  const Eigen::MatrixXd z = gaussian_matrix(2000, 3, 1);
  Eigen::MatrixXd zhat(z.rows(), 3);
  zhat.col(0) = -2.0 * z.col(2);
  zhat.col(1) = 0.5 * z.col(0);
  zhat.col(2) = 3.0 * z.col(1);
  for (CorrKind k : {CorrKind::Pearson, CorrKind::Spearman}) {
    const MatchReport r = match_latents(zhat, z, k);
    EXPECT_NEAR(r.mcc, 1.0, 1e-12);
    EXPECT_EQ(r.perm, perm_of({1, 2, 0}));
  }
}

TEST(MatchLatents, MonotoneTransformSeparatesSpearmanFromPearson) {
  const Eigen::MatrixXd z = gaussian_matrix(2000, 2, 2);
  Eigen::MatrixXd zhat(z.rows(), 2);
  zhat.col(0) = (2.0 * z.col(1)).array().tanh();
  zhat.col(1) = z.col(0).array().exp();
  const MatchReport r = match_latents(zhat, z);
  EXPECT_NEAR(r.mcc, 1.0, 1e-12);
  EXPECT_NEAR(r.matched_spearman.minCoeff(), 1.0, 1e-12);
  EXPECT_LT(r.matched_pearson.maxCoeff(), 0.99);
}

TEST(MatchLatents, SpearmanInvariantUnderMonotoneMaps) {
  const Eigen::MatrixXd z = gaussian_matrix(500, 3, 4);
  const Eigen::MatrixXd zhat = z + 0.7 * gaussian_matrix(500, 3, 5);
  Eigen::MatrixXd warped = zhat;
  warped.col(0) = zhat.col(0).array().cube();
  warped.col(1) = -zhat.col(1).array().exp();
  warped.col(2) = zhat.col(2).array().sinh();
  const MatchReport a = match_latents(zhat, z), b = match_latents(warped, z);
  EXPECT_EQ(a.perm, b.perm);
  EXPECT_NEAR(a.mcc, b.mcc, 1e-12);
}

TEST(MatchLatents, IndependentNoiseScoresLow) {
  const MatchReport r = match_latents(gaussian_matrix(20000, 4, 6), gaussian_matrix(20000, 4, 7));
  EXPECT_LT(r.mcc, 0.1);
}

TEST(MatchLatents, DegenerateColumnsReported) {
  Eigen::MatrixXd z = gaussian_matrix(100, 2, 8);
  Eigen::MatrixXd zhat = z;
  zhat.col(1).setConstant(1.0);
  const MatchReport r = match_latents(zhat, z);
  EXPECT_EQ(r.degenerate_estimated, std::vector<std::size_t>{1});
  EXPECT_TRUE(r.degenerate_true.empty());
  EXPECT_EQ(r.matched_spearman(1), 0.0);
}

TEST(JacobianSupport, IdentityMapIsDiagonal) {
  const Dag g = preset_dag("y4");
  const Eigen::MatrixXd pts = gaussian_matrix(50, 4, 9);
  const LatentMap id = [](const Eigen::MatrixXd& z, const std::vector<std::size_t>&) { return z; };
  const auto r = jacobian_support(id, pts, std::vector<std::size_t>(50, 0), Permutation::identity(4), moralize(g));
  EXPECT_TRUE(r.all_pass());
  EXPECT_TRUE(r.normalized.isApprox(Eigen::MatrixXd::Identity(4, 4), 1e-9));
}

// zhat_i = z_i + 0.5 z_j for every j in Psi_i stays inside the allowed support.
TEST(JacobianSupport, MixingWithinIntimateNeighborsPasses) {
  const MarkovNet m = moralize(preset_dag("fig1"));
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(5, 5);
  for (Vertex i = 0; i < 5; ++i)
    for (Vertex j : intimate_neighbors(m, i)) w(i, j) = 0.5;
  const LatentMap f = [&](const Eigen::MatrixXd& z, const std::vector<std::size_t>&) {
    return Eigen::MatrixXd(z * w.transpose());
  };
  const auto r = jacobian_support(f, gaussian_matrix(20, 5, 10), std::vector<std::size_t>(20, 0),
                                  Permutation::identity(5), m);
  EXPECT_TRUE(r.all_pass());
  EXPECT_TRUE(r.present.is_subset_of(r.allowed));
}

// Planted violation: zhat_0 = z_0 + z_4 where 4 is not an intimate neighbor of 0.
TEST(JacobianSupport, PlantedViolationFailsItsRowOnly) {
  const MarkovNet m = moralize(preset_dag("fig1"));
  ASSERT_FALSE(intimate_neighbors(m, 0).contains(4));
  const LatentMap f = [](const Eigen::MatrixXd& z, const std::vector<std::size_t>&) {
    Eigen::MatrixXd out = z;
    out.col(0) += z.col(4);
    return out;
  };
  const auto r = jacobian_support(f, gaussian_matrix(20, 5, 11), std::vector<std::size_t>(20, 0),
                                  Permutation::identity(5), m);
  EXPECT_FALSE(r.all_pass());
  EXPECT_FALSE(r.row_pass[0]);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_TRUE(r.row_pass[i]) << i;
}

TEST(JacobianSupport, PermutationRelabelsRows) {
  const MarkovNet m = moralize(preset_dag("chain4"));
  const LatentMap rev = [](const Eigen::MatrixXd& z, const std::vector<std::size_t>&) {
    return Eigen::MatrixXd(z.rowwise().reverse());
  };
  const auto r = jacobian_support(rev, gaussian_matrix(10, 4, 12), std::vector<std::size_t>(10, 0),
                                  perm_of({3, 2, 1, 0}), m);
  EXPECT_TRUE(r.all_pass());
  EXPECT_TRUE(r.normalized.isApprox(Eigen::MatrixXd::Identity(4, 4), 1e-9));
}

TEST(Structure, ExactAndPerturbedEstimates) {
  const Dag g = preset_dag("y4");
  const Permutation order(g.topological_order());
  const Permutation slot_of = order.inverse();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  for (Vertex c = 0; c < 4; ++c)
    for (Vertex p : g.parents(c)) a(slot_of(c), slot_of(p)) = 0.8;
  StructureReport r = structure_metrics(a, 0.1, g, order);
  EXPECT_EQ(r.shd, 0u);
  EXPECT_EQ(r.moral_shd, 0u);

  // 0 -> 3 is a new adjacency: SHD 1.
  a(slot_of(3), slot_of(0)) = 0.5;
  r = structure_metrics(a, 0.1, g, order);
  EXPECT_EQ(r.shd, 1u);
  // Raising the threshold above the spurious weight removes it again.
  EXPECT_EQ(structure_metrics(a, 0.6, g, order).shd, 0u);
}

TEST(Structure, ThresholdMonotoneInEdgeCount) {
  const Dag g = preset_dag("fig2");
  const Permutation order(g.topological_order());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
  Rng rng(13);
  for (Eigen::Index i = 1; i < 6; ++i)
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  std::size_t prev = 100;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const auto r = structure_metrics(a, t, g, order);
    EXPECT_LE(r.estimated.size(), prev);
    prev = r.estimated.size();
  }
}

TEST(Structure, HammingDistanceCountsReversalsOnce) {
  const Dag a(3, {{0, 1}, {1, 2}});
  EXPECT_EQ(structural_hamming_distance(a, a), 0u);
  EXPECT_EQ(structural_hamming_distance(a, Dag(3, {{1, 0}, {1, 2}})), 1u);
  EXPECT_EQ(structural_hamming_distance(a, Dag(3)), 2u);
  EXPECT_EQ(structural_hamming_distance(a, Dag(3, {{0, 1}, {1, 2}, {0, 2}})), 1u);
}

// With one latent the strict-lower mask is empty, so both fits are the same model.
TEST(BaselineGap, IdenticalModelsGiveZeroGap) {
  const Dataset ds = generate_dataset({Dag(1), NoiseFamily::Gaussian}, 2, 100, {}, 14);
  ModelConfig mc;
  mc.latent_dim = 1;
  mc.observed_dim = 1;
  mc.num_domains = 2;
  mc.hidden = 8;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  const BaselineGap g = independence_baseline_gap(ds.x, ds.domain, mc, tc, 3);
  EXPECT_EQ(g.gap(), 0.0);
  EXPECT_TRUE(std::isfinite(g.dependent_elbo));
}

TEST(Report, EmitsFilesAndOverwritesAtomically) {
  EvalReport r;
  r.seed = 5;
  r.config_hash = "0123456789abcdef";
  r.z = gaussian_matrix(30, 2, 15);
  r.zhat = r.z;
  r.match = match_latents(r.zhat, r.z);
  StructureReport s;
  s.shd = 2;
  r.structure = s;
  const auto dir = fresh_dir("report");
  const auto files = emit_report(r, dir);
  EXPECT_GE(files.size(), 3u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(f)) << f;

  r.structure->shd = 3;
  const auto again = emit_report(r, dir);
  EXPECT_EQ(again, files);
  std::ifstream is(dir / "s5_0123456789abcdef_summary.json");
  EXPECT_EQ(nlohmann::json::parse(is).at("structure").at("shd").get<int>(), 3);
  for (const auto& e : std::filesystem::directory_iterator(dir))
    EXPECT_EQ(e.path().string().find(".tmp"), std::string::npos) << e.path();
  std::filesystem::remove_all(dir);
}
