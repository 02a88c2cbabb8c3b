#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "crl/config.hpp"
#include "crl/sem.hpp"

using namespace crl;

namespace {

DomainParams unit_params(std::size_t n, double c = 0.0) {
  DomainParams p;
  p.C = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), c);
  p.S = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  p.B = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  return p;
}

double variance(const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().sum() / double(v.size() - 1); }

double median(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  return 0.5 * (v(v.size() / 2) + v((v.size() - 1) / 2));
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(Eigen::VectorXd a, Eigen::VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  Eigen::Index i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a(i) <= b(j)) ++i;
    else ++j;
    d = std::max(d, std::abs(double(i) / double(a.size()) - double(j) / double(b.size())));
  }
  return d;
}

}  // namespace

TEST(DomainParams, YStructureThirteenDomains) {
  const LinearSemSpec spec{preset_dag("y4"), NoiseFamily::Gaussian};
  const auto params = sample_domain_params(spec, 13, 42);
  ASSERT_EQ(params.size(), 13u);
  for (const auto& p : params) {
    EXPECT_EQ((p.C.array() != 0.0).count(), 3);
    for (auto [a, b] : spec.dag.edges()) {
      EXPECT_GE(p.C(b, a), 0.5);
      EXPECT_LE(p.C(b, a), 2.0);
    }
    EXPECT_TRUE((p.S.array() >= 0.5).all() && (p.S.array() <= 2.0).all());
    EXPECT_TRUE((p.B.array() >= -2.0).all() && (p.B.array() <= 2.0).all());
  }
}

TEST(DomainParams, DeterministicAndEmptyDag) {
  const LinearSemSpec spec{preset_dag("chain4"), NoiseFamily::Laplace};
  const auto a = sample_domain_params(spec, 1, 5);
  const auto b = sample_domain_params(spec, 1, 5);
  EXPECT_EQ(a[0].C, b[0].C);
  EXPECT_EQ(a[0].S, b[0].S);
  EXPECT_EQ(a[0].B, b[0].B);
  const LinearSemSpec empty{Dag(4), NoiseFamily::Gaussian};
  for (const auto& p : sample_domain_params(empty, 6, 1)) EXPECT_TRUE(p.C.isZero());
}

TEST(SimulateLatents, EmptyDagStandardNormal) {
  const std::size_t m = 200000;
  const Eigen::MatrixXd z = simulate_latents({Dag(3), NoiseFamily::Gaussian}, unit_params(3), m, 1);
  const double tol = 3.0 / std::sqrt(double(m));
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::MatrixXd centered = z.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(m - 1);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 3 * tol);
}

// Unit-variance noise accumulated along the chain: Var(Z_k) = k.
TEST(SimulateLatents, ChainVarianceGrowsLinearly) {
  const LinearSemSpec spec{preset_dag("chain4"), NoiseFamily::Gaussian};
  const Eigen::MatrixXd z = simulate_latents(spec, unit_params(4, 1.0), 1000000, 2);
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(variance(z.col(k)), double(k + 1), 0.02 * double(k + 1));
}

TEST(SimulateLatents, LaplaceLocationAndScale) {
  DomainParams p = unit_params(1);
  p.S(0) = 2.0;
  p.B(0) = 1.0;
  const Eigen::VectorXd z = simulate_latents({Dag(1), NoiseFamily::Laplace}, p, 1000000, 3).col(0);
  EXPECT_NEAR(median(z), 1.0, 0.02);
  EXPECT_NEAR((z.array() - 1.0).abs().mean(), 2.0, 0.04);
}

TEST(SimulateLatents, ForwardSubstitutionMatchesDenseSolve) {
  const LinearSemSpec spec{preset_dag("fig2"), NoiseFamily::Gaussian};
  Rng rng(4);
  for (const auto& p : sample_domain_params(spec, 10, 8)) {
    Eigen::MatrixXd eps(50, 6);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const Eigen::MatrixXd z = latents_from_noise(spec, p, eps);
    const Eigen::MatrixXd w = p.weights(spec.dag);
    const Eigen::MatrixXd i_w = Eigen::MatrixXd::Identity(6, 6) - w;
    const Eigen::MatrixXd rhs = (eps * p.S.asDiagonal()).rowwise() + p.B.transpose();
    const Eigen::MatrixXd dense = i_w.partialPivLu().solve(rhs.transpose()).transpose();
    EXPECT_LT((z - dense).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(i_w.determinant(), 1.0, 1e-12);
  }
}

TEST(Mixing, OrthogonalLayersAndRoundTrip) {
  const MixingFunction f = make_mixing(4, 4, 2, 0.2, 9);
  for (const auto& layer : f.layers()) {
    const Eigen::MatrixXd wtw = layer.weight.transpose() * layer.weight;
    EXPECT_LT((wtw - Eigen::MatrixXd::Identity(wtw.rows(), wtw.cols())).cwiseAbs().maxCoeff(), 1e-8);
  }
  Rng rng(1);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    Eigen::VectorXd z(4);
    for (auto& v : z) v = 3.0 * rng.normal();
    worst = std::max(worst, (f.unmix(f.mix(z)).z - z).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
  EXPECT_TRUE(f.mix(Eigen::VectorXd::Zero(4)).isZero());
}

TEST(Mixing, UnitSlopeIsAnIsometry) {
  const MixingFunction f = make_mixing(5, 5, 1, 1.0, 2);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd z(5);
    for (auto& v : z) v = rng.normal();
    EXPECT_NEAR(f.mix(z).norm(), z.norm(), 1e-9);
  }
}

TEST(Mixing, IdentityLayerIsIdentity) {
  const MixingFunction f({MixingLayer{Eigen::MatrixXd::Identity(3, 3), 1.0}});
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(3, -1.0, 2.0);
  EXPECT_EQ(f.mix(z), z);
}

TEST(Mixing, InjectiveEmbeddingHasFullColumnRank) {
  const MixingFunction f = make_mixing(2, 3, 2, 0.2, 4);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd z(2);
    for (auto& v : z) v = 2.0 * rng.normal();
    Eigen::MatrixXd j(3, 2);
    for (Eigen::Index c = 0; c < 2; ++c) {
      Eigen::VectorXd hi = z, lo = z;
      hi(c) += 1e-6;
      lo(c) -= 1e-6;
      j.col(c) = (f.mix(hi) - f.mix(lo)) / 2e-6;
    }
    EXPECT_EQ(Eigen::FullPivLU<Eigen::MatrixXd>(j).rank(), 2);
    const auto back = f.unmix(f.mix(z));
    EXPECT_LT(back.residual, 1e-6);
    EXPECT_LT((back.z - z).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_GT(f.unmix(Eigen::VectorXd::Constant(3, 1.0) * 5.0 + f.mix(Eigen::VectorXd::Zero(2))).residual, 1e-6);
}

TEST(Mixing, InvalidDimensions) {
  EXPECT_THROW(make_mixing(4, 3, 1, 0.2, 0), MixingError);
  EXPECT_THROW(make_mixing(4, 4, 0, 0.2, 0), MixingError);
}

TEST(Mixing, AnalyticDeterminantMatchesFiniteDifference) {
  const MixingFunction f = make_mixing(4, 4, 3, 0.2, 12);
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd z(4);
    for (auto& v : z) v = 2.0 * rng.normal();
    Eigen::MatrixXd j(4, 4);
    for (Eigen::Index c = 0; c < 4; ++c) {
      Eigen::VectorXd hi = z, lo = z;
      hi(c) += 1e-7;
      lo(c) -= 1e-7;
      j.col(c) = (f.mix(hi) - f.mix(lo)) / 2e-7;
    }
    const double analytic = std::exp(f.log_abs_det_jacobian(z));
    EXPECT_NEAR(std::abs(j.determinant()), analytic, 1e-5 * analytic);
    EXPECT_LT((f.jacobian(z) - j).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Dataset, SizesAndDomains) {
  const Dataset ds = generate_dataset({preset_dag("y4"), NoiseFamily::Gaussian}, 13, 5000, {}, 1);
  EXPECT_EQ(ds.size(), 65000u);
  EXPECT_EQ(ds.x.rows(), 65000);
  EXPECT_EQ(ds.x.cols(), 4);
  EXPECT_EQ(ds.z.cols(), 4);
  for (std::size_t u : ds.domain) EXPECT_LT(u, 13u);
  EXPECT_LT((ds.mixing.mix_rows(ds.z) - ds.x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dataset, SameSeedByteIdenticalCsv) {
  const LinearSemSpec spec{preset_dag("chain4"), NoiseFamily::Laplace};
  std::ostringstream a, b;
  write_dataset_csv(a, generate_dataset(spec, 3, 200, {}, 77));
  write_dataset_csv(b, generate_dataset(spec, 3, 200, {}, 77));
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_dataset_csv(c, generate_dataset(spec, 3, 200, {}, 78));
  EXPECT_NE(a.str(), c.str());
}

TEST(Dataset, CsvAndMetadataRoundTrip) {
  const Dataset ds = generate_dataset({preset_dag("fig1"), NoiseFamily::Gaussian}, 4, 50, {0, 2, 0.3}, 3);
  std::ostringstream csv;
  write_dataset_csv(csv, ds);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "domain,x_1,x_2,x_3,x_4,x_5,z_1,z_2,z_3,z_4,z_5");

  Dataset back = dataset_from_metadata(dataset_metadata_json(ds));
  std::istringstream in(csv.str());
  read_dataset_csv(in, back);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.z, ds.z);
  EXPECT_EQ(back.domain, ds.domain);
  EXPECT_EQ(back.spec.dag.edges(), ds.spec.dag.edges());
  ASSERT_EQ(back.params.size(), ds.params.size());
  for (std::size_t u = 0; u < ds.params.size(); ++u) {
    EXPECT_EQ(back.params[u].C, ds.params[u].C);
    EXPECT_EQ(back.params[u].S, ds.params[u].S);
    EXPECT_EQ(back.params[u].B, ds.params[u].B);
  }
  EXPECT_EQ(back.mixing.mix_rows(ds.z), ds.x);
}

TEST(Dataset, LaplaceChainDomainsDiffer) {
  const Dataset ds = generate_dataset({preset_dag("chain4"), NoiseFamily::Laplace}, 2, 2000, {}, 10);
  std::vector<double> a, b;
  for (std::size_t r = 0; r < ds.size(); ++r) (ds.domain[r] == 0 ? a : b).push_back(ds.z(Eigen::Index(r), 0));
  const double crit = 1.63 * std::sqrt(2.0 / 2000.0);  // alpha = 0.01
  EXPECT_GT(ks_statistic(Eigen::Map<Eigen::VectorXd>(a.data(), Eigen::Index(a.size())),
                         Eigen::Map<Eigen::VectorXd>(b.data(), Eigen::Index(b.size()))),
            crit);
}
