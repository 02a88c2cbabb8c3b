#include "crl/density.hpp"

#include <cmath>
#include <numbers>

namespace crl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double log_noise_density(NoiseFamily f, double r) {
  return f == NoiseFamily::Gaussian ? -0.5 * r * r - kHalfLog2Pi : -std::abs(r) - std::numbers::ln2;
}

double noise_score(NoiseFamily f, double r) {
  if (f == NoiseFamily::Gaussian) return -r;
  return r > 0 ? -1.0 : (r < 0 ? 1.0 : 0.0);
}

void check_scales(const DomainParams& p) {
  for (Eigen::Index i = 0; i < p.S.size(); ++i)
    if (!(p.S(i) > 0.0)) throw DensityError("noise scale S must be positive");
}

Eigen::MatrixXd identity_minus_w(const LinearSemSpec& spec, const DomainParams& p) {
  const auto n = static_cast<Eigen::Index>(spec.n());
  return Eigen::MatrixXd::Identity(n, n) - p.weights(spec.dag);
}

}  // namespace

Eigen::VectorXd standardized_residuals(const LatentDensity& ld, const Eigen::VectorXd& z) {
  check_scales(ld.params);
  Eigen::VectorXd e = identity_minus_w(ld.spec, ld.params) * z - ld.params.B;
  return e.cwiseQuotient(ld.params.S);
}

double log_density(const LatentDensity& ld, const Eigen::VectorXd& z) {
  Eigen::VectorXd r = standardized_residuals(ld, z);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    acc += log_noise_density(ld.spec.noise, r(i)) - std::log(ld.params.S(i));
  return acc;
}

Eigen::VectorXd score(const LatentDensity& ld, const Eigen::VectorXd& z) {
  Eigen::VectorXd r = standardized_residuals(ld, z);
  Eigen::VectorXd psi(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i)
    psi(i) = noise_score(ld.spec.noise, r(i)) / ld.params.S(i);
  return identity_minus_w(ld.spec, ld.params).transpose() * psi;
}

Eigen::MatrixXd precision_matrix(const LinearSemSpec& spec, const DomainParams& params) {
  check_scales(params);
  Eigen::MatrixXd iw = identity_minus_w(spec, params);
  Eigen::VectorXd inv_var = params.S.array().square().inverse();
  return iw.transpose() * inv_var.asDiagonal() * iw;
}

Eigen::MatrixXd cross_hessian(const LatentDensity& ld, const Eigen::VectorXd& z,
                              HessianMethod method) {
  if (method == HessianMethod::Analytic) {
    if (ld.spec.noise != NoiseFamily::Gaussian)
      throw DensityError("analytic Hessian only available for Gaussian noise");
    return -precision_matrix(ld.spec, ld.params);
  }
  const Eigen::Index n = z.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(z(i)));
  auto f = [&](const Eigen::VectorXd& p) { return log_density(ld, p); };
  Eigen::MatrixXd H(n, n);
  const double f0 = f(z);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd zp = z, zm = z;
    zp(i) += h(i);
    zm(i) -= h(i);
    H(i, i) = (f(zp) - 2.0 * f0 + f(zm)) / (h(i) * h(i));
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Eigen::VectorXd pp = z, pm = z, mp = z, mm = z;
      pp(i) += h(i); pp(j) += h(j);
      pm(i) += h(i); pm(j) -= h(j);
      mp(i) -= h(i); mp(j) += h(j);
      mm(i) -= h(i); mm(j) -= h(j);
      const double v = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h(i) * h(j));
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

bool is_smooth_point(const LatentDensity& ld, const Eigen::VectorXd& z, double margin) {
  if (ld.spec.noise == NoiseFamily::Gaussian) return true;
  Eigen::VectorXd r = standardized_residuals(ld, z);
  return (r.array().abs() >= margin).all();
}

MarkovNet markov_net_from_density(const std::vector<LatentDensity>& domains,
                                  const std::vector<Eigen::VectorXd>& points, double tau,
                                  HessianMethod method) {
  if (domains.empty() || points.empty())
    throw DensityError("need at least one domain and one point");
  const auto n = static_cast<Eigen::Index>(domains.front().spec.n());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (const auto& ld : domains)
    for (const auto& z : points) acc += cross_hessian(ld, z, method).cwiseAbs();
  acc /= static_cast<double>(domains.size() * points.size());
  MarkovNet m(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (acc(i, j) > tau) m.add_edge(static_cast<Vertex>(i), static_cast<Vertex>(j));
  return m;
}

Eigen::VectorXd change_vector(const LatentDensity& ld, const Eigen::VectorXd& z,
                              const MarkovNet& net) {
  const Eigen::Index n = z.size();
  const auto edges = net.edges();
  Eigen::VectorXd w(2 * n + static_cast<Eigen::Index>(edges.size()));
  w.head(n) = score(ld, z);
  Eigen::MatrixXd H = ld.spec.noise == NoiseFamily::Gaussian
                          ? cross_hessian(ld, z, HessianMethod::Analytic)
                          : cross_hessian(ld, z, HessianMethod::CentralDifference);
  w.segment(n, n) = H.diagonal();
  Eigen::Index k = 2 * n;
  for (auto [i, j] : edges) w(k++) = H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return w;
}

Eigen::VectorXd change_vector(const LatentDensity& ld, const Eigen::VectorXd& z) {
  return change_vector(ld, z, moralize(ld.spec.dag));
}

RankReport sufficient_change_rank(const std::vector<LatentDensity>& domains,
                                  const Eigen::VectorXd& z, const MarkovNet& net) {
  if (domains.size() < 2) throw DensityError("need a baseline domain plus at least one more");
  RankReport out;
  out.required = 2 * static_cast<std::size_t>(z.size()) + net.edge_count();
  const Eigen::VectorXd base = change_vector(domains.front(), z, net);
  Eigen::MatrixXd diffs(static_cast<Eigen::Index>(domains.size() - 1), base.size());
  for (std::size_t u = 1; u < domains.size(); ++u)
    diffs.row(static_cast<Eigen::Index>(u - 1)) = (change_vector(domains[u], z, net) - base).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(diffs);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return out;
  const double cut = 1e-8 * sv(0);
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) ++out.rank;
  return out;
}

RankReport sufficient_change_rank(const std::vector<LatentDensity>& domains,
                                  const Eigen::VectorXd& z) {
  if (domains.empty()) throw DensityError("no domains");
  return sufficient_change_rank(domains, z, moralize(domains.front().spec.dag));
}

CiOracle gaussian_ci_oracle(const LinearSemSpec& spec, const DomainParams& params, double tol) {
  Eigen::MatrixXd theta = precision_matrix(spec, params);
  return [theta, tol](Vertex i, Vertex j) {
    return std::abs(theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) < tol;
  };
}

std::string FaithfulnessViolation::describe() const {
  const char* what = kind == Kind::Adjacency ? "SAF" : "SUCF";
  return std::string(what) + ": Z" + std::to_string(a + 1) + " independent of Z" +
         std::to_string(b + 1) + " given the rest";
}

FaithfulnessReport check_saf_sucf(const Dag& g, const CiOracle& ci) {
  FaithfulnessReport rep;
  for (auto [p, c] : g.edges()) {
    if (ci(p, c)) {
      rep.saf_ok = false;
      rep.violations.push_back({FaithfulnessViolation::Kind::Adjacency, p, c});
    }
  }
  for (const auto& col : unshielded_colliders(g)) {
    if (ci(col.left, col.right)) {
      rep.sucf_ok = false;
      rep.violations.push_back({FaithfulnessViolation::Kind::UnshieldedCollider, col.left, col.right});
    }
  }
  return rep;
}

LatentDensity path_cancellation_instance() {
  LatentDensity ld;
  ld.spec.dag = Dag(3, {{0, 1}, {1, 2}, {0, 2}});
  ld.spec.noise = NoiseFamily::Gaussian;
  DomainParams& p = ld.params;
  p.C = Eigen::MatrixXd::Zero(3, 3);
  p.S = Eigen::Vector3d(1.0, 1.0, 1.0);
  p.B = Eigen::Vector3d(0.0, 0.0, 0.0);
  p.C(1, 0) = 1.2;
  p.C(2, 1) = 1.5;
  // Theta(0, 1) = -C(1,0)/S_1^2 + C(2,0) C(2,1)/S_2^2 vanishes for:
  p.C(2, 0) = p.C(1, 0) * p.S(2) * p.S(2) / (p.S(1) * p.S(1) * p.C(2, 1));
  return ld;
}

}  // namespace crl
