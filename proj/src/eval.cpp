#include "crl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace crl {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

bool degenerate(const Eigen::VectorXd& v) {
  return v.size() < 2 || (v.array() == v(0)).all();
}

// Min-cost assignment (row r -> column assign[r]) for a square cost matrix.
std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), way_cost(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) s += ',';
      s += fmt(m(i, j));
    }
    s += '\n';
  }
  return s;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

Dag dag_from_adjacency(const Eigen::MatrixXd& a_hat, double threshold, const Permutation& ordering) {
  std::vector<std::pair<Vertex, Vertex>> edges;
  for (Eigen::Index i = 0; i < a_hat.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(a_hat(i, j)) > threshold)
        edges.emplace_back(ordering(static_cast<Vertex>(j)), ordering(static_cast<Vertex>(i)));
  return Dag(static_cast<std::size_t>(a_hat.rows()), edges);
}

}  // namespace

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  Eigen::VectorXd ranks(v.size());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v(static_cast<Eigen::Index>(idx[j + 1])) == v(static_cast<Eigen::Index>(idx[i]))) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(idx[k])) = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (degenerate(a) || degenerate(b)) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

Permutation best_assignment(const Eigen::MatrixXd& score) {
  if (score.rows() != score.cols()) throw std::invalid_argument("assignment needs a square matrix");
  const auto n = static_cast<std::size_t>(score.rows());
  if (n > 8) {
    // Rows of the cost matrix are true latents, columns estimated ones.
    auto assign = hungarian(-score.transpose());
    return Permutation(assign);
  }
  std::vector<Vertex> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::vector<Vertex> best = p;
  double best_val = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += score(static_cast<Eigen::Index>(p[i]), static_cast<Eigen::Index>(i));
    if (s > best_val) {
      best_val = s;
      best = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return Permutation(best);
}

MatchReport match_latents(const Eigen::MatrixXd& zhat, const Eigen::MatrixXd& z, CorrKind objective) {
  if (zhat.rows() != z.rows()) throw std::invalid_argument("match_latents: sample counts differ");
  if (zhat.cols() != z.cols()) throw std::invalid_argument("match_latents: latent dimensions differ");
  const Eigen::Index n = z.cols();
  MatchReport r;
  r.objective = objective;
  r.pearson.resize(n, n);
  r.spearman.resize(n, n);
  std::vector<Eigen::VectorXd> rank_hat, rank_true;
  for (Eigen::Index a = 0; a < n; ++a) {
    if (degenerate(zhat.col(a))) r.degenerate_estimated.push_back(static_cast<std::size_t>(a));
    if (degenerate(z.col(a))) r.degenerate_true.push_back(static_cast<std::size_t>(a));
    rank_hat.push_back(average_ranks(zhat.col(a)));
    rank_true.push_back(average_ranks(z.col(a)));
  }
  auto clean = [](double c) { return std::isnan(c) ? 0.0 : std::abs(c); };
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      r.pearson(a, b) = clean(pearson(zhat.col(a), z.col(b)));
      r.spearman(a, b) = clean(pearson(rank_hat[static_cast<std::size_t>(a)], rank_true[static_cast<std::size_t>(b)]));
    }
  const Eigen::MatrixXd& obj = objective == CorrKind::Spearman ? r.spearman : r.pearson;
  r.perm = best_assignment(obj);
  r.matched_pearson.resize(n);
  r.matched_spearman.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = static_cast<Eigen::Index>(r.perm(static_cast<Vertex>(i)));
    r.matched_pearson(i) = r.pearson(a, i);
    r.matched_spearman(i) = r.spearman(a, i);
  }
  r.mcc = (objective == CorrKind::Spearman ? r.matched_spearman : r.matched_pearson).mean();
  return r;
}

bool JacobianSupportReport::all_pass() const {
  return std::all_of(row_pass.begin(), row_pass.end(), [](bool b) { return b; });
}

JacobianSupportReport jacobian_support(const LatentMap& f, const Eigen::MatrixXd& points,
                                       const std::vector<std::size_t>& domain, const Permutation& perm,
                                       const MarkovNet& truth, double h, double tau) {
  const Eigen::Index n = points.cols();
  if (perm.size() != static_cast<std::size_t>(n) || truth.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("jacobian_support: dimension mismatch");
  if (points.rows() == 0) throw std::invalid_argument("jacobian_support: no points");
  JacobianSupportReport r;
  r.tau = tau;
  r.magnitude = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::MatrixXd plus = points, minus = points;
    plus.col(j).array() += h;
    minus.col(j).array() -= h;
    const Eigen::MatrixXd d = (f(plus, domain) - f(minus, domain)) / (2.0 * h);
    for (Eigen::Index i = 0; i < n; ++i)
      r.magnitude(i, j) = d.col(static_cast<Eigen::Index>(perm(static_cast<Vertex>(i)))).cwiseAbs().mean();
  }
  r.normalized = r.magnitude;
  r.present = ZeroPattern(static_cast<std::size_t>(n));
  r.allowed = ZeroPattern(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = r.magnitude.row(i).maxCoeff();
    if (mx > 0.0) r.normalized.row(i) /= mx;
    const auto vi = static_cast<Vertex>(i);
    r.allowed.set(vi, vi, true);
    for (Vertex k : intimate_neighbors(truth, vi)) r.allowed.set(vi, k, true);
    bool pass = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool on = r.normalized(i, j) > tau;
      r.present.set(vi, static_cast<Vertex>(j), on);
      if (on && !r.allowed(vi, static_cast<Vertex>(j))) pass = false;
    }
    r.row_pass.push_back(pass);
  }
  return r;
}

LatentMap encoder_latent_map(const Model& model, const MixingFunction& mixing) {
  return [&model, &mixing](const Eigen::MatrixXd& z, const std::vector<std::size_t>& domain) {
    return model.encode_mean(mixing.mix_rows(z), domain);
  };
}

std::size_t structural_hamming_distance(const Dag& a, const Dag& b) {
  if (a.size() != b.size()) throw std::invalid_argument("SHD: graphs differ in size");
  std::size_t d = 0;
  for (Vertex i = 0; i < a.size(); ++i)
    for (Vertex j = i + 1; j < a.size(); ++j)
      if (a.has_edge(i, j) != b.has_edge(i, j) || a.has_edge(j, i) != b.has_edge(j, i)) ++d;
  return d;
}

StructureReport structure_metrics(const Eigen::MatrixXd& a_hat, double threshold, const Dag& truth,
                                  const Permutation& ordering) {
  if (a_hat.rows() != a_hat.cols() || static_cast<std::size_t>(a_hat.rows()) != truth.size() ||
      ordering.size() != truth.size())
    throw std::invalid_argument("structure_metrics: dimension mismatch");
  StructureReport r;
  r.threshold = threshold;
  const Dag est = dag_from_adjacency(a_hat, threshold, ordering);
  r.estimated = est.edges();
  r.truth = truth.edges();
  r.shd = structural_hamming_distance(est, truth);
  const MarkovNet me = moralize(est), mt = moralize(truth);
  for (Vertex i = 0; i < truth.size(); ++i)
    for (Vertex j = i + 1; j < truth.size(); ++j)
      if (me.has_edge(i, j) != mt.has_edge(i, j)) ++r.moral_shd;
  return r;
}

BaselineGap independence_baseline_gap(const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                                      ModelConfig mcfg, const TrainConfig& tcfg,
                                      std::uint64_t model_seed) {
  BaselineGap g;
  mcfg.freeze_adjacency = false;
  Model dependent(mcfg, model_seed);
  g.dependent_elbo = fit(dependent, x, domain, tcfg).heldout_elbo;
  mcfg.freeze_adjacency = true;
  Model independent(mcfg, model_seed);
  g.independent_elbo = fit(independent, x, domain, tcfg).heldout_elbo;
  return g;
}

std::string summary_json(const EvalReport& r) {
  json j{{"seed", r.seed}, {"config_hash", r.config_hash}};
  if (r.match) {
    const auto& m = *r.match;
    j["match"] = {{"perm", m.perm.map()},
                  {"objective", m.objective == CorrKind::Spearman ? "spearman" : "pearson"},
                  {"mcc", m.mcc},
                  {"matched_pearson", std::vector<double>(m.matched_pearson.begin(), m.matched_pearson.end())},
                  {"matched_spearman", std::vector<double>(m.matched_spearman.begin(), m.matched_spearman.end())},
                  {"degenerate_estimated", m.degenerate_estimated},
                  {"degenerate_true", m.degenerate_true}};
  }
  if (r.jacobian) {
    const auto& jr = *r.jacobian;
    std::vector<std::string> verdicts;
    for (bool b : jr.row_pass) verdicts.push_back(b ? "PASS" : "FAIL");
    j["jacobian"] = {{"tau", jr.tau},
                     {"verdicts", verdicts},
                     {"all_pass", jr.all_pass()},
                     {"magnitude", matrix_json(jr.magnitude)},
                     {"normalized", matrix_json(jr.normalized)}};
  }
  if (r.structure) {
    const auto& s = *r.structure;
    j["structure"] = {{"threshold", s.threshold},
                      {"estimated_edges", s.estimated},
                      {"true_edges", s.truth},
                      {"shd", s.shd},
                      {"moral_shd", s.moral_shd}};
  }
  if (r.baseline) {
    j["baseline"] = {{"dependent_elbo", r.baseline->dependent_elbo},
                     {"independent_elbo", r.baseline->independent_elbo},
                     {"gap", r.baseline->gap()}};
  }
  return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string tag = "s" + std::to_string(r.seed) + (r.config_hash.empty() ? "" : "_" + r.config_hash);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    auto path = dir / name;
    write_atomic(path, content);
    written.push_back(path);
  };
  if (r.match) {
    put(tag + "_pearson.csv", matrix_csv(r.match->pearson));
    put(tag + "_spearman.csv", matrix_csv(r.match->spearman));
  }
  if (r.jacobian) {
    put(tag + "_jacobian_raw.csv", matrix_csv(r.jacobian->magnitude));
    put(tag + "_jacobian_normalized.csv", matrix_csv(r.jacobian->normalized));
  }
  if (r.match && r.zhat.rows() > 0 && r.zhat.rows() == r.z.rows()) {
    // Row i of the grid is the estimate matched to true latent i.
    for (Eigen::Index i = 0; i < r.z.cols(); ++i) {
      const auto a = static_cast<Eigen::Index>(r.match->perm(static_cast<Vertex>(i)));
      for (Eigen::Index j = 0; j < r.z.cols(); ++j) {
        std::string s = "zhat_matched_" + std::to_string(i + 1) + ",z_" + std::to_string(j + 1) + "\n";
        for (Eigen::Index k = 0; k < r.z.rows(); ++k) s += fmt(r.zhat(k, a)) + ',' + fmt(r.z(k, j)) + '\n';
        put(tag + "_scatter_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv", s);
      }
    }
  }
  put(tag + "_summary.json", summary_json(r));
  return written;
}

}  // namespace crl
