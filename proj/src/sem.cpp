#include "crl/sem.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace crl {

using nlohmann::json;

std::string to_string(NoiseFamily f) {
  return f == NoiseFamily::Gaussian ? "gaussian" : "laplace";
}

NoiseFamily parse_noise_family(const std::string& s) {
  if (s == "gaussian") return NoiseFamily::Gaussian;
  if (s == "laplace") return NoiseFamily::Laplace;
  throw std::invalid_argument("unknown noise family: " + s);
}

Eigen::MatrixXd DomainParams::weights(const Dag& dag) const {
  const auto n = static_cast<Eigen::Index>(dag.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (auto [p, c] : dag.edges()) {
    w(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) =
        C(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p));
  }
  return w;
}

std::vector<DomainParams> sample_domain_params(const LinearSemSpec& spec, std::size_t num_domains,
                                               std::uint64_t seed) {
  if (num_domains < 1) throw std::invalid_argument("num_domains must be >= 1");
  const auto n = static_cast<Eigen::Index>(spec.n());
  const auto edges = spec.dag.edges();
  Rng root(seed);
  std::vector<DomainParams> out;
  out.reserve(num_domains);
  for (std::size_t u = 0; u < num_domains; ++u) {
    Rng rng = root.split(u);
    DomainParams p;
    p.domain = u;
    p.C = Eigen::MatrixXd::Zero(n, n);
    for (auto [par, child] : edges) {
      p.C(static_cast<Eigen::Index>(child), static_cast<Eigen::Index>(par)) = rng.uniform(0.5, 2.0);
    }
    p.S.resize(n);
    p.B.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) p.S(i) = rng.uniform(0.5, 2.0);
    for (Eigen::Index i = 0; i < n; ++i) p.B(i) = rng.uniform(-2.0, 2.0);
    out.push_back(std::move(p));
  }
  return out;
}

double draw_noise(NoiseFamily f, Rng& rng) {
  return f == NoiseFamily::Gaussian ? rng.normal() : rng.laplace();
}

Eigen::MatrixXd latents_from_noise(const LinearSemSpec& spec, const DomainParams& params,
                                   const Eigen::MatrixXd& noise) {
  const auto n = static_cast<Eigen::Index>(spec.n());
  Eigen::MatrixXd z(noise.rows(), n);
  const auto& order = spec.dag.topological_order();
  for (Eigen::Index r = 0; r < noise.rows(); ++r) {
    for (Vertex vi : order) {
      const auto i = static_cast<Eigen::Index>(vi);
      double v = params.S(i) * noise(r, i) + params.B(i);
      for (Vertex pj : spec.dag.parents(vi)) {
        const auto j = static_cast<Eigen::Index>(pj);
        v += params.C(i, j) * z(r, j);
      }
      z(r, i) = v;
    }
  }
  return z;
}

Eigen::MatrixXd simulate_latents(const LinearSemSpec& spec, const DomainParams& params,
                                 std::size_t m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("sample count must be >= 1");
  const auto n = static_cast<Eigen::Index>(spec.n());
  Rng rng(seed);
  Eigen::MatrixXd eps(static_cast<Eigen::Index>(m), n);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (Eigen::Index i = 0; i < n; ++i) eps(r, i) = draw_noise(spec.noise, rng);
  return latents_from_noise(spec, params, eps);
}

// ---- mixing ---------------------------------------------------------------

namespace {

inline double leaky(double v, double a) { return v > 0 ? v : a * v; }
inline double leaky_inv(double v, double a) { return v > 0 ? v : v / a; }

}  // namespace

MixingFunction::MixingFunction(std::vector<MixingLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw MixingError("mixing needs at least one layer");
  in_dim_ = static_cast<std::size_t>(layers_.front().weight.cols());
  std::size_t cur = in_dim_;
  for (const auto& l : layers_) {
    if (static_cast<std::size_t>(l.weight.cols()) != cur)
      throw MixingError("layer input dimension mismatch");
    if (l.weight.rows() < l.weight.cols()) throw MixingError("layers must not reduce dimension");
    if (!(l.slope > 0.0 && l.slope <= 1.0)) throw MixingError("LeakyReLU slope must be in (0, 1]");
    cur = static_cast<std::size_t>(l.weight.rows());
  }
  out_dim_ = cur;
}

Eigen::VectorXd MixingFunction::mix(const Eigen::VectorXd& z) const {
  Eigen::VectorXd h = z;
  for (const auto& l : layers_) {
    h = l.weight * h;
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = leaky(h(i), l.slope);
  }
  return h;
}

Eigen::MatrixXd MixingFunction::mix_rows(const Eigen::MatrixXd& z) const {
  Eigen::MatrixXd out(z.rows(), static_cast<Eigen::Index>(out_dim_));
  for (Eigen::Index r = 0; r < z.rows(); ++r) out.row(r) = mix(z.row(r).transpose()).transpose();
  return out;
}

MixingFunction::Unmixed MixingFunction::unmix(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != out_dim_) throw MixingError("unmix: wrong input size");
  Unmixed out;
  Eigen::VectorXd h = x;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = leaky_inv(h(i), it->slope);
    Eigen::VectorXd back = it->weight.transpose() * h;
    if (it->weight.rows() != it->weight.cols()) {
      out.residual = std::max(out.residual, (it->weight * back - h).norm());
    }
    h = std::move(back);
  }
  out.z = std::move(h);
  return out;
}

Eigen::MatrixXd MixingFunction::jacobian(const Eigen::VectorXd& z) const {
  Eigen::MatrixXd j = Eigen::MatrixXd::Identity(z.size(), z.size());
  Eigen::VectorXd h = z;
  for (const auto& l : layers_) {
    Eigen::VectorXd pre = l.weight * h;
    Eigen::MatrixXd lj = l.weight;
    h.resize(pre.size());
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      if (pre(i) <= 0) lj.row(i) *= l.slope;
      h(i) = leaky(pre(i), l.slope);
    }
    j = lj * j;
  }
  return j;
}

double MixingFunction::log_abs_det_jacobian(const Eigen::VectorXd& z) const {
  if (in_dim_ != out_dim_) throw MixingError("determinant requires a square mixing");
  // |det W| = 1 for orthogonal W, so only the LeakyReLU slopes contribute.
  double acc = 0.0;
  Eigen::VectorXd h = z;
  for (const auto& l : layers_) {
    Eigen::VectorXd pre = l.weight * h;
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      if (pre(i) <= 0) acc += std::log(l.slope);
      pre(i) = leaky(pre(i), l.slope);
    }
    h = std::move(pre);
  }
  return acc;
}

Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng) {
  const auto k = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd g(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < k; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

MixingFunction make_mixing(std::size_t n, std::size_t d, std::size_t num_layers, double alpha,
                           std::uint64_t seed) {
  if (n < 1 || d < n) throw MixingError("mixing requires 1 <= n <= d");
  if (num_layers < 1) throw MixingError("mixing requires at least one layer");
  Rng rng(seed);
  std::vector<MixingLayer> layers;
  for (std::size_t l = 0; l < num_layers; ++l) {
    Eigen::MatrixXd q = random_orthogonal(d, rng);
    MixingLayer layer;
    layer.weight = (l == 0 && d > n) ? Eigen::MatrixXd(q.leftCols(static_cast<Eigen::Index>(n)))
                                     : q;
    layer.slope = alpha;
    layers.push_back(std::move(layer));
  }
  return MixingFunction(std::move(layers));
}

// ---- dataset --------------------------------------------------------------

Dataset generate_dataset(const LinearSemSpec& spec, std::size_t num_domains,
                         std::size_t samples_per_domain, const MixingConfig& mixing,
                         std::uint64_t seed) {
  if (samples_per_domain < 1) throw std::invalid_argument("samples_per_domain must be >= 1");
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;
  ds.samples_per_domain = samples_per_domain;
  ds.mixing_config = mixing;
  const std::size_t n = spec.n();
  const std::size_t d = mixing.out_dim == 0 ? n : mixing.out_dim;
  ds.mixing_config.out_dim = d;
  ds.params = sample_domain_params(spec, num_domains, derive_seed(seed, 1));
  ds.mixing = make_mixing(n, d, mixing.num_layers, mixing.alpha, derive_seed(seed, 2));

  const auto total = static_cast<Eigen::Index>(num_domains * samples_per_domain);
  ds.z.resize(total, static_cast<Eigen::Index>(n));
  ds.domain.resize(static_cast<std::size_t>(total));
  const std::uint64_t latent_root = derive_seed(seed, 3);
  for (std::size_t u = 0; u < num_domains; ++u) {
    Eigen::MatrixXd zu =
        simulate_latents(spec, ds.params[u], samples_per_domain, derive_seed(latent_root, u));
    const auto off = static_cast<Eigen::Index>(u * samples_per_domain);
    ds.z.middleRows(off, zu.rows()) = zu;
    std::fill_n(ds.domain.begin() + off, samples_per_domain, u);
  }
  ds.x = ds.mixing.mix_rows(ds.z);
  return ds;
}

namespace {

void put_double(std::ostream& os, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  os.write(buf, res.ptr - buf);
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  const auto d = ds.x.cols();
  const auto n = ds.z.cols();
  os << "domain";
  for (Eigen::Index j = 0; j < d; ++j) os << ",x_" << (j + 1);
  for (Eigen::Index j = 0; j < n; ++j) os << ",z_" << (j + 1);
  os << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto k = static_cast<Eigen::Index>(r);
    os << ds.domain[r];
    for (Eigen::Index j = 0; j < d; ++j) {
      os << ',';
      put_double(os, ds.x(k, j));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      os << ',';
      put_double(os, ds.z(k, j));
    }
    os << '\n';
  }
}

void read_dataset_csv(std::istream& is, Dataset& ds) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset CSV is empty");
  std::size_t d = 0, n = 0;
  {
    std::istringstream hs(line);
    std::string col;
    std::getline(hs, col, ',');
    if (col != "domain") throw std::runtime_error("dataset CSV header must start with 'domain'");
    while (std::getline(hs, col, ',')) {
      if (col.rfind("x_", 0) == 0) ++d;
      else if (col.rfind("z_", 0) == 0) ++n;
      else throw std::runtime_error("unexpected CSV column: " + col);
    }
  }
  std::vector<std::size_t> dom;
  std::vector<double> xs, zs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    std::size_t u = 0;
    auto r = std::from_chars(p, end, u);
    if (r.ec != std::errc()) throw std::runtime_error("bad domain field: " + line);
    p = r.ptr;
    for (std::size_t k = 0; k < d + n; ++k) {
      if (p >= end || *p != ',') throw std::runtime_error("short CSV row: " + line);
      ++p;
      double v = 0;
      auto rv = std::from_chars(p, end, v);
      if (rv.ec != std::errc()) throw std::runtime_error("bad number in row: " + line);
      p = rv.ptr;
      (k < d ? xs : zs).push_back(v);
    }
    dom.push_back(u);
  }
  const auto rows = static_cast<Eigen::Index>(dom.size());
  ds.domain = std::move(dom);
  ds.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), rows, static_cast<Eigen::Index>(d));
  ds.z = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      zs.data(), rows, static_cast<Eigen::Index>(n));
}

std::string dataset_metadata_json(const Dataset& ds) {
  json j;
  j["format"] = "crl-dataset-v1";
  j["seed"] = ds.seed;
  j["n"] = ds.spec.n();
  j["d"] = ds.mixing.out_dim();
  j["noise"] = to_string(ds.spec.noise);
  j["samples_per_domain"] = ds.samples_per_domain;
  json edges = json::array();
  for (auto [p, c] : ds.spec.dag.edges()) edges.push_back({p, c});
  j["dag_edges"] = edges;
  json doms = json::array();
  for (const auto& p : ds.params) {
    doms.push_back({{"domain", p.domain}, {"C", matrix_json(p.C)}, {"S", vector_json(p.S)},
                    {"B", vector_json(p.B)}});
  }
  j["domains"] = doms;
  json layers = json::array();
  for (const auto& l : ds.mixing.layers()) {
    layers.push_back({{"slope", l.slope}, {"weight", matrix_json(l.weight)}});
  }
  j["mixing"] = {{"num_layers", ds.mixing_config.num_layers},
                 {"alpha", ds.mixing_config.alpha},
                 {"layers", layers}};
  return j.dump(2) + "\n";
}

Dataset dataset_from_metadata(const std::string& json_text) {
  json j = json::parse(json_text);
  if (j.value("format", "") != "crl-dataset-v1") throw std::runtime_error("unknown metadata format");
  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  const auto n = j.at("n").get<std::size_t>();
  std::vector<std::pair<Vertex, Vertex>> edges;
  for (const auto& e : j.at("dag_edges")) edges.emplace_back(e.at(0).get<Vertex>(), e.at(1).get<Vertex>());
  ds.spec.dag = Dag(n, edges);
  ds.spec.noise = parse_noise_family(j.at("noise").get<std::string>());
  ds.samples_per_domain = j.at("samples_per_domain").get<std::size_t>();
  for (const auto& dj : j.at("domains")) {
    DomainParams p;
    p.domain = dj.at("domain").get<std::size_t>();
    p.C = matrix_from_json(dj.at("C"));
    p.S = vector_from_json(dj.at("S"));
    p.B = vector_from_json(dj.at("B"));
    ds.params.push_back(std::move(p));
  }
  std::vector<MixingLayer> layers;
  for (const auto& lj : j.at("mixing").at("layers")) {
    layers.push_back({matrix_from_json(lj.at("weight")), lj.at("slope").get<double>()});
  }
  ds.mixing = MixingFunction(std::move(layers));
  ds.mixing_config.num_layers = j.at("mixing").at("num_layers").get<std::size_t>();
  ds.mixing_config.alpha = j.at("mixing").at("alpha").get<double>();
  ds.mixing_config.out_dim = j.at("d").get<std::size_t>();
  return ds;
}

}  // namespace crl
