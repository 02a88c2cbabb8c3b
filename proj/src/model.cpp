#include "crl/model.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

namespace crl {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
// Keeps log(scale) finite when softplus underflows.
constexpr double kScaleFloor = 1e-6;

json config_to_json(const ModelConfig& c) {
  return json{{"latent_dim", c.latent_dim},
              {"observed_dim", c.observed_dim},
              {"num_domains", c.num_domains},
              {"prior", to_string(c.prior)},
              {"base", to_string(c.base)},
              {"hidden", c.hidden},
              {"hidden_layers", c.hidden_layers},
              {"conditioner_hidden", c.conditioner_hidden},
              {"flow_layers", c.flow_layers},
              {"slope", c.slope},
              {"decoder_variance", c.decoder_variance},
              {"freeze_adjacency", c.freeze_adjacency}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.observed_dim = j.at("observed_dim").get<std::size_t>();
  c.num_domains = j.at("num_domains").get<std::size_t>();
  c.prior = parse_prior_kind(j.at("prior").get<std::string>());
  c.base = parse_noise_family(j.at("base").get<std::string>());
  c.hidden = j.at("hidden").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.conditioner_hidden = j.at("conditioner_hidden").get<std::size_t>();
  c.flow_layers = j.at("flow_layers").get<std::size_t>();
  c.slope = j.at("slope").get<double>();
  c.decoder_variance = j.at("decoder_variance").get<double>();
  c.freeze_adjacency = j.at("freeze_adjacency").get<bool>();
  return c;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::string to_string(PriorKind k) { return k == PriorKind::Flow ? "flow" : "parametric"; }

PriorKind parse_prior_kind(const std::string& s) {
  if (s == "flow") return PriorKind::Flow;
  if (s == "parametric") return PriorKind::Parametric;
  throw std::invalid_argument("unknown prior kind '" + s + "' (expected flow or parametric)");
}

std::string ModelConfig::canonical() const { return config_to_json(*this).dump(); }

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t ParameterSet::add(std::string name, Tensor value, bool frozen) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
  params_.push_back({std::move(name), std::move(value), frozen});
  return params_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Batch make_batch(const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                 const std::vector<std::size_t>& rows) {
  Batch b;
  b.x = Tensor(rows.size(), static_cast<std::size_t>(x.cols()));
  b.domain.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    for (Eigen::Index c = 0; c < x.cols(); ++c) b.x(k, static_cast<std::size_t>(c)) = x(r, c);
    b.domain.push_back(domain.at(rows[k]));
  }
  return b;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  const std::size_t n = cfg_.latent_dim, d = cfg_.observed_dim, m = cfg_.num_domains;
  if (n == 0 || d == 0 || m == 0) throw std::invalid_argument("model dimensions must be positive");
  if (!(cfg_.decoder_variance > 0.0)) throw std::invalid_argument("decoder variance must be > 0");
  if (cfg_.prior == PriorKind::Flow && cfg_.flow_layers == 0)
    throw std::invalid_argument("flow prior needs at least one layer");
  Rng rng(seed);

  std::vector<std::size_t> enc{d + m}, dec{n};
  for (std::size_t l = 0; l < cfg_.hidden_layers; ++l) {
    enc.push_back(cfg_.hidden);
    dec.push_back(cfg_.hidden);
  }
  enc.push_back(2 * n);
  dec.push_back(d);
  encoder_ = make_mlp("encoder", enc, rng);
  decoder_ = make_mlp("decoder", dec, rng);

  mask_ = Tensor(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) mask_(i, j) = 1.0;
  Tensor raw(n, n);
  if (!cfg_.freeze_adjacency)
    for (auto& v : raw.data()) v = 0.1 * rng.normal();
  adjacency_ = params_.add("adjacency.raw", raw, cfg_.freeze_adjacency);

  if (cfg_.prior == PriorKind::Flow) {
    for (std::size_t k = 0; k < cfg_.flow_layers; ++k) {
      conditioners_.emplace_back();
      for (std::size_t i = 0; i < n; ++i)
        conditioners_.back().push_back(
            make_mlp("flow." + std::to_string(k) + ".cond" + std::to_string(i),
                     {n + m, cfg_.conditioner_hidden, 2}, rng));
    }
  } else {
    coef_ = params_.add("prior.coef", Tensor(m, n * n, 1.0));
    // softplus(log(e - 1)) = 1
    scale_raw_ = params_.add("prior.scale_raw", Tensor(m, n, std::log(std::numbers::e - 1.0)));
    shift_ = params_.add("prior.shift", Tensor(m, n));
  }
}

Mlp Model::make_mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
  Mlp mlp;
  mlp.slope = cfg_.slope;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    const std::string prefix = name + "." + std::to_string(l);
    mlp.weights.push_back(params_.add(prefix + ".w", uniform_tensor(widths[l], widths[l + 1], bound, rng)));
    mlp.biases.push_back(params_.add(prefix + ".b", uniform_tensor(1, widths[l + 1], bound, rng)));
  }
  return mlp;
}

std::vector<Var> Model::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(p.frozen ? tape.constant(p.value) : tape.leaf(p.value));
  return vars;
}

Var Model::run_mlp(const Mlp& m, const std::vector<Var>& p, Var x) const {
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    x = ad::matmul(x, p[m.weights[l]]) + p[m.biases[l]];
    if (l + 1 < m.weights.size()) x = ad::leaky_relu(x, m.slope);
  }
  return x;
}

Var Model::one_hot(Tape& tape, const std::vector<std::size_t>& domain) const {
  Tensor oh(domain.size(), cfg_.num_domains);
  for (std::size_t k = 0; k < domain.size(); ++k) {
    if (domain[k] >= cfg_.num_domains)
      throw std::out_of_range("domain index " + std::to_string(domain[k]) + " >= " +
                              std::to_string(cfg_.num_domains));
    oh(k, domain[k]) = 1.0;
  }
  return tape.constant(std::move(oh));
}

Model::Posterior Model::encode(Tape& tape, const std::vector<Var>& p, const Batch& b) const {
  if (b.x.cols() != cfg_.observed_dim)
    throw ad::ShapeError("encoder expects " + std::to_string(cfg_.observed_dim) + " columns, got " +
                         std::to_string(b.x.cols()));
  Var in = ad::concat({tape.constant(b.x), one_hot(tape, b.domain)}, 1);
  Var h = run_mlp(encoder_, p, in);
  const std::size_t n = cfg_.latent_dim;
  return {ad::slice(h, 1, 0, n), ad::softplus(ad::slice(h, 1, n, 2 * n)) + kScaleFloor};
}

Var Model::decode(const std::vector<Var>& p, Var z) const { return run_mlp(decoder_, p, z); }

Var Model::adjacency(Tape& tape, const std::vector<Var>& p) const {
  return p[adjacency_] * tape.constant(mask_);
}

Eigen::MatrixXd Model::adjacency_matrix() const {
  Eigen::MatrixXd a = params_[adjacency_].value.to_eigen();
  return a.cwiseProduct(mask_.to_eigen());
}

Var Model::base_log_density(Var eps) const {
  if (cfg_.base == NoiseFamily::Gaussian) return ad::scale(ad::square(eps), -0.5) - kHalfLog2Pi;
  return -ad::abs(eps) - std::numbers::ln2;
}

Var Model::prior_log_density(Tape& tape, const std::vector<Var>& p, Var z,
                             const std::vector<std::size_t>& domain) const {
  return cfg_.prior == PriorKind::Flow ? prior_log_density_flow(tape, p, z, domain)
                                       : prior_log_density_parametric(tape, p, z, domain);
}

Model::PriorTerms Model::prior_terms(Tape& tape, const std::vector<Var>& p, Var z,
                                     const std::vector<std::size_t>& domain) const {
  const std::size_t n = cfg_.latent_dim;
  Var a = adjacency(tape, p);
  Var oh = one_hot(tape, domain);

  if (cfg_.prior == PriorKind::Flow) {
    std::vector<Var> eps, log_det;
    for (std::size_t i = 0; i < n; ++i) {
      // Row i of A is zero from column i on, so only earlier latents enter.
      Var input = ad::concat({ad::slice(a, 0, i, i + 1) * z, oh}, 1);
      Var v = ad::slice(z, 1, i, i + 1);
      Var ld;
      for (std::size_t k = 0; k < conditioners_.size(); ++k) {
        Var out = run_mlp(conditioners_[k][i], p, input);
        Var mu = ad::slice(out, 1, 0, 1);
        Var s = ad::slice(out, 1, 1, 2);
        v = (v - mu) * ad::exp(-s);
        ld = k == 0 ? -s : ld - s;
      }
      eps.push_back(v);
      log_det.push_back(ld);
    }
    return {ad::concat(eps, 1), ad::concat(log_det, 1)};
  }

  // Row i of the linear part: sum_j A(i, j) C_u(i, j) z_j, computed on the
  // flattened n*n layout and reduced by a block-sum matrix.
  std::vector<Var> rows, tiles;
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back(ad::slice(a, 0, i, i + 1));
    tiles.push_back(z);
  }
  Var a_flat = ad::concat(rows, 1);
  Var z_tiled = ad::concat(tiles, 1);
  Tensor block(n * n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) block(i * n + j, i) = 1.0;
  Var coef = ad::matmul(oh, p[coef_]);
  Var linear = ad::matmul(coef * a_flat * z_tiled, tape.constant(std::move(block)));

  Var scale = ad::softplus(ad::matmul(oh, p[scale_raw_])) + kScaleFloor;
  Var shift = ad::matmul(oh, p[shift_]);
  return {(z - shift - linear) / scale, -ad::log(scale)};
}

Var Model::prior_log_density_flow(Tape& tape, const std::vector<Var>& p, Var z,
                                  const std::vector<std::size_t>& domain) const {
  if (cfg_.prior != PriorKind::Flow) throw std::logic_error("model has no flow prior");
  PriorTerms t = prior_terms(tape, p, z, domain);
  return ad::sum(base_log_density(t.eps) + t.log_det, 1);
}

Var Model::prior_log_density_parametric(Tape& tape, const std::vector<Var>& p, Var z,
                                        const std::vector<std::size_t>& domain) const {
  if (cfg_.prior != PriorKind::Parametric) throw std::logic_error("model has no parametric prior");
  PriorTerms t = prior_terms(tape, p, z, domain);
  return ad::sum(base_log_density(t.eps) + t.log_det, 1);
}

Var Model::reparameterize(Tape& tape, const Posterior& q, const Tensor& eta) {
  return q.mean + q.scale * tape.constant(eta);
}

LossParts Model::elbo(Tape& tape, const std::vector<Var>& p, const Batch& b, const Tensor& eta) const {
  const std::size_t m = b.size(), n = cfg_.latent_dim, d = cfg_.observed_dim;
  if (eta.rows() != m || eta.cols() != n)
    throw ad::ShapeError("eta must be " + std::to_string(m) + "x" + std::to_string(n));
  Posterior q = encode(tape, p, b);
  Var z = reparameterize(tape, q, eta);

  Tensor logq_const(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += -0.5 * eta(r, c) * eta(r, c) - kHalfLog2Pi;
    logq_const(r, 0) = s;
  }
  Var logq = tape.constant(std::move(logq_const)) - ad::sum(ad::log(q.scale), 1);
  Var kl = logq - prior_log_density(tape, p, z, b.domain);

  const double var = cfg_.decoder_variance;
  Var resid = tape.constant(b.x) - decode(p, z);
  Var recon = ad::scale(ad::sum(ad::square(resid), 1), -0.5 / var) -
              0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var);

  LossParts out;
  out.loss = ad::mean(kl - recon);
  out.kl = ad::mean(kl).value().item();
  out.recon = ad::mean(recon).value().item();
  out.elbo = -out.loss.value().item();
  out.full = out.loss.value().item();
  return out;
}

LossParts Model::elbo(Tape& tape, const std::vector<Var>& p, const Batch& b, Rng& rng) const {
  Tensor eta(b.size(), cfg_.latent_dim);
  for (auto& v : eta.data()) v = rng.normal();
  return elbo(tape, p, b, eta);
}

Var Model::sparsity_loss(Tape& tape, const std::vector<Var>& p) const {
  return ad::sum(ad::abs(adjacency(tape, p)));
}

LossParts Model::full_loss(Tape& tape, const std::vector<Var>& p, const Batch& b, const Tensor& eta,
                           double lambda) const {
  LossParts out = elbo(tape, p, b, eta);
  Var sp = sparsity_loss(tape, p);
  out.sparsity = sp.value().item();
  out.loss = out.loss + ad::scale(sp, lambda);
  out.full = out.loss.value().item();
  return out;
}

Eigen::MatrixXd Model::encode_mean(const Eigen::MatrixXd& x,
                                   const std::vector<std::size_t>& domain) const {
  const auto total = static_cast<std::size_t>(x.rows());
  if (domain.size() != total) throw std::invalid_argument("one domain label per row required");
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cfg_.latent_dim));
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < total; start += kChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < std::min(total, start + kChunk); ++r) rows.push_back(r);
    Batch b = make_batch(x, domain, rows);
    Tape tape;
    std::vector<Var> p;
    for (const auto& prm : params_) p.push_back(tape.constant(prm.value));
    Eigen::MatrixXd mu = encode(tape, p, b).mean.value().to_eigen();
    out.middleRows(static_cast<Eigen::Index>(start), mu.rows()) = mu;
  }
  return out;
}

std::string Model::checkpoint_json() const {
  json params = json::array();
  for (const auto& p : params_) {
    params.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"data", std::vector<double>(p.value.data().begin(), p.value.data().end())}});
  }
  json j{{"format", "crl-checkpoint-v1"},
         {"config", config_to_json(cfg_)},
         {"config_hash", hex64(cfg_.hash())},
         {"params", params}};
  return j.dump();
}

void Model::load_parameters_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "crl-checkpoint-v1") throw CheckpointError("unknown checkpoint format");
  if (j.at("config_hash").get<std::string>() != hex64(cfg_.hash()))
    throw CheckpointError("checkpoint config hash does not match the model");
  const auto& arr = j.at("params");
  if (arr.size() != params_.size()) throw CheckpointError("checkpoint parameter count mismatch");
  for (const auto& e : arr) {
    Parameter& p = params_[params_.index(e.at("name").get<std::string>())];
    const auto rows = e.at("rows").get<std::size_t>(), cols = e.at("cols").get<std::size_t>();
    if (rows != p.value.rows() || cols != p.value.cols())
      throw CheckpointError("shape mismatch for " + p.name);
    p.value = Tensor(rows, cols, e.at("data").get<std::vector<double>>());
  }
}

Model Model::from_checkpoint_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint: ") + e.what());
  }
  Model m(config_from_json(j.at("config")), 0);
  m.load_parameters_json(text);
  return m;
}

}  // namespace crl
