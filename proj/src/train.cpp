#include "crl/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "crl/errors.hpp"
#include "crl/rng.hpp"

namespace crl {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

enum SeedStream : std::uint64_t { kShuffle = 101, kNoise = 102, kSplit = 103, kEval = 104 };

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
    throw ConfigError("heldout_fraction must lie in [0, 1)");
}

AdamState AdamState::zeros_like(const ParameterSet& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.rows(), p.value.cols());
    s.v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i].value) || !state.m[i].same_shape(params[i].value))
      throw ad::ShapeError("adam_step: shape mismatch for " + params[i].name);
    for (double g : grads[i].data())
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient for parameter " + params[i].name + " at step " +
                             std::to_string(state.step + 1));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].frozen) continue;
    auto w = params[i].value.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "step,elbo,kl,recon,sparsity,full\n";
  for (const auto& r : trace)
    os << r.step << ',' << fmt(r.elbo) << ',' << fmt(r.kl) << ',' << fmt(r.recon) << ','
       << fmt(r.sparsity) << ',' << fmt(r.full) << '\n';
}

Split split_heldout(const std::vector<std::size_t>& domain, std::size_t num_domains, double fraction,
                    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_domain(num_domains);
  for (std::size_t r = 0; r < domain.size(); ++r) {
    if (domain[r] >= num_domains) throw ConfigError("domain index out of range at row " + std::to_string(r));
    by_domain[domain[r]].push_back(r);
  }
  Split s;
  for (std::size_t u = 0; u < num_domains; ++u) {
    auto rows = by_domain[u];
    Rng rng = Rng(seed).split(u);
    shuffle(rows, rng);
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size())));
    s.heldout.insert(s.heldout.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
    s.train.insert(s.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  return s;
}

double mean_elbo(const Model& model, const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
                 const std::vector<std::size_t>& rows, std::uint64_t seed) {
  if (rows.empty()) throw std::invalid_argument("mean_elbo: no rows");
  constexpr std::size_t kChunk = 2048;
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    std::vector<std::size_t> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                   rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), start + kChunk)));
    Batch b = make_batch(x, domain, chunk);
    Tape tape;
    std::vector<Var> p;
    for (const auto& prm : model.params()) p.push_back(tape.constant(prm.value));
    acc += model.elbo(tape, p, b, rng).elbo * static_cast<double>(chunk.size());
  }
  return acc / static_cast<double>(rows.size());
}

FitResult fit(Model& model, const Eigen::MatrixXd& x, const std::vector<std::size_t>& domain,
              const TrainConfig& cfg, const TrainState* resume, const EpochHook& hook) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != domain.size())
    throw ConfigError("one domain label per sample required");
  if (static_cast<std::size_t>(x.cols()) != model.config().observed_dim)
    throw ConfigError("dataset has " + std::to_string(x.cols()) + " observed columns, model expects " +
                      std::to_string(model.config().observed_dim));
  if (!x.allFinite()) throw ConfigError("dataset contains non-finite values");

  FitResult out;
  out.split = split_heldout(domain, model.config().num_domains, cfg.heldout_fraction,
                            derive_seed(cfg.seed, kSplit));
  out.state = resume ? *resume : TrainState{AdamState::zeros_like(model.params()), 0};
  if (out.split.train.empty()) throw ConfigError("no training rows");

  std::vector<std::size_t> order = out.split.train;
  for (std::size_t epoch = out.state.epochs_done; epoch < cfg.epochs; ++epoch) {
    // Reshuffle from the sorted list so the order depends on the epoch alone.
    order = out.split.train;
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, kShuffle), epoch));
    shuffle(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> rows(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      Batch b = make_batch(x, domain, rows);
      Rng noise_rng(derive_seed(derive_seed(cfg.seed, kNoise), out.state.adam.step));
      Tensor eta(b.size(), model.config().latent_dim);
      for (auto& v : eta.data()) v = noise_rng.normal();

      Tape tape;
      auto p = model.bind(tape);
      LossParts parts;
      try {
        parts = model.full_loss(tape, p, b, eta, cfg.lambda);
      } catch (const ad::DomainError& e) {
        throw NumericalError(std::string(e.what()) + " at step " + std::to_string(out.state.adam.step + 1) +
                             " (epoch " + std::to_string(epoch) + ")");
      }
      if (!std::isfinite(parts.full))
        throw NumericalError("non-finite loss at step " + std::to_string(out.state.adam.step + 1) +
                             " (epoch " + std::to_string(epoch) + ")");
      tape.backward(parts.loss);
      std::vector<Tensor> grads;
      grads.reserve(p.size());
      for (const auto& v : p) grads.push_back(tape.grad(v));
      adam_step(model.params(), grads, out.state.adam, cfg);
      out.trace.push_back({out.state.adam.step, parts.elbo, parts.kl, parts.recon, parts.sparsity,
                           parts.full});
    }
    out.state.epochs_done = epoch + 1;
    if (hook && cfg.checkpoint_every > 0 && out.state.epochs_done % cfg.checkpoint_every == 0)
      hook(model, out.state);
  }
  if (!out.split.heldout.empty())
    out.heldout_elbo = mean_elbo(model, x, domain, out.split.heldout, derive_seed(cfg.seed, kEval));
  return out;
}

std::string training_checkpoint_json(const Model& model, const TrainState& state) {
  auto tensors = [](const std::vector<Tensor>& ts) {
    json arr = json::array();
    for (const auto& t : ts) arr.push_back(std::vector<double>(t.data().begin(), t.data().end()));
    return arr;
  };
  json j{{"format", "crl-training-v1"},
         {"model", json::parse(model.checkpoint_json())},
         {"epochs_done", state.epochs_done},
         {"adam", {{"step", state.adam.step}, {"m", tensors(state.adam.m)}, {"v", tensors(state.adam.v)}}}};
  return j.dump();
}

TrainState load_training_checkpoint(Model& model, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable training checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "crl-training-v1") throw CheckpointError("unknown training checkpoint format");
  model.load_parameters_json(j.at("model").dump());
  TrainState s;
  s.epochs_done = j.at("epochs_done").get<std::size_t>();
  s.adam = AdamState::zeros_like(model.params());
  s.adam.step = j.at("adam").at("step").get<std::size_t>();
  for (const char* key : {"m", "v"}) {
    const auto& arr = j.at("adam").at(key);
    auto& dst = std::string(key) == "m" ? s.adam.m : s.adam.v;
    if (arr.size() != dst.size()) throw CheckpointError("optimizer state size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto data = arr[i].get<std::vector<double>>();
      if (data.size() != dst[i].size()) throw CheckpointError("optimizer state shape mismatch");
      dst[i] = Tensor(dst[i].rows(), dst[i].cols(), std::move(data));
    }
  }
  return s;
}

}  // namespace crl
