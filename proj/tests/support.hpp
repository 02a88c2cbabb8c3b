#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>

#include "crl/model.hpp"
#include "crl/rng.hpp"

namespace crl::testing {

/// Prior-only model (observed_dim 1) with every prior parameter redrawn so
/// quadrature sees a nontrivial density. Scales stay moderate so the mass
/// outside [-12, 12]^n is negligible.
inline Model random_prior_model(PriorKind kind, std::size_t n, NoiseFamily base, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.latent_dim = n;
  cfg.observed_dim = 1;
  cfg.num_domains = 3;
  cfg.prior = kind;
  cfg.base = base;
  cfg.hidden = 4;
  cfg.hidden_layers = 1;
  cfg.conditioner_hidden = 16;
  Model m(cfg, seed);
  Rng rng(derive_seed(seed, 7));
  for (auto& prm : m.params()) {
    auto fill = [&](double lo, double hi) {
      for (auto& v : prm.value.data()) v = rng.uniform(lo, hi);
    };
    if (prm.name == "adjacency.raw") fill(-1.0, 1.0);
    else if (prm.name == "prior.coef") fill(-1.5, 1.5);
    else if (prm.name == "prior.scale_raw") fill(-1.0, 1.0);
    else if (prm.name == "prior.shift") fill(-1.0, 1.0);
    else if (prm.name.rfind("flow.", 0) == 0 && prm.name.back() == 'b') fill(-0.5, 0.5);
  }
  // Output biases of the conditioners: shift in [-0.5, 0.5], log-scale in
  // [-0.75, -0.25] so Laplace tails stay inside the box.
  for (auto& prm : m.params())
    if (prm.name.rfind("flow.", 0) == 0 && prm.name.ends_with(".1.b")) prm.value[1] = rng.uniform(-0.75, -0.25);
  return m;
}

/// Trapezoid rule for exp(log prior) of domain u over [-half, half]^n, n in {1, 2}.
inline double prior_integral(const Model& m, std::size_t u, std::size_t steps, double half = 12.0) {
  const std::size_t n = m.config().latent_dim;
  const double h = 2.0 * half / static_cast<double>(steps);
  const std::size_t per_axis = steps + 1;
  const std::size_t total = n == 1 ? per_axis : per_axis * per_axis;
  const std::size_t chunk = 16384;
  double sum = 0.0;
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t rows = std::min(chunk, total - start);
    ad::Tensor z(rows, n);
    std::vector<double> weight(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t k = start + r;
      const std::size_t a = k % per_axis, b = k / per_axis;
      auto w = [&](std::size_t idx) { return (idx == 0 || idx == steps) ? 0.5 : 1.0; };
      z(r, 0) = -half + static_cast<double>(a) * h;
      weight[r] = w(a);
      if (n == 2) {
        z(r, 1) = -half + static_cast<double>(b) * h;
        weight[r] *= w(b);
      }
    }
    ad::Tape tape;
    const auto p = m.bind(tape);
    const ad::Var lp = m.prior_log_density(tape, p, tape.constant(z), std::vector<std::size_t>(rows, u));
    for (std::size_t r = 0; r < rows; ++r) sum += weight[r] * std::exp(lp.value()(r, 0));
  }
  return sum * std::pow(h, static_cast<double>(n));
}

}  // namespace crl::testing
