#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "crl/config.hpp"
#include "crl/train.hpp"

using namespace crl;

namespace {

ParameterSet scalar_params(double x) {
  ParameterSet ps;
  ps.add("x", ad::Tensor::scalar(x));
  return ps;
}

struct SmallProblem {
  Dataset ds;
  ModelConfig mcfg;
  TrainConfig tcfg;
};

SmallProblem small_problem(PriorKind kind) {
  SmallProblem p;
  p.ds = generate_dataset({preset_dag("y4"), NoiseFamily::Gaussian}, 3, 200, {}, 5);
  p.mcfg.latent_dim = 4;
  p.mcfg.observed_dim = 4;
  p.mcfg.num_domains = 3;
  p.mcfg.prior = kind;
  p.mcfg.hidden = 16;
  p.mcfg.conditioner_hidden = 8;
  p.tcfg.batch_size = 64;
  p.tcfg.epochs = 4;
  p.tcfg.seed = 9;
  return p;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02}) {
    ParameterSet ps = scalar_params(1.0);
    AdamState st = AdamState::zeros_like(ps);
    TrainConfig c;
    c.lr = 0.01;
    adam_step(ps, {ad::Tensor::scalar(g)}, st, c);
    EXPECT_NEAR(ps[0].value.item(), 1.0 - 0.01 * (g > 0 ? 1.0 : -1.0), 1e-8);
    EXPECT_EQ(st.step, 1u);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterSet ps = scalar_params(0.7);
  AdamState st = AdamState::zeros_like(ps);
  for (int k = 0; k < 5; ++k) adam_step(ps, {ad::Tensor::scalar(0.0)}, st, TrainConfig{});
  EXPECT_EQ(ps[0].value.item(), 0.7);
}

// Scalar recurrence written out independently of the library.
TEST(Adam, QuadraticMatchesScalarRecurrence) {
  TrainConfig c;
  c.lr = 0.05;
  ParameterSet ps = scalar_params(1.0);
  AdamState st = AdamState::zeros_like(ps);
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 500; ++t) {
    const double g = 2.0 * x;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mhat = m / (1 - std::pow(c.beta1, t)), vhat = v / (1 - std::pow(c.beta2, t));
    x -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    adam_step(ps, {ad::Tensor::scalar(2.0 * ps[0].value.item())}, st, c);
    ASSERT_NEAR(ps[0].value.item(), x, 1e-12) << "step " << t;
  }
  EXPECT_LT(std::abs(x), 1e-3);
}

TEST(Adam, NonFiniteGradientAbortsWithDiagnostics) {
  ParameterSet ps;
  ps.add("encoder.0.w", ad::Tensor(2, 2));
  AdamState st = AdamState::zeros_like(ps);
  ad::Tensor g(2, 2);
  g(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(ps, {g}, st, TrainConfig{});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.0.w"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Adam, FrozenParametersUntouched) {
  ParameterSet ps;
  ps.add("a", ad::Tensor::scalar(1.0), true);
  ps.add("b", ad::Tensor::scalar(1.0));
  AdamState st = AdamState::zeros_like(ps);
  adam_step(ps, {ad::Tensor::scalar(5.0), ad::Tensor::scalar(5.0)}, st, TrainConfig{});
  EXPECT_EQ(ps[0].value.item(), 1.0);
  EXPECT_NE(ps[1].value.item(), 1.0);
}

TEST(Split, PerDomainTenPercentDisjointSorted) {
  std::vector<std::size_t> domain;
  for (std::size_t u = 0; u < 3; ++u) domain.insert(domain.end(), 100 + 10 * u, u);
  const Split s = split_heldout(domain, 3, 0.1, 4);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  EXPECT_TRUE(std::is_sorted(s.heldout.begin(), s.heldout.end()));
  EXPECT_EQ(s.train.size() + s.heldout.size(), domain.size());
  std::vector<std::size_t> per(3);
  for (auto r : s.heldout) ++per[domain[r]];
  EXPECT_EQ(per, (std::vector<std::size_t>{10, 11, 12}));
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.heldout.begin(), s.heldout.end());
  EXPECT_EQ(all.size(), domain.size());
  EXPECT_EQ(split_heldout(domain, 3, 0.1, 4).heldout, s.heldout);
  EXPECT_NE(split_heldout(domain, 3, 0.1, 5).heldout, s.heldout);
}

TEST(Fit, ZeroEpochsLeavesModelUnchanged) {
  auto p = small_problem(PriorKind::Parametric);
  p.tcfg.epochs = 0;
  Model m(p.mcfg, 1);
  const std::string before = m.checkpoint_json();
  const FitResult r = fit(m, p.ds.x, p.ds.domain, p.tcfg);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(m.checkpoint_json(), before);
}

TEST(Fit, SameSeedBitIdentical) {
  for (PriorKind kind : {PriorKind::Flow, PriorKind::Parametric}) {
    auto p = small_problem(kind);
    p.tcfg.epochs = 2;
    Model a(p.mcfg, 1), b(p.mcfg, 1);
    const FitResult ra = fit(a, p.ds.x, p.ds.domain, p.tcfg);
    const FitResult rb = fit(b, p.ds.x, p.ds.domain, p.tcfg);
    EXPECT_EQ(a.checkpoint_json(), b.checkpoint_json());
    std::ostringstream ta, tb;
    write_trace_csv(ta, ra.trace);
    write_trace_csv(tb, rb.trace);
    EXPECT_EQ(ta.str(), tb.str());
  }
}

TEST(Fit, LossDecreases) {
  auto p = small_problem(PriorKind::Parametric);
  p.tcfg.epochs = 8;
  p.tcfg.lr = 3e-3;
  Model m(p.mcfg, 2);
  const FitResult r = fit(m, p.ds.x, p.ds.domain, p.tcfg);
  const std::size_t k = std::max<std::size_t>(1, r.trace.size() / 10);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    first += r.trace[i].full;
    last += r.trace[r.trace.size() - 1 - i].full;
  }
  EXPECT_LT(last, first);
}

TEST(Fit, ResumeReproducesUninterruptedRun) {
  auto p = small_problem(PriorKind::Flow);
  Model whole(p.mcfg, 3);
  const FitResult full = fit(whole, p.ds.x, p.ds.domain, p.tcfg);

  auto half_cfg = p.tcfg;
  half_cfg.epochs = 2;
  Model first(p.mcfg, 3);
  const FitResult half = fit(first, p.ds.x, p.ds.domain, half_cfg);
  const std::string saved = training_checkpoint_json(first, half.state);

  Model resumed(p.mcfg, 99);
  const TrainState st = load_training_checkpoint(resumed, saved);
  EXPECT_EQ(st.epochs_done, 2u);
  const FitResult rest = fit(resumed, p.ds.x, p.ds.domain, p.tcfg, &st);
  EXPECT_EQ(resumed.checkpoint_json(), whole.checkpoint_json());
  EXPECT_EQ(rest.heldout_elbo, full.heldout_elbo);
  ASSERT_EQ(half.trace.size() + rest.trace.size(), full.trace.size());
  EXPECT_EQ(rest.trace.back().full, full.trace.back().full);
}

TEST(Fit, PeriodicHook) {
  auto p = small_problem(PriorKind::Parametric);
  p.tcfg.checkpoint_every = 2;
  Model m(p.mcfg, 1);
  std::vector<std::size_t> seen;
  fit(m, p.ds.x, p.ds.domain, p.tcfg, nullptr, [&](const Model&, const TrainState& s) { seen.push_back(s.epochs_done); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{2, 4}));
}

TEST(Fit, Errors) {
  auto p = small_problem(PriorKind::Parametric);
  Model m(p.mcfg, 1);
  auto bad_domain = p.ds.domain;
  bad_domain[7] = 3;
  EXPECT_THROW(fit(m, p.ds.x, bad_domain, p.tcfg), ConfigError);
  Eigen::MatrixXd nan_x = p.ds.x;
  nan_x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit(m, nan_x, p.ds.domain, p.tcfg), ConfigError);
  // A non-finite loss aborts with the step number.
  m.params()[0].value.data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    fit(m, p.ds.x, p.ds.domain, p.tcfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Trace, CsvHeader) {
  std::ostringstream os;
  write_trace_csv(os, {TraceRow{1, -2.5, 1.0, -1.5, 0.25, 2.5025}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "step,elbo,kl,recon,sparsity,full");
}
