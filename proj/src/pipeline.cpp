#include "crl/pipeline.hpp"

namespace crl {

Dataset simulate(const RunConfig& c) {
  return generate_dataset(c.sem_spec(), c.num_domains, c.samples_per_domain, c.mixing, c.seed);
}

std::uint64_t model_seed(const RunConfig& c) { return derive_seed(c.seed, 20); }

TrainedRun train_model(const RunConfig& c, const Dataset& ds) {
  TrainedRun run{Model(c.model_config(ds.observed_dim()), model_seed(c)), {}};
  run.fit = fit(run.model, ds.x, ds.domain, c.train);
  return run;
}

EvalReport evaluate(const Model& model, const Dataset& ds, const RunConfig& c, bool baseline) {
  const Split split = split_heldout(ds.domain, ds.num_domains(), c.train.heldout_fraction,
                                    derive_seed(c.seed, 103));
  const std::vector<std::size_t>& rows = split.heldout.empty() ? split.train : split.heldout;
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(m, ds.x.cols());
  Eigen::MatrixXd z(m, ds.z.cols());
  std::vector<std::size_t> dom(rows.size());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    x.row(k) = ds.x.row(r);
    z.row(k) = ds.z.row(r);
    dom[static_cast<std::size_t>(k)] = ds.domain[static_cast<std::size_t>(r)];
  }

  EvalReport rep;
  rep.seed = c.seed;
  rep.config_hash = c.hash();
  rep.zhat = model.encode_mean(x, dom);
  rep.z = z;
  rep.match = match_latents(rep.zhat, z);

  const auto npts = std::min<Eigen::Index>(static_cast<Eigen::Index>(c.eval.points), m);
  const std::vector<std::size_t> pdom(dom.begin(), dom.begin() + npts);
  rep.jacobian = jacobian_support(encoder_latent_map(model, ds.mixing), z.topRows(npts), pdom, rep.match->perm,
                                  moralize(ds.spec.dag), c.eval.jacobian_h, c.eval.tau_j);
  rep.structure = structure_metrics(model.adjacency_matrix(), c.eval.threshold, ds.spec.dag, c.causal_ordering());
  if (baseline || c.eval.baseline)
    rep.baseline = independence_baseline_gap(ds.x, ds.domain, model.config(), c.train, model_seed(c));
  return rep;
}

bool isolated_latents_recovered(const MatchReport& m, const MarkovNet& truth, double min_corr) {
  for (Vertex i = 0; i < truth.size(); ++i)
    if (intimate_neighbors(truth, i).empty() && !(m.matched_spearman(static_cast<Eigen::Index>(i)) >= min_corr))
      return false;
  return true;
}

}  // namespace crl
