#include "crl/config.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace crl {

Dag preset_dag(const std::string& name) {
  if (name == "y4") return Dag(4, {{0, 2}, {1, 2}, {2, 3}});
  if (name == "chain4") return Dag(4, {{0, 1}, {1, 2}, {2, 3}});
  if (name == "fig1") return Dag(5, {{0, 1}, {1, 3}, {2, 3}, {3, 4}});
  if (name == "fig2") return Dag(6, {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 3}});
  throw ConfigError("unknown graph preset '" + name + "' (expected y4, chain4, fig1, fig2 or custom)");
}

void RunConfig::validate() const {
  if (num_domains == 0) throw ConfigError("data.domains must be >= 1");
  if (samples_per_domain == 0) throw ConfigError("data.samples_per_domain must be >= 1");
  if (mixing.num_layers == 0) throw ConfigError("data.mixing.layers must be >= 1");
  if (!(mixing.alpha > 0.0 && mixing.alpha <= 1.0)) throw ConfigError("data.mixing.alpha must lie in (0, 1]");
  if (!(decoder_variance > 0.0)) throw ConfigError("model.decoder_variance must be > 0");
  if (hidden == 0 || conditioner_hidden == 0) throw ConfigError("hidden widths must be >= 1");
  if (prior == PriorKind::Flow && flow_layers == 0) throw ConfigError("model.flow_layers must be >= 1");
  if (!(eval.threshold >= 0.0)) throw ConfigError("eval.threshold must be >= 0");
  if (!(eval.tau_j >= 0.0 && eval.tau_j <= 1.0)) throw ConfigError("eval.tau_j must lie in [0, 1]");
  if (!(eval.jacobian_h > 0.0)) throw ConfigError("eval.jacobian_h must be > 0");
  train.validate();
  const Dag g = dag();
  if (mixing.out_dim != 0 && mixing.out_dim < g.size())
    throw ConfigError("data.mixing.out_dim must be 0 or >= the number of latents");
  causal_ordering();
}

Dag RunConfig::dag() const {
  if (preset != "custom") return preset_dag(preset);
  if (graph_file.empty()) throw ConfigError("preset custom needs data.graph (edge list file)");
  std::ifstream is(graph_file);
  if (!is) throw ConfigError("cannot open graph file " + graph_file);
  try {
    return read_dag(is);
  } catch (const GraphError& e) {
    throw ConfigError("graph file " + graph_file + ": " + e.what());
  }
}

Permutation RunConfig::causal_ordering() const {
  const Dag g = dag();
  const std::size_t n = g.size();
  if (ordering == "topological") return Permutation(g.topological_order());
  if (ordering == "random") {
    std::vector<Vertex> p(n);
    std::iota(p.begin(), p.end(), 0);
    Rng rng(derive_seed(seed, 0x07de7));
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return Permutation(p);
  }
  std::vector<Vertex> p;
  std::stringstream ss(ordering);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      p.push_back(static_cast<Vertex>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("model.ordering: bad entry '" + item + "'");
    }
  }
  std::vector<Vertex> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Vertex> want(n);
  std::iota(want.begin(), want.end(), 0);
  if (sorted != want) throw ConfigError("model.ordering must be a permutation of 0.." + std::to_string(n - 1));
  return Permutation(p);
}

ModelConfig RunConfig::model_config(std::size_t observed_dim) const {
  ModelConfig m;
  m.latent_dim = dag().size();
  m.observed_dim = observed_dim;
  m.num_domains = num_domains;
  m.prior = prior;
  m.base = noise;
  m.hidden = hidden;
  m.hidden_layers = hidden_layers;
  m.conditioner_hidden = conditioner_hidden;
  m.flow_layers = flow_layers;
  m.decoder_variance = decoder_variance;
  return m;
}

std::string RunConfig::to_yaml() const {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << seed;
  e << YAML::Key << "out" << YAML::Value << out;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << preset;
  e << YAML::Key << "graph" << YAML::Value << graph_file;
  e << YAML::Key << "noise" << YAML::Value << to_string(noise);
  e << YAML::Key << "domains" << YAML::Value << num_domains;
  e << YAML::Key << "samples_per_domain" << YAML::Value << samples_per_domain;
  e << YAML::Key << "mixing" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "layers" << YAML::Value << mixing.num_layers;
  e << YAML::Key << "alpha" << YAML::Value << mixing.alpha;
  e << YAML::Key << "out_dim" << YAML::Value << mixing.out_dim;
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "prior" << YAML::Value << to_string(prior);
  e << YAML::Key << "hidden" << YAML::Value << hidden;
  e << YAML::Key << "hidden_layers" << YAML::Value << hidden_layers;
  e << YAML::Key << "conditioner_hidden" << YAML::Value << conditioner_hidden;
  e << YAML::Key << "flow_layers" << YAML::Value << flow_layers;
  e << YAML::Key << "decoder_variance" << YAML::Value << decoder_variance;
  e << YAML::Key << "ordering" << YAML::Value << ordering;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lr" << YAML::Value << train.lr;
  e << YAML::Key << "beta1" << YAML::Value << train.beta1;
  e << YAML::Key << "beta2" << YAML::Value << train.beta2;
  e << YAML::Key << "eps" << YAML::Value << train.eps;
  e << YAML::Key << "batch_size" << YAML::Value << train.batch_size;
  e << YAML::Key << "epochs" << YAML::Value << train.epochs;
  e << YAML::Key << "lambda" << YAML::Value << train.lambda;
  e << YAML::Key << "heldout_fraction" << YAML::Value << train.heldout_fraction;
  e << YAML::Key << "checkpoint_every" << YAML::Value << train.checkpoint_every;
  e << YAML::EndMap;
  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "threshold" << YAML::Value << eval.threshold;
  e << YAML::Key << "tau_j" << YAML::Value << eval.tau_j;
  e << YAML::Key << "jacobian_h" << YAML::Value << eval.jacobian_h;
  e << YAML::Key << "points" << YAML::Value << eval.points;
  e << YAML::Key << "baseline" << YAML::Value << eval.baseline;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_yaml()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::set<std::string> allowed) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("unknown config key " + where + (where.empty() ? "" : ".") + key);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& dst, const std::string& where) {
  if (!node || !node[key]) return;
  try {
    dst = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  if (!root || root.IsNull()) return c;
  check_keys(root, "", {"seed", "out", "data", "model", "train", "eval"});
  read(root, "seed", c.seed, "");
  read(root, "out", c.out, "");

  const YAML::Node data = root["data"];
  check_keys(data, "data", {"preset", "graph", "noise", "domains", "samples_per_domain", "mixing"});
  read(data, "preset", c.preset, "data");
  read(data, "graph", c.graph_file, "data");
  std::string noise = to_string(c.noise);
  read(data, "noise", noise, "data");
  try {
    c.noise = parse_noise_family(noise);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  read(data, "domains", c.num_domains, "data");
  read(data, "samples_per_domain", c.samples_per_domain, "data");
  if (data) {
    const YAML::Node mix = data["mixing"];
    check_keys(mix, "data.mixing", {"layers", "alpha", "out_dim"});
    read(mix, "layers", c.mixing.num_layers, "data.mixing");
    read(mix, "alpha", c.mixing.alpha, "data.mixing");
    read(mix, "out_dim", c.mixing.out_dim, "data.mixing");
  }

  const YAML::Node model = root["model"];
  check_keys(model, "model",
             {"prior", "hidden", "hidden_layers", "conditioner_hidden", "flow_layers", "decoder_variance", "ordering"});
  std::string prior = to_string(c.prior);
  read(model, "prior", prior, "model");
  try {
    c.prior = parse_prior_kind(prior);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  read(model, "hidden", c.hidden, "model");
  read(model, "hidden_layers", c.hidden_layers, "model");
  read(model, "conditioner_hidden", c.conditioner_hidden, "model");
  read(model, "flow_layers", c.flow_layers, "model");
  read(model, "decoder_variance", c.decoder_variance, "model");
  read(model, "ordering", c.ordering, "model");

  const YAML::Node train = root["train"];
  check_keys(train, "train",
             {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "lambda", "heldout_fraction", "checkpoint_every"});
  read(train, "lr", c.train.lr, "train");
  read(train, "beta1", c.train.beta1, "train");
  read(train, "beta2", c.train.beta2, "train");
  read(train, "eps", c.train.eps, "train");
  read(train, "batch_size", c.train.batch_size, "train");
  read(train, "epochs", c.train.epochs, "train");
  read(train, "lambda", c.train.lambda, "train");
  read(train, "heldout_fraction", c.train.heldout_fraction, "train");
  read(train, "checkpoint_every", c.train.checkpoint_every, "train");

  const YAML::Node ev = root["eval"];
  check_keys(ev, "eval", {"threshold", "tau_j", "jacobian_h", "points", "baseline"});
  read(ev, "threshold", c.eval.threshold, "eval");
  read(ev, "tau_j", c.eval.tau_j, "eval");
  read(ev, "jacobian_h", c.eval.jacobian_h, "eval");
  read(ev, "points", c.eval.points, "eval");
  read(ev, "baseline", c.eval.baseline, "eval");

  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace crl
