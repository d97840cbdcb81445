#include "rssm/config.hpp"

#include <fstream>
#include <set>

namespace rssm {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects anything it was not asked about.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError("config: bad value for '" + path(key) + "': " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + path(it.key()) + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& what, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config: " + what + ": " + e.what());
  }
}

}  // namespace

json to_json(const ToyConfig& c) {
  return {{"covariate_dim", c.covariate_dim}, {"n_vertices", c.n_vertices}, {"n_communities", c.n_communities},
          {"p_within", c.p_within},           {"p_between", c.p_between},   {"steps", c.steps},
          {"alpha1", c.alpha1},               {"alpha2", c.alpha2},         {"eta", c.eta},
          {"sigma_x", c.sigma_x},             {"sigma_z", c.sigma_z},       {"epsilon", c.epsilon},
          {"n_train", c.n_train},             {"n_valid", c.n_valid},       {"n_test", c.n_test}};
}

ToyConfig toy_from_json(const json& j, ToyConfig c, const std::string& where) {
  Fields f(j, where);
  f.get("covariate_dim", c.covariate_dim);
  f.get("n_vertices", c.n_vertices);
  f.get("n_communities", c.n_communities);
  f.get("p_within", c.p_within);
  f.get("p_between", c.p_between);
  f.get("steps", c.steps);
  f.get("alpha1", c.alpha1);
  f.get("alpha2", c.alpha2);
  f.get("eta", c.eta);
  f.get("sigma_x", c.sigma_x);
  f.get("sigma_z", c.sigma_z);
  f.get("epsilon", c.epsilon);
  f.get("n_train", c.n_train);
  f.get("n_valid", c.n_valid);
  f.get("n_test", c.n_test);
  f.finish();
  wrap(where, [&] { c.validate(); });
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"x_dim", c.x_dim},
          {"u_dim", c.u_dim},
          {"vertex_attr_dim", c.vertex_attr_dim},
          {"edge_attr_dim", c.edge_attr_dim},
          {"z_dim", c.z_dim},
          {"global_dim", c.global_dim},
          {"rnn_hidden", c.rnn_hidden},
          {"rnn_layers", c.rnn_layers},
          {"mlp_hidden", c.mlp_hidden},
          {"heads", c.heads},
          {"query_dim", c.query_dim},
          {"value_dim", c.value_dim},
          {"vertex_embed_dim", c.vertex_embed_dim},
          {"gen_mha_layers", c.gen_mha_layers},
          {"prop_mha_layers", c.prop_mha_layers},
          {"readout_dim", c.readout_dim},
          {"gen_flows", c.gen_flows},
          {"prop_flows", c.prop_flows},
          {"flow_hidden", c.flow_hidden},
          {"obs_head", to_string(c.obs_head)},
          {"mixture_components", c.mixture_components},
          {"aux_negatives", c.aux_negatives}};
}

ModelConfig model_from_json(const json& j, ModelConfig c, const std::string& where) {
  Fields f(j, where);
  f.get("x_dim", c.x_dim);
  f.get("u_dim", c.u_dim);
  f.get("vertex_attr_dim", c.vertex_attr_dim);
  f.get("edge_attr_dim", c.edge_attr_dim);
  f.get("z_dim", c.z_dim);
  f.get("global_dim", c.global_dim);
  f.get("rnn_hidden", c.rnn_hidden);
  f.get("rnn_layers", c.rnn_layers);
  f.get("mlp_hidden", c.mlp_hidden);
  f.get("heads", c.heads);
  f.get("query_dim", c.query_dim);
  f.get("value_dim", c.value_dim);
  f.get("vertex_embed_dim", c.vertex_embed_dim);
  f.get("gen_mha_layers", c.gen_mha_layers);
  f.get("prop_mha_layers", c.prop_mha_layers);
  f.get("readout_dim", c.readout_dim);
  f.get("gen_flows", c.gen_flows);
  f.get("prop_flows", c.prop_flows);
  f.get("flow_hidden", c.flow_hidden);
  std::string head = to_string(c.obs_head);
  f.get("obs_head", head);
  c.obs_head = wrap(f.path("obs_head"), [&] { return parse_obs_head(head); });
  f.get("mixture_components", c.mixture_components);
  f.get("aux_negatives", c.aux_negatives);
  f.finish();
  if (c.x_dim == 0 || c.z_dim == 0 || c.global_dim == 0 || c.rnn_hidden == 0 || c.rnn_layers == 0 || c.heads == 0)
    throw ConfigError("config: " + where + ": x_dim, z_dim, global_dim, rnn_hidden, rnn_layers and heads must be positive");
  if (c.obs_head == ObsHead::kLogisticMixture && c.mixture_components == 0)
    throw ConfigError("config: " + where + ".mixture_components must be positive");
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},       {"batch", c.batch}, {"particles", c.particles},
          {"lr", c.lr},             {"lr_floor", c.lr_floor}, {"clip", c.clip},
          {"beta1", c.beta1},       {"beta2", c.beta2}, {"resample", to_string(c.scheme)},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_from_json(const json& j, TrainConfig c, const std::string& where) {
  Fields f(j, where);
  f.get("steps", c.steps);
  f.get("batch", c.batch);
  f.get("particles", c.particles);
  f.get("lr", c.lr);
  f.get("lr_floor", c.lr_floor);
  f.get("clip", c.clip);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  std::string scheme = to_string(c.scheme);
  f.get("resample", scheme);
  c.scheme = wrap(f.path("resample"), [&] { return parse_resample_scheme(scheme); });
  f.get("checkpoint_every", c.checkpoint_every);
  f.finish();
  if (c.batch == 0 || c.particles == 0) throw ConfigError("config: " + where + ": batch and particles must be positive");
  if (!(c.lr >= 0) || !(c.clip > 0)) throw ConfigError("config: " + where + ": lr must be >= 0 and clip > 0");
  return c;
}

json to_json(const EvalOptions& c) {
  return {{"particles", c.particles}, {"mc_samples", c.mc_samples}, {"history", c.history}, {"batch", c.batch},
          {"workers", c.workers}};
}

EvalOptions eval_from_json(const json& j, EvalOptions c, const std::string& where) {
  Fields f(j, where);
  f.get("particles", c.particles);
  f.get("mc_samples", c.mc_samples);
  f.get("history", c.history);
  f.get("batch", c.batch);
  f.get("workers", c.workers);
  f.finish();
  if (c.particles == 0 || c.mc_samples == 0 || c.batch == 0)
    throw ConfigError("config: " + where + ": particles, mc_samples and batch must be positive");
  return c;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.model = toy_model_config();
  if (name == "paper") {
    c.toy = ToyConfig::paper();
  } else if (name == "small") {
    c.toy = ToyConfig::small();
    c.eval.particles = 200;
    c.eval.mc_samples = 200;
  } else {
    throw ConfigError("config: unknown preset '" + name + "'; valid options: paper, small");
  }
  c.eval.history = c.toy.steps - 5;
  return c;
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (!j.contains("schema_version")) throw ConfigError("config: missing mandatory key 'schema_version'");
  std::string preset = "small";
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("config: bad value for 'preset': expected a string");
    preset = j["preset"].get<std::string>();
  }
  RunConfig c = preset_config(preset);
  Fields f(j, "");
  f.get("schema_version", c.schema_version);
  if (c.schema_version != 1)
    throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version) + " (expected 1)");
  f.get("preset", c.preset);
  f.get("seed", c.seed);
  f.get("dataset", c.dataset);
  if (const json* s = f.sub("toy")) c.toy = toy_from_json(*s, c.toy);
  if (const json* s = f.sub("model")) c.model = model_from_json(*s, c.model);
  if (const json* s = f.sub("train")) c.train = train_from_json(*s, c.train);
  c.eval.history = c.toy.steps > 5 ? c.toy.steps - 5 : 1;
  if (const json* s = f.sub("eval")) c.eval = eval_from_json(*s, c.eval);
  f.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  return {{"schema_version", c.schema_version},
          {"preset", c.preset},
          {"seed", c.seed},
          {"dataset", c.dataset},
          {"toy", to_json(c.toy)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"eval", to_json(c.eval)}};
}

void check_model_matches(const ModelConfig& m, const ToyDataset& ds) {
  const ToySplit* s = !ds.train.episodes.empty() ? &ds.train : !ds.test.episodes.empty() ? &ds.test : &ds.valid;
  if (s->episodes.empty()) return;
  const Episode& ep = s->episodes.front();
  const std::size_t dx = ep.x.shape()[2], du = ep.u.shape()[2], dv = ep.graph->vertex_attr_dim();
  if (dx != m.x_dim || du != m.u_dim || (m.vertex_attr_dim != 0 && dv != m.vertex_attr_dim))
    throw ConfigError("config: model expects x_dim=" + std::to_string(m.x_dim) + ", u_dim=" + std::to_string(m.u_dim) +
                      ", vertex_attr_dim=" + std::to_string(m.vertex_attr_dim) + " but the dataset has " +
                      std::to_string(dx) + ", " + std::to_string(du) + ", " + std::to_string(dv));
}

}  // namespace rssm
