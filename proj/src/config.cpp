#include "smlp/config.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include <json.hpp>

#include "smlp/binary_io.hpp"

namespace smlp {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& obj, const char* key, std::string_view where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, std::string_view where) {
  if (obj.contains(key)) out = get<T>(obj, key, where);
}

std::size_t read_size(const json& obj, const char* key, std::string_view where) {
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

void read(const json& obj, const char* key, std::size_t& out, std::string_view where) {
  if (obj.contains(key)) out = read_size(obj, key, where);
}

}  // namespace

void RunConfig::validate() const {
  if (clusters < 1) throw ConfigError("clusters: must be at least 1");
  if (!(tau_r >= 0.0) || !std::isfinite(tau_r)) throw ConfigError("tau_r: must be finite and >= 0");
  if (!(tau_a_multiplier >= 0.0) || !std::isfinite(tau_a_multiplier)) {
    throw ConfigError("tau_a_mult: must be finite and >= 0");
  }
  if (tau_a_absolute && (!(*tau_a_absolute >= 0.0) || !std::isfinite(*tau_a_absolute))) {
    throw ConfigError("tau_a: must be finite and >= 0");
  }
  try {
    policy.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("policy: ") + e.what());
  }
  if (som_epochs < 1) throw ConfigError("som.epochs: must be at least 1");
  if (!(blend.exponent > 0.0) || !std::isfinite(blend.exponent)) {
    throw ConfigError("blend.exponent: must be positive");
  }
  if (parallelism < 1) throw ConfigError("parallelism: must be at least 1");
  for (auto l : sweep.layers) {
    if (l < 1 || l > 16) throw ConfigError("bench.layers: entries must be in [1, 16]");
  }
  for (auto c : sweep.clusters) {
    if (c < 1) throw ConfigError("bench.clusters: entries must be positive");
  }
}

RunConfig parse_config_json(std::string_view text, RunConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"table", "synthetic", "model", "out", "clusters", "groups", "layers", "tolerance",
              "policy", "som", "blend", "parallelism", "seed", "queries", "force", "bench"});
  if (j.contains("table")) cfg.table_path = get<std::string>(j, "table", "config");
  if (j.contains("model")) cfg.model_path = get<std::string>(j, "model", "config");
  if (j.contains("out")) cfg.out_path = get<std::string>(j, "out", "config");
  if (j.contains("synthetic")) {
    const auto& s = j["synthetic"];
    check_keys(s, "synthetic", {"family", "axes", "scalars", "seed"});
    read(s, "family", cfg.synthetic.family, "synthetic");
    read(s, "axes", cfg.synthetic.axes, "synthetic");
    read(s, "scalars", cfg.synthetic.scalars, "synthetic");
    read(s, "seed", cfg.synthetic.seed, "synthetic");
  }
  read(j, "clusters", cfg.clusters, "config");
  if (j.contains("groups")) cfg.groups = read_size(j, "groups", "config");
  read(j, "layers", cfg.policy.hidden_layers, "config");
  if (j.contains("tolerance")) {
    const auto& t = j["tolerance"];
    check_keys(t, "tolerance", {"tau_r", "tau_a_mult", "tau_a"});
    read(t, "tau_r", cfg.tau_r, "tolerance");
    read(t, "tau_a_mult", cfg.tau_a_multiplier, "tolerance");
    if (t.contains("tau_a")) cfg.tau_a_absolute = get<double>(t, "tau_a", "tolerance");
  }
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    check_keys(p, "policy",
               {"initial_width", "width_increment", "max_width", "layer_ratios", "activation",
                "max_iterations", "learning_rate", "batch_size", "plateau_patience",
                "checkpoint_fraction", "checkpoint_threshold", "train_fraction"});
    auto& pol = cfg.policy;
    read(p, "initial_width", pol.initial_width, "policy");
    read(p, "width_increment", pol.width_increment, "policy");
    read(p, "max_width", pol.max_width, "policy");
    read(p, "layer_ratios", pol.layer_ratios, "policy");
    if (p.contains("activation")) pol.activation = parse_activation(get<std::string>(p, "activation", "policy"));
    read(p, "max_iterations", pol.sgd.max_iterations, "policy");
    read(p, "learning_rate", pol.sgd.learning_rate, "policy");
    read(p, "batch_size", pol.sgd.batch_size, "policy");
    read(p, "plateau_patience", pol.sgd.plateau_patience, "policy");
    read(p, "checkpoint_fraction", pol.checkpoint_fraction, "policy");
    read(p, "checkpoint_threshold", pol.checkpoint_threshold, "policy");
    read(p, "train_fraction", pol.train_fraction, "policy");
  }
  if (j.contains("som")) {
    check_keys(j["som"], "som", {"epochs"});
    read(j["som"], "epochs", cfg.som_epochs, "som");
  }
  if (j.contains("blend")) {
    const auto& b = j["blend"];
    check_keys(b, "blend", {"mode", "exponent"});
    if (b.contains("mode")) cfg.blend.mode = parse_blend_mode(get<std::string>(b, "mode", "blend"));
    read(b, "exponent", cfg.blend.exponent, "blend");
  }
  read(j, "parallelism", cfg.parallelism, "config");
  read(j, "seed", cfg.seed, "config");
  read(j, "queries", cfg.queries, "config");
  read(j, "force", cfg.force, "config");
  if (j.contains("bench")) {
    const auto& b = j["bench"];
    check_keys(b, "bench", {"layers", "clusters", "grouping"});
    read(b, "layers", cfg.sweep.layers, "bench");
    read(b, "clusters", cfg.sweep.clusters, "bench");
    read(b, "grouping", cfg.sweep.grouping, "bench");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                           std::move(base));
}

std::size_t default_group_count(std::size_t num_scalars) {
  const double g = std::round(static_cast<double>(num_scalars) * 9.0 / 24.0);
  return std::clamp<std::size_t>(static_cast<std::size_t>(g), 1, num_scalars);
}

std::size_t effective_parallelism(std::size_t requested) {
  std::size_t p = std::max<std::size_t>(1, requested);
  if (const char* env = std::getenv("SMLP_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) p = std::min(p, static_cast<std::size_t>(cap));
  }
  return p;
}

TrainSetup make_train_setup(const RunConfig& cfg, const GridTable& table) {
  cfg.validate();
  TrainSetup s;
  s.clusters = cfg.clusters;
  s.som.epochs = cfg.som_epochs;
  s.tau_r = cfg.tau_r;
  s.tau_a_multiplier = cfg.tau_a_multiplier;
  s.tau_a_absolute = cfg.tau_a_absolute;
  s.policy = cfg.policy;
  s.blend = cfg.blend;
  s.parallelism = effective_parallelism(cfg.parallelism);
  s.seed = cfg.seed;
  const std::size_t ns = table.num_scalars();
  const std::size_t g = cfg.groups ? *cfg.groups : default_group_count(ns);
  if (g > ns) {
    throw ConfigError("groups: " + std::to_string(g) + " exceeds the scalar count " + std::to_string(ns));
  }
  if (g == 0) {
    s.grouping = ScalarGrouping::singletons(ns);
  } else {
    GroupingParams gp;
    gp.som.seed = derive_seed(cfg.seed, 0x67726f7570ULL);
    s.grouping = group_scalars(table, g, gp);
  }
  return s;
}

}  // namespace smlp
