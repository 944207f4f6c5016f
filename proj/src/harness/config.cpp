#include "posefabric/harness/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "posefabric/core/errors.hpp"
#include "posefabric/kernels/kernels.hpp"
#include "posefabric/parts/schema.hpp"

namespace posefabric::harness {

using nlohmann::json;

fabric::FabricSpec FabricConfig::spec() const {
  fabric::FabricSpec s;
  s.layers = layers;
  s.num_scales = scales;
  s.hidden = hidden;
  s.channel_factor = channel_factor;
  s.ops.clear();
  for (const std::string& name : ops) s.ops.push_back(fabric::parse_op(name));
  return s;
}

RunConfig::RunConfig() {
  for (auto k : fabric::all_ops()) model.backbone.ops.emplace_back(fabric::op_name(k));
  model.head = FabricConfig{6, 4, 1, 4, {}, 3};
  for (auto k : fabric::head_ops()) model.head.ops.emplace_back(fabric::op_name(k));
}

void RunConfig::validate() const {
  data.synth.validate();
  if (data.train_count < 2 || data.val_count < 1) throw ConfigError("need >= 2 training and >= 1 validation samples");
  for (const FabricConfig* f : {&model.backbone, &model.head}) {
    try {
      f->spec().validate();
    } catch (const UsageError& e) {
      throw ConfigError(e.what());
    }
    if (f->reserved < 0 || f->reserved > f->layers) throw ConfigError("reserved layers must lie in [0, layers]");
  }
  if (model.head.reserved < 1) throw ConfigError("subnetworks need at least one layer");
  if (model.backbone.channel_factor != model.head.channel_factor || model.backbone.scales != model.head.scales)
    throw ConfigError("backbone and subnetworks must agree on channel factor and scales");
  if (model.backbone.reserved < model.backbone.scales)
    throw ConfigError("backbone must reserve at least as many layers as scales to emit a full pyramid");
  if (data.synth.image_size % (4 << (model.backbone.scales - 1)) != 0)
    throw ConfigError("image size must be divisible by the smallest scale");
  if (!(model.arch_init_std >= 0)) throw ConfigError("arch_init_std must be >= 0");
  if (parts.d < 1) throw ConfigError("vector dimension d must be >= 1");
  if (!(parts.sigma > 0)) throw ConfigError("sigma must be > 0");
  try {
    parts::make_grouping(parts.grouping, parts::schema_by_name(parts.schema));
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  if (parts.schema != "synthetic6") throw ConfigError("the synthetic harness only renders the synthetic6 schema");
  strategy();
  if (!(search.val_fraction > 0 && search.val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (!(search.arch_lr > 0) || !(search.arch_weight_decay >= 0)) throw ConfigError("bad architecture optimizer settings");
  schedule.validate();
  if (train.epochs < 1 || train.batch < 1) throw ConfigError("epochs and batch must be >= 1");
  if (!(prune.tol >= 0)) throw ConfigError("prune tolerance must be >= 0");
  if (kernels != "auto") kernels::parse_backend(kernels);
}

namespace {

json fabric_json(const FabricConfig& f) {
  return {{"layers", f.layers}, {"scales", f.scales},     {"hidden", f.hidden},
          {"channel_factor", f.channel_factor}, {"ops", f.ops}, {"reserved", f.reserved}};
}

void read_fabric(const json& j, FabricConfig& f) {
  f.layers = j.at("layers").get<int>();
  f.scales = j.at("scales").get<int>();
  f.hidden = j.at("hidden").get<int>();
  f.channel_factor = j.at("channel_factor").get<int>();
  f.ops = j.at("ops").get<std::vector<std::string>>();
  f.reserved = j.at("reserved").get<int>();
}

json to_tree(const RunConfig& c) {
  const auto& s = c.data.synth;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"kernels", c.kernels},
      {"data",
       {{"seed", s.seed},
        {"image_size", s.image_size},
        {"thickness_min", s.thickness_min},
        {"thickness_max", s.thickness_max},
        {"intensity_min", s.intensity_min},
        {"intensity_max", s.intensity_max},
        {"noise", s.noise},
        {"occlusion", s.occlusion},
        {"train_count", c.data.train_count},
        {"val_count", c.data.val_count},
        {"augment", c.data.augment}}},
      {"model",
       {{"backbone", fabric_json(c.model.backbone)},
        {"head", fabric_json(c.model.head)},
        {"arch_init_std", c.model.arch_init_std}}},
      {"parts", {{"schema", c.parts.schema}, {"grouping", c.parts.grouping}, {"d", c.parts.d}, {"sigma", c.parts.sigma}}},
      {"search",
       {{"strategy", c.search.strategy},
        {"val_fraction", c.search.val_fraction},
        {"arch_lr", c.search.arch_lr},
        {"arch_weight_decay", c.search.arch_weight_decay}}},
      {"schedule",
       {{"lr", c.schedule.base_lr},
        {"arch_lr", c.schedule.arch_base_lr},
        {"milestones", c.schedule.milestones},
        {"factor", c.schedule.factor},
        {"arch_decay", c.schedule.arch_decay}}},
      {"train", {{"epochs", c.train.epochs}, {"batch", c.train.batch}, {"flip_test", c.train.flip_test}}},
      {"prune", {{"enabled", c.prune.enabled}, {"tol", c.prune.tol}}},
  };
}

RunConfig from_tree(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.kernels = j.at("kernels").get<std::string>();
  const json& d = j.at("data");
  auto& s = c.data.synth;
  s.image_size = d.at("image_size").get<int>();
  s.thickness_min = d.at("thickness_min").get<real>();
  s.thickness_max = d.at("thickness_max").get<real>();
  s.intensity_min = d.at("intensity_min").get<real>();
  s.intensity_max = d.at("intensity_max").get<real>();
  s.noise = d.at("noise").get<real>();
  s.occlusion = d.at("occlusion").get<real>();
  s.seed = d.at("seed").get<std::uint64_t>();
  c.data.train_count = d.at("train_count").get<int>();
  c.data.val_count = d.at("val_count").get<int>();
  c.data.augment = d.at("augment").get<bool>();
  read_fabric(j.at("model").at("backbone"), c.model.backbone);
  read_fabric(j.at("model").at("head"), c.model.head);
  c.model.arch_init_std = j.at("model").at("arch_init_std").get<real>();
  const json& p = j.at("parts");
  c.parts.schema = p.at("schema").get<std::string>();
  c.parts.grouping = p.at("grouping").get<std::string>();
  c.parts.d = p.at("d").get<int>();
  c.parts.sigma = p.at("sigma").get<real>();
  const json& se = j.at("search");
  c.search.strategy = se.at("strategy").get<std::string>();
  c.search.val_fraction = se.at("val_fraction").get<real>();
  c.search.arch_lr = se.at("arch_lr").get<real>();
  c.search.arch_weight_decay = se.at("arch_weight_decay").get<real>();
  const json& sc = j.at("schedule");
  c.schedule.base_lr = sc.at("lr").get<real>();
  c.schedule.arch_base_lr = sc.at("arch_lr").get<real>();
  c.schedule.milestones = sc.at("milestones").get<std::vector<int>>();
  c.schedule.factor = sc.at("factor").get<real>();
  c.schedule.arch_decay = sc.at("arch_decay").get<bool>();
  const json& t = j.at("train");
  c.train.epochs = t.at("epochs").get<int>();
  c.train.batch = t.at("batch").get<int>();
  c.train.flip_test = t.at("flip_test").get<bool>();
  c.prune.enabled = j.at("prune").at("enabled").get<bool>();
  c.prune.tol = j.at("prune").at("tol").get<real>();
  return c;
}

// Overlays `patch` onto `base`, refusing keys `base` does not have.
void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object())
      merge(slot, it.value(), key);
    else
      slot = it.value();
  }
}

RunConfig checked(const json& tree) {
  RunConfig c;
  try {
    c = from_tree(tree);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return to_tree(config).dump(2) + "\n"; }

RunConfig config_from_json(std::string_view text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json tree = to_tree(RunConfig{});
  merge(tree, patch, "");
  return checked(tree);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  json tree = to_tree(config);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &tree;
    std::string path;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> keys;
    while (std::getline(parts, part, '.')) keys.push_back(part);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      path += (i ? "." : "") + keys[i];
      if (!node->is_object() || !node->contains(keys[i])) throw ConfigError("unknown config key '" + path + "'");
      node = &(*node)[keys[i]];
    }
    if (node->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
    *node = node->is_string() ? json(raw) : value;
  }
  return checked(tree);
}

}  // namespace posefabric::harness
