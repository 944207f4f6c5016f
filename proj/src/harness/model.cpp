#include "posefabric/harness/model.hpp"

#include <json.hpp>

#include "posefabric/core/errors.hpp"
#include "posefabric/harness/augment.hpp"
#include "posefabric/parts/squash.hpp"

namespace posefabric::harness {

using nlohmann::json;

PoseModel::Output PoseModel::forward(const Var& images) const {
  Output out;
  const std::vector<Var> in{images};
  const auto pyramid = backbone.forward(in);
  for (const fabric::Fabric& head : heads) {
    out.representations.push_back(head.forward(pyramid).front());
    out.norms.push_back(parts::squash_field(out.representations.back(), d));
  }
  out.scores = parts::aggregate_scores(out.norms, grouping);
  return out;
}

fabric::ParameterList PoseModel::parameters() const {
  fabric::ParameterList out = backbone.parameters();
  for (const auto& h : heads) {
    auto more = h.parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::vector<Var> PoseModel::weight_vars() const {
  std::vector<Var> out;
  for (const auto& p : parameters())
    if (p.kind == fabric::ParamKind::weight) out.push_back(p.var);
  return out;
}

std::vector<Var> PoseModel::arch_vars() const {
  std::vector<Var> out;
  for (const auto& p : parameters())
    if (p.kind == fabric::ParamKind::arch) out.push_back(p.var);
  return out;
}

std::vector<std::shared_ptr<BatchNormState>> PoseModel::norm_states() const {
  auto out = backbone.norm_states();
  for (const auto& h : heads) {
    auto more = h.norm_states();
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

void PoseModel::set_training(bool training) const {
  for (const auto& s : norm_states()) s->training = training;
}

Tensor PoseModel::predict_maps(const Tensor& images) const {
  NoGradGuard no_grad;
  const auto states = norm_states();
  std::vector<bool> saved;
  for (const auto& s : states) {
    saved.push_back(s->training);
    s->training = false;
  }
  Tensor maps = forward(Var::constant(images)).scores.value();
  for (std::size_t i = 0; i < states.size(); ++i) states[i]->training = saved[i];
  return maps;
}

std::vector<std::vector<parts::Keypoint>> PoseModel::predict(const Tensor& images, bool flip_test) const {
  const Tensor maps = predict_maps(images);
  Tensor flipped;
  if (flip_test) flipped = predict_maps(flip_images(images));
  const auto perm = schema.flip_permutation();
  std::vector<std::vector<parts::Keypoint>> out;
  for (int n = 0; n < images.shape().n; ++n)
    out.push_back(parts::to_image_space(flip_test ? parts::decode_with_flip(maps, flipped, perm, n)
                                                  : parts::decode_keypoints(maps, n)));
  return out;
}

PoseModel build_model(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  PoseModel m;
  m.schema = parts::schema_by_name(config.parts.schema);
  m.grouping = parts::make_grouping(config.parts.grouping, m.schema);
  m.d = config.parts.d;

  Rng weights = Rng::derive(seed, 1);
  m.backbone = fabric::build_backbone(config.model.backbone.spec(), config.model.backbone.reserved, 1, weights);
  for (int p = 0; p < m.grouping.size(); ++p) {
    const int joints = static_cast<int>(m.grouping.groups[p].keypoints.size());
    m.heads.push_back(fabric::build_subnetwork(config.model.head.spec(), config.model.head.reserved, joints * m.d,
                                               weights, "cnf" + std::to_string(p)));
  }
  Rng arch = Rng::derive(seed, 2);
  fabric::init_arch_normal(m.backbone, config.model.arch_init_std, arch);
  for (const auto& h : m.heads) fabric::init_arch_normal(h, config.model.arch_init_std, arch);
  return m;
}

namespace {

std::vector<const fabric::Fabric*> fabrics(const PoseModel& m) {
  std::vector<const fabric::Fabric*> out{&m.backbone};
  for (const auto& h : m.heads) out.push_back(&h);
  return out;
}

void copy_into(Tensor& dst, const json& values, const std::string& what) {
  const auto v = values.get<std::vector<real>>();
  if (v.size() != dst.size())
    throw ConfigError(what + ": expected " + std::to_string(dst.size()) + " values, got " + std::to_string(v.size()));
  std::copy(v.begin(), v.end(), dst.data().begin());
}

std::vector<real> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

std::string arch_to_json(const PoseModel& model) {
  json doc = json::object();
  for (const fabric::Fabric* f : fabrics(model)) {
    const auto arch = f->arch();
    json beta = json::object();
    for (const auto& [coord, b] : arch.beta) beta[fabric::CellCoord(coord).str()] = values_of(b.value());
    doc[f->name] = {{"alpha", values_of(arch.alpha.value())}, {"beta", beta}};
  }
  return doc.dump(2) + "\n";
}

void load_arch_json(const PoseModel& model, const std::string& text) {
  try {
    const json doc = json::parse(text);
    for (const fabric::Fabric* f : fabrics(model)) {
      const json& jf = doc.at(f->name);
      auto arch = f->arch();
      copy_into(arch.alpha.mutable_value(), jf.at("alpha"), f->name + "/alpha");
      for (auto& [coord, b] : arch.beta)
        copy_into(b.mutable_value(), jf.at("beta").at(coord.str()), f->name + "/beta" + coord.str());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("arch json: ") + e.what());
  }
}

std::string weights_to_json(const PoseModel& model) {
  json params = json::object();
  for (const auto& p : model.parameters()) params[p.name] = values_of(p.var.value());
  json norms = json::array();
  for (const auto& s : model.norm_states())
    norms.push_back({{"mean", values_of(s->running_mean)}, {"var", values_of(s->running_var)}});
  return json{{"params", params}, {"norms", norms}}.dump() + "\n";
}

void load_weights_json(const PoseModel& model, const std::string& text) {
  try {
    const json doc = json::parse(text);
    for (auto p : model.parameters()) copy_into(p.var.mutable_value(), doc.at("params").at(p.name), p.name);
    const auto states = model.norm_states();
    const json& norms = doc.at("norms");
    if (norms.size() != states.size()) throw ConfigError("checkpoint norm count mismatch");
    for (std::size_t i = 0; i < states.size(); ++i) {
      copy_into(states[i]->running_mean, norms[i].at("mean"), "running mean");
      copy_into(states[i]->running_var, norms[i].at("var"), "running var");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("weights json: ") + e.what());
  }
}

}  // namespace posefabric::harness
