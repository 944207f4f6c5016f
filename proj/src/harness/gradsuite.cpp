#include "posefabric/harness/gradsuite.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/fabric/fabric.hpp"
#include "posefabric/parts/schema.hpp"
#include "posefabric/parts/squash.hpp"

namespace posefabric::harness {

namespace {

// Inputs uniform in [-1, 1].
Var random_leaf(Rng& rng, Shape shape) {
  Tensor t(shape);
  rng.fill_uniform(t, -1, 1);
  return Var::leaf(std::move(t));
}

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(shape);
  rng.fill_normal(t, 1.0);
  return t;
}

// Folds per-input entries into one entry named `name`.
GradCheckEntry merged(const std::string& name, const GradCheckReport& r) {
  GradCheckEntry e{name};
  for (const auto& x : r.entries) {
    e.probed += x.probed;
    e.skipped_nonsmooth += x.skipped_nonsmooth;
    e.max_rel_error = std::max(e.max_rel_error, x.max_rel_error);
    e.max_abs_error = std::max(e.max_abs_error, x.max_abs_error);
  }
  return e;
}

// Reduces an op's output to a scalar that depends on every element.
std::function<Var()> against(std::function<Var()> op, Tensor target) {
  return [op = std::move(op), target = std::move(target)] { return mse(op(), Var::constant(target)); };
}

}  // namespace

GradCheckReport op_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(seed);
  GradCheckReport report;
  const auto run = [&](const std::string& name, const std::function<Var()>& op, const Shape& out_shape,
                       std::vector<NamedInput> inputs) {
    report.entries.push_back(merged(name, grad_check(against(op, random_tensor(rng, out_shape)), inputs, options)));
  };

  const Shape img{2, 3, 5, 5};
  {
    Var x = random_leaf(rng, img), k = random_leaf(rng, {4, 3, 3, 3}), b = random_leaf(rng, {1, 4, 1, 1});
    run("conv2d", [=] { return conv2d(x, k, b, {}); }, {2, 4, 5, 5}, {{"x", x}, {"k", k}, {"b", b}});
  }
  {
    Var x = random_leaf(rng, img), k = random_leaf(rng, {2, 3, 3, 3});
    run("conv2d_stride2", [=] { return conv2d(x, k, {}, {2, 1, 1}); }, {2, 2, 3, 3}, {{"x", x}, {"k", k}});
  }
  {
    Var x = random_leaf(rng, img), k = random_leaf(rng, {3, 3, 3, 3});
    run("conv2d_dilated", [=] { return conv2d(x, k, {}, {1, 2, 1}); }, img, {{"x", x}, {"k", k}});
  }
  {
    Var x = random_leaf(rng, img), k = random_leaf(rng, {3, 1, 3, 3});
    run("conv2d_depthwise", [=] { return conv2d(x, k, {}, {1, 1, 3}); }, img, {{"x", x}, {"k", k}});
  }
  {
    Var x = random_leaf(rng, img), k = random_leaf(rng, {5, 3, 1, 1});
    run("conv2d_1x1", [=] { return conv2d(x, k, {}, {}); }, {2, 5, 5, 5}, {{"x", x}, {"k", k}});
  }
  {
    Var x = random_leaf(rng, img);
    run("relu", [=] { return relu(x); }, img, {{"x", x}});
  }
  {
    Var a = random_leaf(rng, img), b = random_leaf(rng, img);
    run("add", [=] { return add(a, b); }, img, {{"a", a}, {"b", b}});
  }
  {
    Var x = random_leaf(rng, img);
    run("scale", [=] { return scale(x, -1.7); }, img, {{"x", x}});
  }
  {
    Var a = random_leaf(rng, img), b = random_leaf(rng, img), w = random_leaf(rng, {1, 4, 1, 1});
    run("weighted_sum",
        [=] {
          const std::vector<Var> terms{a, Var(), b, a};
          const std::vector<int> index{0, 1, 2, 3};
          return weighted_sum(terms, w, index);
        },
        img, {{"a", a}, {"b", b}, {"w", w}});
  }
  {
    Var a = random_leaf(rng, img), b = random_leaf(rng, {2, 2, 5, 5});
    run("concat_channels",
        [=] {
          const std::vector<Var> parts{a, b};
          return concat_channels(parts);
        },
        {2, 5, 5, 5}, {{"a", a}, {"b", b}});
  }
  {
    // Batch 4 keeps the batch variance away from degenerate.
    const Shape bn{4, 3, 4, 4};
    Var x = random_leaf(rng, bn), g = random_leaf(rng, {1, 3, 1, 1}), s = random_leaf(rng, {1, 3, 1, 1});
    auto state = std::make_shared<BatchNormState>(3);
    run("batch_norm_train", [=] { return batch_norm(x, g, s, *state); }, bn, {{"x", x}, {"gamma", g}, {"shift", s}});
  }
  {
    Var x = random_leaf(rng, img), g = random_leaf(rng, {1, 3, 1, 1}), s = random_leaf(rng, {1, 3, 1, 1});
    auto state = std::make_shared<BatchNormState>(3);
    state->training = false;
    rng.fill_uniform(state->running_mean, -0.5, 0.5);
    rng.fill_uniform(state->running_var, 0.5, 2.0);
    run("batch_norm_eval", [=] { return batch_norm(x, g, s, *state); }, img, {{"x", x}, {"gamma", g}, {"shift", s}});
  }
  {
    Var x = random_leaf(rng, img);
    run("avg_pool3x3", [=] { return pool3x3(x, PoolKind::avg); }, img, {{"x", x}});
  }
  {
    Var x = random_leaf(rng, img);
    run("max_pool3x3", [=] { return pool3x3(x, PoolKind::max); }, img, {{"x", x}});
  }
  {
    Var x = random_leaf(rng, {2, 2, 3, 4});
    run("bilinear_up2x", [=] { return bilinear_up2x(x); }, {2, 2, 6, 8}, {{"x", x}});
  }
  {
    Var x = random_leaf(rng, img);
    run("softmax", [=] { return softmax(x); }, img, {{"x", x}});
  }
  {
    Var x = random_leaf(rng, img);
    run("skip", [=] { return skip_op(x); }, img, {{"x", x}});
  }
  {
    Var a = random_leaf(rng, img), b = random_leaf(rng, img);
    report.entries.push_back(merged("mse", grad_check([=] { return mse(a, b); }, {{"a", a}, {"b", b}}, options)));
  }
  {
    Var x = random_leaf(rng, img);
    report.entries.push_back(merged("sum_squares", grad_check([=] { return sum_squares(x); }, {{"x", x}}, options)));
  }
  {
    Var x = random_leaf(rng, img);
    report.entries.push_back(merged("sum", grad_check([=] { return sum(x); }, {{"x", x}}, options)));
  }
  {
    Var x = random_leaf(rng, {2, 6, 3, 3});
    run("squash_field", [=] { return parts::squash_field(x, 3); }, {2, 2, 3, 3}, {{"x", x}});
  }
  {
    const auto grouping = parts::make_grouping("P3", parts::synthetic6());
    std::vector<NamedInput> inputs;
    std::vector<Var> norms;
    for (int p = 0; p < grouping.size(); ++p) {
      const int c = static_cast<int>(grouping.groups[p].keypoints.size());
      norms.push_back(random_leaf(rng, {2, c, 3, 3}));
      inputs.push_back({"part" + std::to_string(p), norms.back()});
    }
    run("aggregate_scores", [=] { return parts::aggregate_scores(norms, grouping); }, {2, 6, 3, 3}, inputs);
  }
  {
    Var pred = random_leaf(rng, {2, 3, 4, 4});
    const Tensor target = random_tensor(rng, {2, 3, 4, 4});
    Tensor mask(Shape{2, 3, 1, 1}, std::vector<real>{1, 0, 1, 1, 1, 0});
    report.entries.push_back(merged(
        "masked_heatmap_loss",
        grad_check([=] { return parts::masked_heatmap_loss(pred, target, mask); }, {{"pred", pred}}, options)));
  }
  return report;
}

GradCheckReport tiny_fabric_gradcheck(std::uint64_t seed, const GradCheckOptions& options, int layers, int scales) {
  Rng rng(seed);
  fabric::FabricSpec spec;
  spec.layers = layers;
  spec.num_scales = scales;
  spec.hidden = 1;
  spec.channel_factor = 2;
  spec.ops = fabric::all_ops();
  const fabric::Fabric f = fabric::build_backbone(spec, layers, 1, rng, "tiny");
  // Away from the uniform point so the mixtures are asymmetric. Batch 8 keeps
  // the 1x1 batch-norm at scale 1/8 from dominating the stencil error.
  fabric::init_arch_normal(f, 0.5, rng);

  const Tensor image = random_tensor(rng, {8, 1, 8, 8});
  std::vector<Tensor> targets;
  {
    NoGradGuard no_grad;
    const std::vector<Var> in{Var::constant(image)};
    for (const Var& out : f.forward(in)) targets.push_back(random_tensor(rng, out.shape()));
  }
  const auto loss = [&] {
    const std::vector<Var> in{Var::constant(image)};
    const auto outs = f.forward(in);
    Var total = mse(outs[0], Var::constant(targets[0]));
    for (std::size_t i = 1; i < outs.size(); ++i) total = add(total, mse(outs[i], Var::constant(targets[i])));
    return total;
  };

  std::vector<NamedInput> weights, alpha, beta;
  for (const auto& p : f.parameters()) {
    if (p.kind == fabric::ParamKind::weight)
      weights.push_back({p.name, p.var});
    else if (p.var.node() == f.alpha.node())
      alpha.push_back({p.name, p.var});
    else
      beta.push_back({p.name, p.var});
  }
  GradCheckReport report;
  report.entries.push_back(merged("fabric_weights", grad_check(loss, weights, options)));
  report.entries.push_back(merged("fabric_alpha", grad_check(loss, alpha, options)));
  report.entries.push_back(merged("fabric_beta", grad_check(loss, beta, options)));
  return report;
}

}  // namespace posefabric::harness
