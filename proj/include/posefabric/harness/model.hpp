#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "posefabric/fabric/fabric.hpp"
#include "posefabric/harness/config.hpp"
#include "posefabric/parts/heatmap.hpp"
#include "posefabric/parts/schema.hpp"

namespace posefabric::harness {

/// Shared backbone feeding one subnetwork per keypoint group. Each
/// subnetwork owns its alpha/beta; only the backbone weights are shared.
struct PoseModel {
  parts::KeypointSchema schema;
  parts::PartGrouping grouping;
  int d = 8;
  fabric::Fabric backbone;
  std::vector<fabric::Fabric> heads;

  struct Output {
    std::vector<Var> representations;  // per part, (N, J_p * d, h, w)
    std::vector<Var> norms;            // per part, (N, J_p, h, w)
    Var scores;                        // (N, K, h, w)
  };

  Output forward(const Var& images) const;

  fabric::ParameterList parameters() const;
  std::vector<Var> weight_vars() const;
  std::vector<Var> arch_vars() const;
  std::vector<std::shared_ptr<BatchNormState>> norm_states() const;
  void set_training(bool training) const;

  /// Eval-mode score maps without recording.
  Tensor predict_maps(const Tensor& images) const;
  /// Decoded keypoints in image coordinates, flip-averaged when asked.
  std::vector<std::vector<parts::Keypoint>> predict(const Tensor& images, bool flip_test) const;
};

PoseModel build_model(const RunConfig& config, std::uint64_t seed);

/// {"<fabric>": {"alpha": [...], "beta": {"cell(1/4,3)": [...], ...}}, ...}
std::string arch_to_json(const PoseModel& model);
void load_arch_json(const PoseModel& model, const std::string& text);

/// Parameter values and batch-norm running statistics.
std::string weights_to_json(const PoseModel& model);
void load_weights_json(const PoseModel& model, const std::string& text);

}  // namespace posefabric::harness
