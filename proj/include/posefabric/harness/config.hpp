#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "posefabric/fabric/spec.hpp"
#include "posefabric/harness/synthetic.hpp"
#include "posefabric/optim/schedule.hpp"
#include "posefabric/optim/search.hpp"

namespace posefabric::harness {

struct FabricConfig {
  int layers = 4;
  int scales = 4;
  int hidden = 1;
  int channel_factor = 4;
  std::vector<std::string> ops;
  int reserved = 4;

  fabric::FabricSpec spec() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string kernels = "auto";

  struct Data {
    SyntheticPoseConfig synth;
    int train_count = 512;
    int val_count = 128;
    bool augment = true;
  } data;

  struct Model {
    FabricConfig backbone;
    FabricConfig head;
    real arch_init_std = 1e-3;
  } model;

  struct Parts {
    std::string schema = "synthetic6";
    std::string grouping = "P3";
    int d = 8;
    real sigma = 1.5;
  } parts;

  struct Search {
    std::string strategy = "synchronous";
    real val_fraction = 0.5;
    real arch_lr = 3e-3;
    real arch_weight_decay = 1e-3;
  } search;

  optim::LrSchedule schedule;

  struct Train {
    int epochs = 60;
    int batch = 16;
    bool flip_test = true;
  } train;

  struct Prune {
    bool enabled = true;
    real tol = 1e-8;
  } prune;

  RunConfig();
  void validate() const;
  optim::Strategy strategy() const { return optim::parse_strategy(search.strategy); }
};

std::string config_to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
RunConfig config_from_json(std::string_view text);
RunConfig load_config(const std::string& path);

/// Applies "section.key=value" overrides. Values are read as JSON when they
/// parse (numbers, booleans, arrays), as plain strings otherwise.
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace posefabric::harness
