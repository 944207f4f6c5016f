#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "posefabric/harness/config.hpp"
#include "posefabric/harness/model.hpp"
#include "posefabric/harness/pck.hpp"

namespace posefabric::harness {

/// A run stopped on a non-finite loss. The last completed epoch's checkpoint
/// is left in place.
class RunAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<real> kPckRadii{0.05, 0.1, 0.2};
inline constexpr const char* kMetricsHeader = "epoch,split,loss,pck@0.05,pck@0.1,pck@0.2,lr_w,lr_arch";

struct RunOptions {
  bool resume = false;
  // Stop after this epoch (0-based) as if interrupted; -1 runs to the end.
  int stop_after_epoch = -1;
  std::ostream* log = nullptr;
  // Arch JSON to load and freeze before training (retraining a found cell).
  std::string fixed_arch;
};

struct RunResult {
  std::string out_dir;
  int epochs_completed = 0;
  real final_train_loss = 0;
  PckTable final_pck;
  double seconds = 0;
};

/// Builds the model, trains it with the configured strategy and writes
/// config.json, metrics.csv, checkpoint.bin, arch/epoch_XXX.json,
/// arch_final.json, graph_*.dot/json and (when enabled) prune_report.json
/// into config.out_dir.
RunResult run_search(const RunConfig& config, const RunOptions& options = {});

struct SeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<real> pck;  // held-out PCK@0.1 per seed
  real mean = 0;
  real stddev = 0;  // sample standard deviation
};

/// One run per seed under out_dir/seed_<s>, plus out_dir/summary.json.
SeedSummary run_seeds(const RunConfig& config, const std::vector<std::uint64_t>& seeds,
                      const RunOptions& options = {});

/// Held-out evaluation of a model (eval-mode norms, optional flip test).
struct Evaluation {
  real loss = 0;
  PckTable pck;
};
Evaluation evaluate(const PoseModel& model, const std::vector<Sample>& samples, const RunConfig& config);

/// Images, ground-truth maps and masks for a list of samples.
struct Batch {
  Tensor images;
  Tensor maps;
  Tensor mask;
};
Batch make_batch(const std::vector<const Sample*>& samples, const RunConfig& config);

/// Binary checkpoint: epoch, parameters, norm statistics, optimizer moments.
void save_checkpoint(const std::string& path, int epoch, const PoseModel& model,
                     const std::vector<const optim::AdamState*>& optimizers);
/// Returns the stored epoch; fills the optimizer states in order (none when
/// `optimizers` is empty).
int load_checkpoint(const std::string& path, const PoseModel& model, std::vector<optim::AdamState>& optimizers);

}  // namespace posefabric::harness
