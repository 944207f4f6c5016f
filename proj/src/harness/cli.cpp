#include "posefabric/harness/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "posefabric/core/errors.hpp"
#include "posefabric/fabric/export.hpp"
#include "posefabric/harness/gradsuite.hpp"
#include "posefabric/harness/runner.hpp"
#include "posefabric/harness/synthetic.hpp"
#include "posefabric/kernels/kernels.hpp"
#include "posefabric/prune/prune.hpp"

namespace posefabric::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string kernels;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Run config JSON file");
  sub->add_option("--seed", f.seed, "Seed for every random draw of the run");
  sub->add_option("--kernels", f.kernels, "auto, scalar or avx2");
  sub->add_option("overrides", f.overrides, "Config overrides as key=value, e.g. train.epochs=20");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  c = apply_overrides(c, f.overrides);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.kernels.empty()) c.kernels = f.kernels;
  c.validate();
  if (c.kernels == "auto")
    kernels::select_best();
  else
    kernels::select(kernels::parse_backend(c.kernels));
  return c;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// A trained model from a run directory, or a freshly initialised one.
struct LoadedModel {
  RunConfig config;
  PoseModel model;
};

LoadedModel load_model(const std::string& run, const CommonFlags& flags) {
  if (run.empty()) {
    RunConfig c = resolve_config(flags);
    return {c, build_model(c, c.seed)};
  }
  CommonFlags f = flags;
  f.config = (fs::path(run) / "config.json").string();
  RunConfig c = resolve_config(f);
  PoseModel m = build_model(c, c.seed);
  const fs::path ckpt = fs::path(run) / "checkpoint.bin";
  if (fs::exists(ckpt)) {
    std::vector<optim::AdamState> none;
    load_checkpoint(ckpt.string(), m, none);
  } else if (fs::exists(fs::path(run) / "arch_final.json")) {
    load_arch_json(m, slurp(fs::path(run) / "arch_final.json"));
  }
  return {c, std::move(m)};
}

std::vector<const fabric::Fabric*> fabrics_of(const PoseModel& m) {
  std::vector<const fabric::Fabric*> out{&m.backbone};
  for (const auto& h : m.heads) out.push_back(&h);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw UsageError("empty seed list");
  return seeds;
}

json pck_json(const PckTable& t) {
  json mean = json::object(), per = json::object();
  for (std::size_t r = 0; r < t.radii.size(); ++r) {
    char key[32];
    std::snprintf(key, sizeof key, "pck@%g", t.radii[r]);
    mean[key] = t.mean[r];
    per[key] = t.per_keypoint[r];
  }
  return {{"mean", mean}, {"per_keypoint", per}, {"visible_count", t.visible_count}};
}

void write_pgm(const fs::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  std::ostringstream os;
  os << "P5\n" << s.w << " " << s.h << "\n255\n";
  for (real v : image.data()) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255))));
  spit(path, os.str());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cell-based fabric pose search on synthetic stick figures", "posefabric"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string seeds, run, format = "dot", spec = "tiny", arch, fabric_name;
  real tol = 1e-8, bound = 1e-6;
  bool check = false, resume = false;
  int stop_after = -1, count = 16;

  auto* search = app.add_subcommand("search", "Search architecture and weights jointly");
  add_common(search, flags);
  search->add_option("--out", flags.out, "Output directory");
  search->add_option("--seeds", seeds, "Comma-separated seeds; one run per seed plus summary.json");
  search->add_flag("--resume", resume, "Continue from checkpoint.bin in the output directory");
  search->add_option("--stop-after", stop_after, "Stop after this epoch as if interrupted");

  auto* train = app.add_subcommand("train", "Train weights for a fixed architecture");
  add_common(train, flags);
  train->add_option("--out", flags.out, "Output directory");
  train->add_option("--arch", arch, "Architecture JSON (arch_final.json of a search)")->required();
  train->add_flag("--resume", resume, "Continue from checkpoint.bin in the output directory");

  auto* eval = app.add_subcommand("eval", "Held-out loss and PCK of a run");
  add_common(eval, flags);
  eval->add_option("--run", run, "Run directory")->required();

  auto* prune_cmd = app.add_subcommand("prune", "Remove negligible operations, inputs and cells");
  add_common(prune_cmd, flags);
  prune_cmd->add_option("--run", run, "Run directory (default: freshly initialised model)");
  prune_cmd->add_option("--tol", tol, "Contribution tolerance");
  prune_cmd->add_flag("--check", check, "Verify forward equivalence on 10 random probes");
  prune_cmd->add_option("--bound", bound, "Equivalence bound for --check");
  prune_cmd->add_option("--out", flags.out, "Write the report here instead of stdout");

  auto* export_cmd = app.add_subcommand("export", "Write cell graphs");
  add_common(export_cmd, flags);
  export_cmd->add_option("--run", run, "Run directory (default: freshly initialised model)");
  export_cmd->add_option("--format", format, "dot or json");
  export_cmd->add_option("--fabric", fabric_name, "Only this fabric (backbone, cnf0, ...)");
  export_cmd->add_option("--out", flags.out, "Directory for graph_<fabric>.<format>; stdout when absent");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and a tiny fabric");
  grad->add_option("--spec", spec, "Which suite to run (tiny)");
  grad->add_option("--tol", tol, "Max relative error")->default_val(1e-4);
  grad->add_option("--seed", flags.seed, "Seed for the random inputs");
  grad->add_option("--kernels", flags.kernels, "auto, scalar or avx2");

  auto* gen = app.add_subcommand("gen-data", "Render synthetic samples as PGM images plus labels.json");
  add_common(gen, flags);
  gen->add_option("--count", count, "Number of samples");
  gen->add_option("--out", flags.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (search->parsed() || train->parsed()) {
      RunConfig c = resolve_config(flags);
      RunOptions opts;
      opts.resume = resume;
      opts.stop_after_epoch = stop_after;
      opts.log = &out;
      opts.fixed_arch = arch;
      if (!seeds.empty()) {
        const SeedSummary s = run_seeds(c, parse_seeds(seeds), opts);
        char line[128];
        std::snprintf(line, sizeof line, "PCK@0.1 %.1f +- %.1f over %zu seeds\n", 100 * s.mean, 100 * s.stddev,
                      s.seeds.size());
        out << line;
      } else {
        const RunResult r = run_search(c, opts);
        out << "wrote " << r.out_dir << " (" << r.epochs_completed << " epochs, PCK@0.1 "
            << r.final_pck.at(0.1) << ")\n";
      }
    } else if (eval->parsed()) {
      const LoadedModel lm = load_model(run, flags);
      const auto heldout =
          generate_dataset(lm.config.data.synth, lm.config.data.val_count, lm.config.data.train_count);
      const Evaluation ev = evaluate(lm.model, heldout, lm.config);
      out << json{{"loss", ev.loss}, {"pck", pck_json(ev.pck)}}.dump(2) << "\n";
    } else if (prune_cmd->parsed()) {
      const LoadedModel lm = load_model(run, flags);
      const int s = lm.config.data.synth.image_size;
      json reports = json::array();
      for (const fabric::Fabric* f : fabrics_of(lm.model)) {
        auto result = prune::prune(*f, tol, s, s);
        if (check) {
          const prune::Equivalence eq =
              prune::equivalence_check(*f, result.pruned, 10, bound, prune::ProbeSpec{s, s, 1, 2}, lm.config.seed);
          result.report.max_deviation = eq.max_deviation;
        }
        reports.push_back(json::parse(result.report.to_json()));
      }
      const std::string text = json{{"fabrics", reports}}.dump(2) + "\n";
      if (flags.out.empty())
        out << text;
      else
        spit(flags.out, text);
    } else if (export_cmd->parsed()) {
      const fabric::GraphFormat fmt = fabric::parse_graph_format(format);
      const LoadedModel lm = load_model(run, CommonFlags{flags.config, flags.seed, {}, flags.kernels, flags.overrides});
      bool found = false;
      for (const fabric::Fabric* f : fabrics_of(lm.model)) {
        if (!fabric_name.empty() && f->name != fabric_name) continue;
        found = true;
        const std::string text = fabric::export_graph(*f, fmt);
        if (flags.out.empty())
          out << text;
        else
          spit(fs::path(flags.out) / ("graph_" + f->name + (fmt == fabric::GraphFormat::dot ? ".dot" : ".json")), text);
      }
      if (!found) throw UsageError("no fabric named '" + fabric_name + "'");
    } else if (grad->parsed()) {
      if (spec != "tiny") throw UsageError("unknown gradcheck spec '" + spec + "' (expected tiny)");
      if (!flags.kernels.empty() && flags.kernels != "auto") kernels::select(kernels::parse_backend(flags.kernels));
      const std::uint64_t seed = flags.seed.value_or(7);
      GradCheckReport report = op_gradcheck_suite(seed);
      for (auto& e : tiny_fabric_gradcheck(seed).entries) report.entries.push_back(e);
      out << report.str() << "max rel err " << report.max_rel_error() << " (tolerance " << tol << ")\n";
      if (!report.passed(tol)) {
        err << "gradient check failed\n";
        return kExitNumerical;
      }
    } else if (gen->parsed()) {
      if (count < 1) throw UsageError("--count must be >= 1");
      CommonFlags f = flags;
      f.out.clear();
      RunConfig c = resolve_config(f);
      if (flags.seed) c.data.synth.seed = *flags.seed;
      const auto samples = generate_dataset(c.data.synth, count, 0);
      json labels = json::array();
      for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.pgm", i);
        write_pgm(fs::path(flags.out) / name, samples[i].image);
        json kps = json::array();
        for (std::size_t k = 0; k < samples[i].keypoints.size(); ++k)
          kps.push_back({samples[i].keypoints[k].x, samples[i].keypoints[k].y, samples[i].visible[k] ? 1 : 0});
        labels.push_back({{"image", name}, {"keypoints", kps}});
      }
      spit(fs::path(flags.out) / "labels.json", labels.dump(1) + "\n");
      out << "wrote " << samples.size() << " samples to " << flags.out << "\n";
    }
  } catch (const RunAborted& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitAborted;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const prune::PruneRefused& e) {
    err << "prune refused: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace posefabric::harness
