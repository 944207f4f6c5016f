#include "posefabric/harness/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "posefabric/core/errors.hpp"
#include "posefabric/fabric/export.hpp"
#include "posefabric/harness/augment.hpp"
#include "posefabric/kernels/kernels.hpp"
#include "posefabric/optim/search.hpp"
#include "posefabric/parts/squash.hpp"
#include "posefabric/prune/prune.hpp"

namespace posefabric::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(real v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string metrics_row(int epoch, const std::string& split, real loss, const std::vector<real>* pck, real lr_w,
                        real lr_arch) {
  std::string row = std::to_string(epoch) + "," + split + "," + fmt(loss);
  for (int i = 0; i < 3; ++i) row += "," + (pck ? fmt((*pck)[i]) : std::string());
  return row + "," + fmt(lr_w) + "," + fmt(lr_arch) + "\n";
}

// Fisher-Yates with the run's own generator, so the order is portable.
void shuffle(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(0, i)]);
}

void apply_kernels(const std::string& name) {
  if (name == "auto")
    kernels::select_best();
  else
    kernels::select(kernels::parse_backend(name));
}

// Binary stream helpers for the checkpoint.
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ConfigError("checkpoint is truncated");
  return v;
}
void put_tensor(std::ostream& out, const Tensor& t) {
  put_u64(out, t.size());
  out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(real)));
}
void get_tensor(std::istream& in, Tensor& t) {
  if (get_u64(in) != t.size()) throw ConfigError("checkpoint tensor size mismatch");
  in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(real)));
  if (!in) throw ConfigError("checkpoint is truncated");
}

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', '0', '0', '1', '\n'};

}  // namespace

Batch make_batch(const std::vector<const Sample*>& samples, const RunConfig& config) {
  const int n = static_cast<int>(samples.size());
  const int s = config.data.synth.image_size;
  const int m = s / parts::kMapStride;
  const int k_count = static_cast<int>(samples.front()->keypoints.size());
  Batch b{Tensor(Shape{n, 1, s, s}), Tensor(Shape{n, k_count, m, m}), Tensor(Shape{n, k_count, 1, 1})};
  for (int i = 0; i < n; ++i) {
    std::copy(samples[i]->image.data().begin(), samples[i]->image.data().end(), b.images.plane(i, 0));
    const auto gt = parts::render_gt_maps(samples[i]->keypoints, samples[i]->visible, config.parts.sigma, m, m);
    std::copy(gt.maps.data().begin(), gt.maps.data().end(), b.maps.plane(i, 0));
    for (int k = 0; k < k_count; ++k) b.mask.at(i, k, 0, 0) = gt.mask.at(0, k, 0, 0);
  }
  return b;
}

Evaluation evaluate(const PoseModel& model, const std::vector<Sample>& samples, const RunConfig& config) {
  constexpr std::size_t kChunk = 32;
  const auto perm = model.schema.flip_permutation();
  std::vector<std::vector<Point>> pred, truth;
  std::vector<std::vector<bool>> visible;
  real loss_sum = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i) chunk.push_back(&samples[i]);
    const Batch b = make_batch(chunk, config);
    const Tensor maps = model.predict_maps(b.images);
    Tensor flipped;
    if (config.train.flip_test) flipped = model.predict_maps(flip_images(b.images));
    {
      NoGradGuard no_grad;
      loss_sum += parts::masked_heatmap_loss(Var::constant(maps), b.maps, b.mask).value()[0] * chunk.size();
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int n = static_cast<int>(i);
      const auto kps = parts::to_image_space(config.train.flip_test ? parts::decode_with_flip(maps, flipped, perm, n)
                                                                    : parts::decode_keypoints(maps, n));
      std::vector<Point> p;
      for (const auto& k : kps) p.push_back({k.x, k.y});
      pred.push_back(std::move(p));
      truth.push_back(chunk[i]->keypoints);
      visible.push_back(chunk[i]->visible);
    }
  }
  const int s = config.data.synth.image_size;
  return {loss_sum / static_cast<real>(samples.size()), evaluate_pck(pred, truth, visible, kPckRadii, s, s)};
}

void save_checkpoint(const std::string& path, int epoch, const PoseModel& model,
                     const std::vector<const optim::AdamState*>& optimizers) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, sizeof kMagic);
  put_u64(out, static_cast<std::uint64_t>(epoch));
  const auto params = model.parameters();
  put_u64(out, params.size());
  for (const auto& p : params) put_tensor(out, p.var.value());
  const auto states = model.norm_states();
  put_u64(out, states.size());
  for (const auto& s : states) {
    put_tensor(out, s->running_mean);
    put_tensor(out, s->running_var);
  }
  put_u64(out, optimizers.size());
  for (const optim::AdamState* st : optimizers) {
    put_u64(out, static_cast<std::uint64_t>(st->step));
    put_u64(out, st->m.size());
    for (std::size_t i = 0; i < st->m.size(); ++i) {
      put_tensor(out, st->m[i]);
      put_tensor(out, st->v[i]);
    }
  }
  write_file(path, out.str());
}

int load_checkpoint(const std::string& path, const PoseModel& model, std::vector<optim::AdamState>& optimizers) {
  std::istringstream in(read_file(path), std::ios::binary);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ConfigError(path + " is not a checkpoint");
  const int epoch = static_cast<int>(get_u64(in));
  auto params = model.parameters();
  if (get_u64(in) != params.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (auto& p : params) get_tensor(in, p.var.mutable_value());
  const auto states = model.norm_states();
  if (get_u64(in) != states.size()) throw ConfigError("checkpoint norm count mismatch");
  for (const auto& s : states) {
    get_tensor(in, s->running_mean);
    get_tensor(in, s->running_var);
  }
  // Callers that only need the model pass no optimizer states.
  if (optimizers.empty()) return epoch;
  if (get_u64(in) != optimizers.size()) throw ConfigError("checkpoint optimizer count mismatch");
  for (optim::AdamState& st : optimizers) {
    st.step = static_cast<std::int64_t>(get_u64(in));
    if (get_u64(in) != st.m.size()) throw ConfigError("checkpoint optimizer size mismatch");
    for (std::size_t i = 0; i < st.m.size(); ++i) {
      get_tensor(in, st.m[i]);
      get_tensor(in, st.v[i]);
    }
  }
  return epoch;
}

RunResult run_search(const RunConfig& config, const RunOptions& options) {
  config.validate();
  apply_kernels(config.kernels);
  const auto started = std::chrono::steady_clock::now();
  const fs::path out_dir = config.out_dir;
  fs::create_directories(out_dir);
  write_file(out_dir / "config.json", config_to_json(config));
  std::ostream* log = options.log;

  // Held-out samples follow the training samples in the generator's index space.
  const auto train = generate_dataset(config.data.synth, config.data.train_count, 0);
  const auto heldout = generate_dataset(config.data.synth, config.data.val_count, config.data.train_count);

  const optim::Strategy strategy = config.strategy();
  std::vector<int> train_pool(train.size()), arch_pool;
  std::iota(train_pool.begin(), train_pool.end(), 0);
  if (strategy == optim::Strategy::first_order_bilevel) {
    const auto keep = static_cast<std::size_t>(std::lround((1.0 - config.search.val_fraction) * train.size()));
    if (keep < 2 || keep >= train.size()) throw ConfigError("bilevel split leaves an empty train or val half");
    arch_pool.assign(train_pool.begin() + static_cast<std::ptrdiff_t>(keep), train_pool.end());
    train_pool.resize(keep);
  }

  PoseModel model = build_model(config, config.seed);
  if (strategy == optim::Strategy::random_sampled) {
    Rng arch_seed = Rng::derive(config.seed, 3);
    optim::random_init_arch(model.arch_vars(), arch_seed.engine()());
  }
  if (!options.fixed_arch.empty()) {
    load_arch_json(model, read_file(options.fixed_arch));
    optim::freeze(model.arch_vars());
  }
  optim::Searcher searcher(model.weight_vars(), model.arch_vars(),
                           optim::SearchOptions{strategy, config.search.arch_weight_decay});

  const fs::path ckpt = out_dir / "checkpoint.bin";
  const fs::path metrics_path = out_dir / "metrics.csv";
  std::string metrics = std::string(kMetricsHeader) + "\n";
  int first_epoch = 0;
  if (options.resume && fs::exists(ckpt)) {
    std::vector<optim::AdamState> st{searcher.weight_optimizer().state(), searcher.arch_optimizer().state()};
    const int done = load_checkpoint(ckpt.string(), model, st);
    searcher.weight_optimizer().load_state(std::move(st[0]));
    searcher.arch_optimizer().load_state(std::move(st[1]));
    first_epoch = done + 1;
    std::istringstream old(fs::exists(metrics_path) ? read_file(metrics_path) : std::string());
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line))
      if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= done) metrics += line + "\n";
    if (log) *log << "resuming after epoch " << done << "\n";
  }

  const int batch = config.train.batch;
  const real arch_lr_scale =
      strategy == optim::Strategy::first_order_bilevel ? config.search.arch_lr / config.schedule.arch_base_lr : 1.0;

  RunResult result;
  result.out_dir = out_dir.string();
  const auto perm = model.schema.flip_permutation();
  for (int epoch = first_epoch; epoch < config.train.epochs; ++epoch) {
    Rng rng = Rng::derive(config.seed, 0x100000u + static_cast<std::uint64_t>(epoch));
    const real lr_w = config.schedule.lr_at(epoch, optim::ParamKind::weight);
    const real lr_arch = arch_lr_scale * config.schedule.lr_at(epoch, optim::ParamKind::arch);

    std::vector<int> order = train_pool;
    shuffle(order, rng);
    std::vector<int> arch_order = arch_pool;
    shuffle(arch_order, rng);
    std::size_t arch_cursor = 0;

    const auto assemble = [&](const std::vector<int>& idx, std::size_t start, std::size_t count,
                              std::vector<Sample>& storage) {
      storage.clear();
      for (std::size_t i = 0; i < count; ++i) {
        const Sample& s = train[idx[(start + i) % idx.size()]];
        storage.push_back(config.data.augment ? augment(s, rng, perm) : s);
      }
      std::vector<const Sample*> ptrs;
      for (const Sample& s : storage) ptrs.push_back(&s);
      return make_batch(ptrs, config);
    };

    real loss_sum = 0, val_sum = 0;
    int steps = 0;
    model.set_training(true);
    try {
      for (std::size_t start = 0; start + 2 <= order.size(); start += batch) {
        const std::size_t count = std::min<std::size_t>(batch, order.size() - start);
        std::vector<Sample> storage, arch_storage;
        const Batch b = assemble(order, start, count, storage);
        const auto train_loss = [&] {
          return parts::masked_heatmap_loss(model.forward(Var::constant(b.images)).scores, b.maps, b.mask);
        };
        if (strategy == optim::Strategy::first_order_bilevel) {
          const Batch vb = assemble(arch_order, arch_cursor, std::min<std::size_t>(batch, arch_order.size()), arch_storage);
          arch_cursor += batch;
          const auto val_loss = [&] {
            return parts::masked_heatmap_loss(model.forward(Var::constant(vb.images)).scores, vb.maps, vb.mask);
          };
          const auto [tl, vl] = searcher.bilevel_step(train_loss, val_loss, lr_w, lr_arch);
          loss_sum += tl;
          val_sum += vl;
        } else {
          loss_sum += searcher.synchronous_step(train_loss, lr_w, lr_arch);
        }
        ++steps;
      }
    } catch (const NumericalError& e) {
      write_file(out_dir / "abort.txt", "epoch " + std::to_string(epoch) + ": " + e.what() + "\n");
      throw RunAborted("run aborted at epoch " + std::to_string(epoch) + ": " + e.what() +
                       "; last good checkpoint kept in " + ckpt.string());
    }

    const Evaluation ev = evaluate(model, heldout, config);
    result.final_train_loss = loss_sum / std::max(steps, 1);
    metrics += metrics_row(epoch, "train", result.final_train_loss, nullptr, lr_w, lr_arch);
    if (strategy == optim::Strategy::first_order_bilevel)
      metrics += metrics_row(epoch, "arch_val", val_sum / std::max(steps, 1), nullptr, lr_w, lr_arch);
    metrics += metrics_row(epoch, "val", ev.loss, &ev.pck.mean, lr_w, lr_arch);
    write_file(metrics_path, metrics);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.json", epoch);
    write_file(out_dir / "arch" / name, arch_to_json(model));
    save_checkpoint(ckpt.string(), epoch, model,
                    {&searcher.weight_optimizer().state(), &searcher.arch_optimizer().state()});
    result.final_pck = ev.pck;
    result.epochs_completed = epoch + 1;
    if (log)
      *log << "epoch " << epoch << " loss " << fmt(result.final_train_loss) << " val_loss " << fmt(ev.loss)
           << " pck@0.1 " << fmt(ev.pck.at(0.1)) << "\n";
    if (options.stop_after_epoch >= 0 && epoch >= options.stop_after_epoch) break;
  }

  if (result.epochs_completed == config.train.epochs || first_epoch >= config.train.epochs) {
    if (first_epoch >= config.train.epochs) result.final_pck = evaluate(model, heldout, config).pck;
    write_file(out_dir / "arch_final.json", arch_to_json(model));
    for (const fabric::Fabric* f : [&] {
           std::vector<const fabric::Fabric*> all{&model.backbone};
           for (const auto& h : model.heads) all.push_back(&h);
           return all;
         }()) {
      write_file(out_dir / ("graph_" + f->name + ".dot"), fabric::export_graph(*f, fabric::GraphFormat::dot));
      write_file(out_dir / ("graph_" + f->name + ".json"), fabric::export_graph(*f, fabric::GraphFormat::json));
    }
    if (config.prune.enabled) {
      json reports = json::array();
      const int s = config.data.synth.image_size;
      for (const fabric::Fabric* f : [&] {
             std::vector<const fabric::Fabric*> v{&model.backbone};
             for (const auto& h : model.heads) v.push_back(&h);
             return v;
           }())
        reports.push_back(json::parse(prune::prune(*f, config.prune.tol, s, s).report.to_json()));
      write_file(out_dir / "prune_report.json", json{{"fabrics", reports}}.dump(2) + "\n");
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

SeedSummary run_seeds(const RunConfig& config, const std::vector<std::uint64_t>& seeds, const RunOptions& options) {
  if (seeds.empty()) throw UsageError("no seeds given");
  SeedSummary summary;
  json runs = json::array();
  for (std::uint64_t seed : seeds) {
    RunConfig c = config;
    c.seed = seed;
    c.out_dir = (fs::path(config.out_dir) / ("seed_" + std::to_string(seed))).string();
    const RunResult r = run_search(c, options);
    summary.seeds.push_back(seed);
    summary.pck.push_back(r.final_pck.at(0.1));
    runs.push_back({{"seed", seed}, {"pck@0.1", r.final_pck.at(0.1)}, {"pck@0.05", r.final_pck.at(0.05)},
                    {"pck@0.2", r.final_pck.at(0.2)}, {"dir", r.out_dir}});
  }
  const real n = static_cast<real>(summary.pck.size());
  summary.mean = std::accumulate(summary.pck.begin(), summary.pck.end(), 0.0) / n;
  real ss = 0;
  for (real v : summary.pck) ss += (v - summary.mean) * (v - summary.mean);
  summary.stddev = summary.pck.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  write_file(fs::path(config.out_dir) / "summary.json",
             json{{"strategy", config.search.strategy},
                  {"runs", runs},
                  {"pck@0.1_mean", summary.mean},
                  {"pck@0.1_std", summary.stddev}}
                     .dump(2) +
                 "\n");
  return summary;
}

}  // namespace posefabric::harness
