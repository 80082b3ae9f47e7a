// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit status 1 when
// any criterion fails. SKIP is only used when optional CIFAR data is absent.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "swgrid/checkpoint.hpp"
#include "swgrid/config.hpp"
#include "swgrid/data.hpp"
#include "swgrid/grid_topology.hpp"
#include "swgrid/model.hpp"
#include "swgrid/ops.hpp"
#include "swgrid/random.hpp"
#include "swgrid/train.hpp"

namespace fs = std::filesystem;
using namespace swgrid;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "swgrid");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("swgrid_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const fs::path kConfigs = SWGRID_CONFIG_DIR;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1 ---------------------------------------------------------------------------

Outcome path_table() {
  struct Row {
    std::size_t dims, side;
    std::map<std::size_t, std::uint64_t> counts;
    std::uint64_t total;
  };
  // Reference per-depth counts. The N=1 column lists depth 15 twice; the
  // second entry is depth 16 (a chain of 16 units has exactly one such path).
  std::map<std::size_t, std::uint64_t> chain;
  for (std::size_t d = 1; d <= 16; ++d) chain[d] = 17 - d;
  const std::vector<Row> rows{
      {1, 16, chain, 136},
      {2, 4, {{1, 16}, {2, 24}, {3, 34}, {4, 44}, {5, 48}, {6, 40}, {7, 20}}, 226},
      {4, 2, {{1, 16}, {2, 32}, {3, 48}, {4, 48}, {5, 24}}, 168},
  };
  std::string detail;
  for (const Row& row : rows) {
    const auto t0 = Clock::now();
    const CliResult r =
        cli({"paths", "--dims", std::to_string(row.dims), "--side", std::to_string(row.side), "--total"});
    const double secs = seconds_since(t0);
    std::ostringstream want;
    want << "depth,count\n";
    for (const auto& [d, c] : row.counts) want << d << ',' << c << '\n';
    want << "total," << row.total << '\n';
    if (r.code != 0 || r.out != want.str()) {
      return {Status::Fail, "N=" + std::to_string(row.dims) + " L=" + std::to_string(row.side) + " output:\n" + r.out};
    }
    if (secs >= 1.0) return {Status::Fail, "N=" + std::to_string(row.dims) + " took " + fmt("%.3f s", secs)};
    detail += "N" + std::to_string(row.dims) + "L" + std::to_string(row.side) + " total=" +
              std::to_string(row.total) + " (" + fmt("%.4f s", secs) + ") ";
  }
  return {Status::Pass, detail + "; N1L16 duplicated depth-15 row read as depth 16, count 1"};
}

// 2 ---------------------------------------------------------------------------

// The deepest path has N(L-1) hops between units, i.e. visits N(L-1)+1 units.
// Depth counts units in the path table, so both views are checked.
Outcome deepest_path() {
  std::size_t specs = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t l = 1; l <= 5; ++l) {
      const PathHistogram h = enumerate_paths({n, l, 1, 1});
      const std::size_t hops = GridSpec{n, l, 1, 1}.max_path_hops();
      if (h.max_depth() != n * (l - 1) + 1 || hops != n * (l - 1) || h.max_depth() - 1 != hops) {
        return {Status::Fail, "N=" + std::to_string(n) + " L=" + std::to_string(l) +
                                  " max depth " + std::to_string(h.max_depth())};
      }
      ++specs;
    }
  }
  return {Status::Pass, std::to_string(specs) + " specs: deepest path spans N(L-1) hops over N(L-1)+1 units"};
}

// 3 ---------------------------------------------------------------------------

Outcome channel_compatibility() {
  Rng rng(20240501);
  std::size_t specs = 0, edges = 0, violations = 0;
  while (specs < 200) {
    const std::size_t n = 1 + rng.below(4);
    const std::size_t l = 1 + rng.below(n >= 3 ? 4 : 7);
    const std::size_t cmin = 1 + rng.below(64);
    const std::size_t cmax = cmin + rng.below(96);
    const GridSpec spec{n, l, cmin, cmax};
    for (const UnitCoord& p : unit_coords(spec)) {
      for (const UnitCoord& q : neighbors_in(spec, p)) {
        ++edges;
        violations += channel_out(spec, q) != channel_in(spec, p);
      }
    }
    ++specs;
  }
  const std::string detail = std::to_string(specs) + " specs, " + std::to_string(edges) + " edges, " +
                             std::to_string(violations) + " violations";
  return {violations == 0 && edges > 0 ? Status::Pass : Status::Fail, detail};
}

// 4 ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const CliResult r = cli({"gradcheck", "--config", (kConfigs / "tiny.cfg").string()});
  const double secs = seconds_since(t0);
  std::string line = r.out;
  while (!line.empty() && line.back() == '\n') line.pop_back();
  const bool ok = r.code == 0 && line.ends_with(" PASS") && secs < 60.0;
  return {ok ? Status::Pass : Status::Fail, line + r.err + " (" + fmt("%.1f s", secs) + ")"};
}

// 5 ---------------------------------------------------------------------------

Outcome residual_identity() {
  GridBlock<double> block({2, 3, 8, 16}, 12);
  init_msra(block, 5);
  block.zero_residual_branch();
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t batch = 1 + rng.below(3), size = 2 + rng.below(6);
    Tensor<double> x({batch, 12, size, size});
    for (double& v : x.data()) v = 4.0 * rng.normal();
    block.set_training(trial % 2 == 0);
    const Tensor<double> y = block.forward(x);
    if (y.to_vector() != x.to_vector()) return {Status::Fail, "mismatch on input " + std::to_string(trial)};
  }
  return {Status::Pass, "20 inputs reproduced bit-exactly"};
}

// 6 ---------------------------------------------------------------------------

Outcome sgdr_schedule() {
  TrainConfig cfg;
  if (sgdr_lr(cfg, 0.0) != 0.2) return {Status::Fail, "lr(0) = " + fmt("%.17g", sgdr_lr(cfg, 0.0))};
  const std::vector<std::size_t> want{10, 30, 70, 150, 310, 630};
  if (sgdr_cycle_ends(cfg) != want) return {Status::Fail, "unexpected cycle ends"};
  double worst = 0;
  std::size_t start = 0;
  for (std::size_t end : want) {
    if (sgdr_lr(cfg, static_cast<double>(start)) != cfg.lr_max) return {Status::Fail, "no restart at " + std::to_string(start)};
    const double mid = sgdr_lr(cfg, 0.5 * static_cast<double>(start + end));
    worst = std::max(worst, std::abs(mid - 0.5 * (cfg.lr_max + cfg.lr_min)));
    start = end;
  }
  if (worst > 1e-12) return {Status::Fail, "mid-cycle error " + fmt("%.3g", worst)};
  return {Status::Pass, "lr(0)=0.2, ends {10,30,70,150,310,630}, mid-cycle error " + fmt("%.2g", worst)};
}

// 7 ---------------------------------------------------------------------------

Outcome synthetic_training() {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_run_config(kConfigs / "tiny.cfg");
  const Dataset train = generate_synth(cfg.data.synth);
  Network<float> net(cfg.network);
  init_msra(net, cfg.train.seed);
  OptimizerState<float> state;
  std::size_t steps = 0;
  double acc = 0;
  for (std::size_t epoch = 0; epoch < cfg.train.total_epochs && steps < 200; ++epoch) {
    steps += train_epoch(net, train, nullptr, cfg.train, state, epoch).steps;
    acc = evaluate(net, train).accuracy;
    if (acc >= 0.95) break;
  }
  const double secs = seconds_since(t0);
  const std::string detail = "train accuracy " + fmt("%.4f", acc) + " after " + std::to_string(steps) +
                             " steps (" + fmt("%.1f s", secs) + ")";
  return {acc >= 0.95 && steps <= 200 && secs < 300 ? Status::Pass : Status::Fail, detail};
}

// 8 ---------------------------------------------------------------------------

Outcome cifar_subset() {
  const char* env = std::getenv(cli::kDataDirEnv);
  if (env == nullptr || *env == '\0') return {Status::Skip, std::string(cli::kDataDirEnv) + " not set"};
  const fs::path dir = env;
  for (const auto& f : cifar_files(CifarVariant::Cifar10, Split::Train)) {
    if (!fs::exists(dir / f)) return {Status::Skip, (dir / f).string() + " not found"};
  }
  const auto t0 = Clock::now();
  const RunConfig cfg = load_run_config(kConfigs / "cifar10_subset.cfg");
  const Dataset train = take_prefix(load_cifar(dir, CifarVariant::Cifar10, Split::Train), cfg.data.train_subset);
  Network<float> net(cfg.network);
  init_msra(net, cfg.train.seed);
  OptimizerState<float> state;
  double first = 0, last = 0;
  for (std::size_t epoch = 0; epoch < cfg.train.t0; ++epoch) {
    const MetricsRow row = train_epoch(net, train, nullptr, cfg.train, state, epoch);
    if (epoch == 0) first = row.train_loss;
    last = row.train_loss;
  }
  const double secs = seconds_since(t0);
  const std::string detail = "train loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (ratio " +
                             fmt("%.3f", last / first) + ", " + fmt("%.0f s", secs) + ")";
  return {last < 0.6 * first && secs <= 1800 ? Status::Pass : Status::Fail, detail};
}

// 9 ---------------------------------------------------------------------------

fs::path g_checkpoint;  // produced by criterion 9, reused by 10

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> files(2);
  for (int run = 0; run < 2; ++run) {
    const fs::path out = scratch("train_" + std::to_string(run));
    const CliResult r = cli({"train", "--config", (kConfigs / "tiny.cfg").string(), "--out", out.string(),
                             "--seed", "3", "--deterministic"});
    if (r.code != 0) return {Status::Fail, "train exited " + std::to_string(r.code) + ": " + r.err};
    for (const auto& entry : fs::directory_iterator(out)) {
      files[static_cast<std::size_t>(run)][entry.path().filename().string()] = slurp(entry.path());
    }
    if (run == 0) g_checkpoint = out / "final.swgd";
  }
  if (!files[0].contains("metrics.csv") || !files[0].contains("final.swgd")) {
    return {Status::Fail, "missing metrics.csv or final.swgd"};
  }
  if (files[0] != files[1]) return {Status::Fail, "output files differ between runs"};
  return {Status::Pass, std::to_string(files[0].size()) + " files byte-identical across two runs"};
}

// 10 --------------------------------------------------------------------------

Outcome ensemble_contract() {
  if (g_checkpoint.empty() || !fs::exists(g_checkpoint)) return {Status::Fail, "no checkpoint from criterion 9"};
  const RunConfig cfg = load_run_config(kConfigs / "tiny.cfg");
  SynthSpec spec = cfg.data.synth;
  spec.samples_per_class = cfg.data.synth_test_samples_per_class;
  spec.seed = derive_seed(cfg.data.synth.seed, 1, 0);
  const Dataset data = generate_synth(spec);

  // Single-model labels straight from the logits.
  Network<float> single = load_checkpoint(g_checkpoint);
  single.set_training(false);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Tensor<float> logits = single.forward(gather_images<float>(data, all));
  std::vector<int> want(data.size());
  const std::size_t k = cfg.network.classes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    }
    want[i] = static_cast<int>(best);
  }

  std::vector<Network<float>> models;
  for (int i = 0; i < 4; ++i) models.push_back(load_checkpoint(g_checkpoint));
  std::vector<Network<float>*> ptrs;
  for (auto& m : models) ptrs.push_back(&m);
  const EnsemblePrediction pred = ensemble_predict<float>(ptrs, data, 7);
  double worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double sum = 0;
    for (std::size_t c = 0; c < k; ++c) sum += pred.mean_probs[i * k + c];
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const std::string detail = "K=4 over " + std::to_string(data.size()) + " samples, max |row sum - 1| = " +
                             fmt("%.2g", worst);
  if (pred.labels != want) return {Status::Fail, "labels differ from the single model; " + detail};
  return {worst <= 1e-6 ? Status::Pass : Status::Fail, detail};
}

// 11 --------------------------------------------------------------------------

// Full-scale CIFAR error rates need full 630-epoch multi-model runs and are not
// gated here. What is checked is that the shipped full-recipe configs carry
// those training settings.
Outcome reproducibility_statement() {
  std::size_t checked = 0;
  for (const char* ds : {"cifar10", "cifar100"}) {
    for (const char* arch : {"N1L16k16", "N2L4k16", "N4L2k16", "N2L5k32"}) {
      const std::string name = std::string(ds) + "_" + arch + ".cfg";
      const RunConfig c = load_run_config(kConfigs / name);
      const TrainConfig& t = c.train;
      if (t.total_epochs != 630 || t.lr_max != 0.2 || t.momentum != 0.9 || t.weight_decay != 1e-4 ||
          t.batch_size != 128 || t.t0 != 10 || t.t_mult != 2 || !t.augment) {
        return {Status::Fail, name + " does not carry the full training recipe"};
      }
      ++checked;
    }
  }
  return {Status::Pass,
          "CIFAR-10 error rates 4.39/3.55/2.95% and CIFAR-100 17.77/15.67% require full 630-epoch "
          "multi-model training and are not acceptance gates; " +
              std::to_string(checked) + " shipped configs carry that recipe; criteria 1-10 are the gates"};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, path_table},       {2, deepest_path},       {3, channel_compatibility}, {4, gradient_check},
      {5, residual_identity}, {6, sgdr_schedule},     {7, synthetic_training},    {8, cifar_subset},
      {9, determinism},      {10, ensemble_contract}, {11, reproducibility_statement},
  };
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Skip ? "SKIP" : "FAIL";
    failures += o.status == Status::Fail;
    std::cout << "criterion " << id << ": " << tag << " - " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
