#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "swgrid/checkpoint.hpp"
#include "swgrid/config.hpp"
#include "swgrid/data.hpp"
#include "swgrid/error.hpp"
#include "swgrid/grad_check.hpp"
#include "swgrid/grid_topology.hpp"
#include "swgrid/model.hpp"
#include "swgrid/ops.hpp"
#include "swgrid/train.hpp"

namespace swgrid::cli {
namespace fs = std::filesystem;
namespace {

constexpr double kGradTolerance = 1e-4;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out << text;
    if (!out.flush()) throw IoError(tmp.string() + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": rename failed: " + ec.message());
}

fs::path resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return env;
  throw UsageError(std::string("no data directory: pass --data-dir or set ") + kDataDirEnv);
}

CifarVariant variant_for(std::size_t classes) {
  if (classes == 10) return CifarVariant::Cifar10;
  if (classes == 100) return CifarVariant::Cifar100;
  throw ConfigError("CIFAR data needs 10 or 100 classes, model has " + std::to_string(classes));
}

// Test split for a model: regenerated from a synth spec, or read from disk.
Dataset load_test_split(const NetworkConfig& net, const std::string& data_dir, const std::string& synth_spec) {
  if (!synth_spec.empty()) {
    auto [spec, test_per_class] = load_synth_spec(synth_spec);
    SynthSpec test = spec;
    test.samples_per_class = test_per_class;
    test.seed = derive_seed(spec.seed, 1, 0);
    return generate_synth(test);
  }
  const fs::path dir = resolve_data_dir(data_dir);
  const CifarVariant v = net.classes == 100 ? CifarVariant::Cifar100 : CifarVariant::Cifar10;
  Dataset data = load_cifar(dir, v, Split::Test);
  return data;
}

struct Datasets {
  Dataset train;
  Dataset test;
};

Datasets load_training_data(const RunConfig& cfg, bool synth, const std::string& data_dir) {
  Datasets out;
  if (synth || cfg.data.dataset == "synth") {
    SynthSpec test = cfg.data.synth;
    test.samples_per_class = cfg.data.synth_test_samples_per_class;
    test.seed = derive_seed(cfg.data.synth.seed, 1, 0);
    out.train = generate_synth(cfg.data.synth);
    out.test = generate_synth(test);
  } else {
    const fs::path dir = resolve_data_dir(data_dir);
    const CifarVariant v = variant_for(cfg.network.classes);
    out.train = load_cifar(dir, v, Split::Train);
    out.test = load_cifar(dir, v, Split::Test);
  }
  out.train = take_prefix(out.train, cfg.data.train_subset);
  out.test = take_prefix(out.test, cfg.data.test_subset);
  if (out.train.image_size != cfg.network.input_size || out.train.channels != cfg.network.in_channels) {
    throw ConfigError("data images do not match input_size/in_channels");
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_paths(std::size_t dims, std::size_t side, bool total, std::ostream& out) {
  GridSpec spec{dims, side, 1, 1};
  const PathHistogram h = enumerate_paths(spec);
  out << "depth,count\n";
  for (std::size_t d = 1; d < h.counts.size(); ++d) {
    if (h.counts[d] != 0) out << d << ',' << h.counts[d] << '\n';
  }
  if (total) out << "total," << h.total << '\n';
  return kOk;
}

int cmd_channels(std::size_t dims, std::size_t side, std::size_t cmin, std::size_t cmax, std::ostream& out,
                 std::ostream& err) {
  GridSpec spec{dims, side, cmin, cmax};
  const GridTopology topo(spec);
  for (std::size_t m = 0; m < dims; ++m) out << 'p' << m << ',';
  out << "rank,channel_in,channel_out\n";
  for (std::size_t i = 0; i < topo.size(); ++i) {
    const UnitCoord& c = topo.coord(i);
    for (std::size_t v : c.p) out << v << ',';
    out << c.rank() << ',' << topo.channel_in(i) << ',' << topo.channel_out(i) << '\n';
  }
  err << "split_width=" << split_width(spec) << " join_width=" << join_width(spec) << '\n';
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  bool synth = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool deterministic = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.total_epochs = *a.epochs;
  if (a.deterministic) cfg.data.record_wall_time = false;
  cfg.validate();

  const Datasets data = load_training_data(cfg, a.synth, a.data_dir);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);

  Network<float> net(cfg.network);
  init_msra(net, cfg.train.seed);
  OptimizerState<float> state = OptimizerState<float>::for_params(trainable_params(net));
  const std::vector<std::size_t> cycle_ends = sgdr_cycle_ends(cfg.train);

  std::string metrics = std::string(kMetricsHeader) + "\n";
  write_atomic(dir / "metrics.csv", metrics);
  out << kMetricsHeader << '\n';
  for (std::size_t epoch = 0; epoch < cfg.train.total_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    MetricsRow row = train_epoch(net, data.train, &data.test, cfg.train, state, epoch);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    row.wall_seconds = cfg.data.record_wall_time ? elapsed.count() : 0.0;
    const std::string line = format_metrics_row(row);
    metrics += line + "\n";
    write_atomic(dir / "metrics.csv", metrics);
    out << line << std::endl;

    const std::size_t done = epoch + 1;
    if (std::find(cycle_ends.begin(), cycle_ends.end(), done) != cycle_ends.end()) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << done << ".swgd";
      save_checkpoint(net, dir / name.str());
    }
  }
  save_checkpoint(net, dir / "final.swgd");
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& synth_spec,
             std::size_t batch, std::ostream& out) {
  Network<float> net = load_checkpoint(checkpoint);
  const Dataset test = load_test_split(net.config(), data_dir, synth_spec);
  const EvalResult r = evaluate(net, test, batch);
  out << "samples,loss,accuracy,error_rate\n";
  out << test.size() << ',' << fmt_double(r.loss) << ',' << fmt_double(r.accuracy) << ','
      << fmt_double(1.0 - r.accuracy) << '\n';
  return kOk;
}

int cmd_ensemble(const std::vector<std::string>& checkpoints, const std::string& data_dir,
                 const std::string& synth_spec, const std::string& predictions, std::size_t batch,
                 std::ostream& out) {
  if (checkpoints.empty()) throw UsageError("--checkpoints needs at least one file");
  std::vector<std::unique_ptr<Network<float>>> owned;
  std::vector<Network<float>*> nets;
  for (const auto& path : checkpoints) {
    owned.push_back(std::make_unique<Network<float>>(load_checkpoint(path)));
    nets.push_back(owned.back().get());
  }
  const Dataset test = load_test_split(nets.front()->config(), data_dir, synth_spec);
  const EnsemblePrediction pred = ensemble_predict<float>(nets, test, batch);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred.labels[i] == test.labels[i] ? 1 : 0;
  const double acc = test.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
  out << "models,samples,accuracy,error_rate\n";
  out << nets.size() << ',' << test.size() << ',' << fmt_double(acc) << ',' << fmt_double(1.0 - acc) << '\n';

  if (!predictions.empty()) {
    std::ostringstream csv;
    const std::size_t classes = pred.mean_probs.dim(1);
    csv << "index,label,predicted";
    for (std::size_t k = 0; k < classes; ++k) csv << ",p" << k;
    csv << '\n';
    for (std::size_t i = 0; i < test.size(); ++i) {
      csv << i << ',' << test.labels[i] << ',' << pred.labels[i];
      for (std::size_t k = 0; k < classes; ++k) csv << ',' << fmt_double(pred.mean_probs[i * classes + k]);
      csv << '\n';
    }
    write_atomic(predictions, csv.str());
  }
  return kOk;
}

int cmd_gradcheck(const std::string& config, std::optional<std::uint64_t> seed, std::size_t batch,
                  std::ostream& out) {
  const RunConfig cfg = load_run_config(config);
  if (batch < 2) throw UsageError("--batch must be >= 2 for batch normalisation");
  const std::uint64_t s = seed.value_or(cfg.train.seed);

  Network<double> net(cfg.network);
  init_msra(net, s);
  Rng rng(derive_seed(s, 0x67c, 0));
  const NetworkConfig& n = cfg.network;
  Tensor<double> images({batch, n.in_channels, n.input_size, n.input_size});
  for (auto& v : images.data()) v = rng.uniform();
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % n.classes);

  std::vector<Tensor<double>> params;
  std::vector<std::string> names;
  net.visit([&](const std::string& name, Tensor<double> t, ParamRole role) {
    if (!is_trainable(role)) return;
    params.push_back(t);
    names.push_back(name);
  });
  const GradCheckResult r = grad_check(
      [&](Tape<double>& tape) { return softmax_cross_entropy(net.forward(images, &tape), labels, &tape); },
      params);
  const bool pass = r.max_rel_error < kGradTolerance;
  out << "max_rel_error=" << fmt_double(r.max_rel_error) << " elements=" << r.elements
      << " worst=" << (params.empty() ? "-" : names[r.worst_input]) << '[' << r.worst_element << ']'
      << " tolerance=" << fmt_double(kGradTolerance) << ' ' << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kOk : kFailure;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
              std::ostream& out) {
  auto [spec, test_per_class] = load_synth_spec(spec_path);
  if (seed) spec.seed = *seed;
  if (spec.image_size != 32 || spec.channels != 3 || spec.classes > 10) {
    throw ConfigError("synth output uses the CIFAR-10 layout: image_size 32, channels 3, at most 10 classes");
  }
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  const Dataset train = generate_synth(spec);
  SynthSpec test_spec = spec;
  test_spec.samples_per_class = test_per_class;
  test_spec.seed = derive_seed(spec.seed, 1, 0);
  const Dataset test = generate_synth(test_spec);

  // Train samples are dealt round-robin over the five batch files.
  const auto train_files = cifar_files(CifarVariant::Cifar10, Split::Train);
  std::vector<std::vector<std::size_t>> shards(train_files.size());
  for (std::size_t i = 0; i < train.size(); ++i) shards[i * shards.size() / train.size()].push_back(i);
  for (std::size_t f = 0; f < train_files.size(); ++f) {
    Dataset shard;
    shard.channels = train.channels;
    shard.image_size = train.image_size;
    shard.classes = train.classes;
    for (std::size_t i : shards[f]) {
      const auto img = train.image(i);
      shard.pixels.insert(shard.pixels.end(), img.begin(), img.end());
      shard.labels.push_back(train.labels[i]);
    }
    write_cifar10(shard, dir / train_files[f]);
  }
  write_cifar10(test, dir / cifar_files(CifarVariant::Cifar10, Split::Test).front());
  out << "train_samples=" << train.size() << " test_samples=" << test.size() << " dir=" << dir.string() << '\n';
  return kOk;
}

int report(const Error& e, std::ostream& err) {
  err << "error: " << e.kind() << ": " << e.what() << '\n';
  const std::string kind = e.kind();
  return kind == "usage" || kind == "config" ? kUsage : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grid networks of convolutional units: topology tools, training and evaluation", "swgrid"};
  app.require_subcommand(1);

  std::size_t dims = 0, side = 0, cmin = 0, cmax = 0;
  bool total = false;
  auto* paths = app.add_subcommand("paths", "Histogram of processing-path depths as CSV");
  paths->add_option("--dims", dims, "Grid dimension N")->required();
  paths->add_option("--side", side, "Grid side length L")->required();
  paths->add_flag("--total", total, "Append a total row");

  auto* channels = app.add_subcommand("channels", "Per-unit input/output widths as CSV");
  channels->add_option("--dims", dims, "Grid dimension N")->required();
  channels->add_option("--side", side, "Grid side length L")->required();
  channels->add_option("--min-channels", cmin, "Channels of the first unit")->required();
  channels->add_option("--max-channels", cmax, "Channels of the last unit")->required();

  TrainArgs ta;
  std::uint64_t seed_value = 0;
  std::size_t epochs_value = 0;
  auto* train = app.add_subcommand("train", "Train a network and write metrics and checkpoints");
  train->add_option("--config", ta.config, "Run configuration file")->required();
  train->add_option("--data-dir", ta.data_dir, "CIFAR binary directory");
  train->add_option("--out", ta.out_dir, "Output directory")->required();
  train->add_flag("--synth", ta.synth, "Train on the configured synthetic set");
  auto* train_seed = train->add_option("--seed", seed_value, "Override the configured seed");
  auto* train_epochs = train->add_option("--epochs", epochs_value, "Override the configured epoch count");
  train->add_flag("--deterministic", ta.deterministic, "Write wall_seconds as 0");

  std::string checkpoint, data_dir, synth_spec, predictions;
  std::size_t batch = 256;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data-dir", data_dir, "CIFAR binary directory");
  eval->add_option("--synth-spec", synth_spec, "Regenerate a synthetic test split instead");
  eval->add_option("--batch", batch, "Evaluation batch size");
  eval->add_option("--seed", seed_value, "Accepted for uniformity; evaluation is not random");

  std::vector<std::string> checkpoint_list;
  auto* ensemble = app.add_subcommand("ensemble", "Average softmax probabilities over checkpoints");
  ensemble->add_option("--checkpoints", checkpoint_list, "Comma-separated checkpoint files")
      ->required()
      ->delimiter(',');
  ensemble->add_option("--data-dir", data_dir, "CIFAR binary directory");
  ensemble->add_option("--synth-spec", synth_spec, "Regenerate a synthetic test split instead");
  ensemble->add_option("--predictions", predictions, "Write per-sample probabilities as CSV");
  ensemble->add_option("--batch", batch, "Evaluation batch size");
  ensemble->add_option("--seed", seed_value, "Accepted for uniformity; ensembling is not random");

  std::string config;
  std::size_t gc_batch = 2;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all parameter gradients");
  gradcheck->add_option("--config", config, "Run configuration file")->required();
  auto* gc_seed = gradcheck->add_option("--seed", seed_value, "Initialisation and input seed");
  gradcheck->add_option("--batch", gc_batch, "Images in the probe batch");

  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "Write a synthetic set in CIFAR-10 binary layout");
  synth->add_option("--spec", spec_path, "Synthetic spec file")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed_value, "Override the seed given in --spec");

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: usage: " << msg << '\n';
    return kUsage;
  }

  auto opt_seed = [&](const CLI::Option* o) {
    return o->count() > 0 ? std::optional<std::uint64_t>(seed_value) : std::nullopt;
  };
  try {
    if (*paths) return cmd_paths(dims, side, total, out);
    if (*channels) return cmd_channels(dims, side, cmin, cmax, out, err);
    if (*train) {
      ta.seed = opt_seed(train_seed);
      if (train_epochs->count() > 0) ta.epochs = epochs_value;
      return cmd_train(ta, out);
    }
    if (*eval) return cmd_eval(checkpoint, data_dir, synth_spec, batch, out);
    if (*ensemble) return cmd_ensemble(checkpoint_list, data_dir, synth_spec, predictions, batch, out);
    if (*gradcheck) return cmd_gradcheck(config, opt_seed(gc_seed), gc_batch, out);
    if (*synth) return cmd_synth(spec_path, out_dir, opt_seed(synth_seed), out);
  } catch (const Error& e) {
    return report(e, err);
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace swgrid::cli
