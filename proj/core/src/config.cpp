#include "swgrid/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "swgrid/checkpoint.hpp"
#include "swgrid/error.hpp"

namespace swgrid {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

class KeyReader {
 public:
  KeyReader(std::vector<std::pair<std::string, std::string>> entries, std::string source)
      : source_(std::move(source)) {
    for (auto& [k, v] : entries) values_.emplace(std::move(k), std::move(v));
  }

  std::size_t size(const std::string& key, std::size_t fallback) {
    return take(key, fallback, [&](const std::string& v) {
      std::size_t out = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc() || ptr != v.data() + v.size()) fail(key, v, "a non-negative integer");
      return out;
    });
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    return take(key, fallback, [&](const std::string& v) {
      std::uint64_t out = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc() || ptr != v.data() + v.size()) fail(key, v, "a non-negative integer");
      return out;
    });
  }

  double real(const std::string& key, double fallback) {
    return take(key, fallback, [&](const std::string& v) {
      std::istringstream in(v);
      double out = 0.0;
      in >> out;
      if (!in || !in.eof()) fail(key, v, "a number");
      return out;
    });
  }

  bool flag(const std::string& key, bool fallback) {
    return take(key, fallback, [&](const std::string& v) {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      fail(key, v, "true or false");
      return false;
    });
  }

  std::string text(const std::string& key, std::string fallback) {
    return take(key, std::move(fallback), [](const std::string& v) { return v; });
  }

  void reject_unknown() const {
    if (!values_.empty()) throw ConfigError(source_ + ": unknown key '" + values_.begin()->first + "'");
  }

 private:
  template <typename V, typename Parse>
  V take(const std::string& key, V fallback, Parse parse) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    V out = parse(it->second);
    values_.erase(it);
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& value, const char* expected) const {
    throw ConfigError(source_ + ": key '" + key + "' = '" + value + "' is not " + expected);
  }

  std::map<std::string, std::string> values_;
  std::string source_;
};

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(content).substr(0, eq));
    std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
    if (end == text.size()) break;
  }
  return out;
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  if (data.dataset != "cifar10" && data.dataset != "cifar100" && data.dataset != "synth") {
    throw ConfigError("dataset must be cifar10, cifar100 or synth, got '" + data.dataset + "'");
  }
  if (data.dataset == "cifar10" && network.classes != 10) throw ConfigError("cifar10 needs classes = 10");
  if (data.dataset == "cifar100" && network.classes != 100) throw ConfigError("cifar100 needs classes = 100");
  if (data.dataset != "synth" && (network.input_size != 32 || network.in_channels != 3)) {
    throw ConfigError("CIFAR data needs input_size = 32 and in_channels = 3");
  }
  if (data.synth.classes != network.classes) throw ConfigError("synth_classes must equal classes");
  if (data.eval_batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
  data.synth.validate();
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  KeyReader keys(parse_key_values(text, source), source);
  RunConfig cfg;
  NetworkConfig& n = cfg.network;
  n.dims = keys.size("dims", n.dims);
  n.side = keys.size("side", n.side);
  n.base_channels = keys.size("base_channels", n.base_channels);
  n.num_blocks = keys.size("num_blocks", n.num_blocks);
  n.classes = keys.size("classes", n.classes);
  n.unit_depth = keys.size("unit_depth", n.unit_depth);
  n.input_size = keys.size("input_size", n.input_size);
  n.in_channels = keys.size("in_channels", n.in_channels);

  TrainConfig& t = cfg.train;
  t.lr_max = keys.real("lr_max", t.lr_max);
  t.lr_min = keys.real("lr_min", t.lr_min);
  t.momentum = keys.real("momentum", t.momentum);
  t.weight_decay = keys.real("weight_decay", t.weight_decay);
  t.batch_size = keys.size("batch_size", t.batch_size);
  t.t0 = keys.size("t0", t.t0);
  t.t_mult = keys.size("t_mult", t.t_mult);
  t.total_epochs = keys.size("epochs", t.total_epochs);
  t.seed = keys.u64("seed", t.seed);
  t.augment = keys.flag("augment", t.augment);
  t.per_iteration_lr = keys.flag("per_iteration_lr", t.per_iteration_lr);

  DataConfig& d = cfg.data;
  d.dataset = keys.text("dataset", d.dataset);
  d.train_subset = keys.size("train_subset", d.train_subset);
  d.test_subset = keys.size("test_subset", d.test_subset);
  d.eval_batch_size = keys.size("eval_batch_size", d.eval_batch_size);
  d.record_wall_time = keys.flag("record_wall_time", d.record_wall_time);
  d.synth.classes = keys.size("synth_classes", n.classes);
  d.synth.samples_per_class = keys.size("synth_samples_per_class", d.synth.samples_per_class);
  d.synth_test_samples_per_class = keys.size("synth_test_samples_per_class", d.synth_test_samples_per_class);
  d.synth.noise = keys.real("synth_noise", d.synth.noise);
  d.synth.seed = keys.u64("synth_seed", d.synth.seed);
  d.synth.image_size = n.input_size;
  d.synth.channels = n.in_channels;
  keys.reject_unknown();
  cfg.validate();
  return cfg;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.string());
}

std::pair<SynthSpec, std::size_t> parse_synth_spec(std::string_view text, const std::string& source) {
  KeyReader keys(parse_key_values(text, source), source);
  SynthSpec spec;
  spec.classes = keys.size("classes", spec.classes);
  spec.samples_per_class = keys.size("samples_per_class", spec.samples_per_class);
  const std::size_t test_per_class = keys.size("test_samples_per_class", 32);
  spec.image_size = keys.size("image_size", spec.image_size);
  spec.channels = keys.size("channels", spec.channels);
  spec.seed = keys.u64("seed", spec.seed);
  spec.noise = keys.real("noise", spec.noise);
  const std::string pattern = keys.text("pattern", "oriented_gradient");
  if (pattern != "oriented_gradient") throw ConfigError(source + ": unsupported pattern '" + pattern + "'");
  keys.reject_unknown();
  spec.validate();
  return {spec, test_per_class};
}

std::pair<SynthSpec, std::size_t> load_synth_spec(const std::filesystem::path& path) {
  return parse_synth_spec(read_text_file(path), path.string());
}

NetworkConfig parse_network_canonical(const std::string& text) {
  KeyReader keys(parse_key_values(text, "checkpoint config"), "checkpoint config");
  NetworkConfig n;
  n.dims = keys.size("dims", 0);
  n.side = keys.size("side", 0);
  n.base_channels = keys.size("base_channels", 0);
  n.num_blocks = keys.size("num_blocks", 0);
  n.classes = keys.size("classes", 0);
  n.unit_depth = keys.size("unit_depth", 0);
  n.input_size = keys.size("input_size", 0);
  n.in_channels = keys.size("in_channels", 0);
  keys.reject_unknown();
  n.validate();
  return n;
}

}  // namespace swgrid
