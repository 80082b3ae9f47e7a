#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swgrid/data.hpp"
#include "swgrid/model.hpp"
#include "swgrid/train.hpp"

namespace swgrid {

/// Lines of `key = value`; blank lines and text after '#' are ignored.
/// Duplicate keys and malformed lines raise ConfigError naming `source:line`.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, const std::string& source);

struct DataConfig {
  /// cifar10, cifar100 or synth
  std::string dataset = "cifar10";
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  std::size_t eval_batch_size = 256;
  /// When false, wall_seconds is written as 0 so metrics files are reproducible.
  bool record_wall_time = true;
  SynthSpec synth;
  std::size_t synth_test_samples_per_class = 32;
};

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

/// Unknown keys are errors.
RunConfig parse_run_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Keys: classes, samples_per_class, test_samples_per_class, image_size,
/// channels, seed, noise. Returns (spec, test samples per class).
std::pair<SynthSpec, std::size_t> parse_synth_spec(std::string_view text, const std::string& source = "<synth>");
std::pair<SynthSpec, std::size_t> load_synth_spec(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace swgrid
