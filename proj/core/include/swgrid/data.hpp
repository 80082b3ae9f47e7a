#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "swgrid/tensor.hpp"

namespace swgrid {

/// Labelled images stored as float planes (C, S, S) per sample, values in [0, 1].
struct Dataset {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t classes = 10;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_numel() const noexcept { return channels * image_size * image_size; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image_numel(), image_numel());
  }

  /// Per-class sample counts.
  std::vector<std::size_t> class_histogram() const;
};

/// First `count` samples (all when count == 0 or count >= size()).
Dataset take_prefix(const Dataset& data, std::size_t count);

/// Gathers samples into a (B, C, S, S) tensor.
template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices);

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// CIFAR binary layout ---------------------------------------------------------

enum class CifarVariant { Cifar10, Cifar100 };
enum class Split { Train, Test };

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;
/// Bytes per record: one label byte (two for CIFAR-100) plus 3072 pixels.
constexpr std::size_t cifar_record_bytes(CifarVariant v) {
  return v == CifarVariant::Cifar10 ? kCifarImageBytes + 1 : kCifarImageBytes + 2;
}
constexpr std::size_t cifar_classes(CifarVariant v) { return v == CifarVariant::Cifar10 ? 10 : 100; }

/// File names of a split, relative to the data directory.
std::vector<std::string> cifar_files(CifarVariant variant, Split split);

/// Parses one or more CIFAR binary files. CIFAR-100 uses the fine label.
/// Throws IoError on missing or truncated files (with byte offset) and
/// CorruptDataError on out-of-range labels.
Dataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split);

/// Parses raw CIFAR bytes; `source` names the origin in error messages.
Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, const std::string& source);

/// Writes a 32x32 RGB dataset in CIFAR-10 layout; pixels are rounded to bytes.
void write_cifar10(const Dataset& data, const std::filesystem::path& file);

// Synthetic data --------------------------------------------------------------

/// Class c is a linear intensity ramp along direction pi * c / classes,
/// with random amplitude and additive Gaussian noise, clamped to [0, 1].
struct SynthSpec {
  std::size_t classes = 2;
  std::size_t samples_per_class = 64;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 1;
  double noise = 0.1;

  void validate() const;
};

/// Deterministic under `spec.seed`; samples are interleaved by class.
Dataset generate_synth(const SynthSpec& spec);

}  // namespace swgrid
