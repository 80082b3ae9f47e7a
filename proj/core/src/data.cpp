#include "swgrid/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "swgrid/error.hpp"
#include "swgrid/random.hpp"

namespace swgrid {

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> counts(classes, 0);
  for (int label : labels) ++counts.at(static_cast<std::size_t>(label));
  return counts;
}

Dataset take_prefix(const Dataset& data, std::size_t count) {
  if (count == 0 || count >= data.size()) return data;
  Dataset out = data;
  out.labels.resize(count);
  out.pixels.resize(count * data.image_numel());
  return out;
}

template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInputError("gather_images: empty batch");
  Tensor<T> out({indices.size(), data.channels, data.image_size, data.image_size});
  const std::size_t n = data.image_numel();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto src = data.image(indices[b]);
    std::transform(src.begin(), src.end(), out.ptr() + b * n, [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template Tensor<float> gather_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const Dataset&, std::span<const std::size_t>);

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels.at(i));
  return out;
}

std::vector<std::string> cifar_files(CifarVariant variant, Split split) {
  if (variant == CifarVariant::Cifar100) return {split == Split::Train ? "train.bin" : "test.bin"};
  if (split == Split::Test) return {"test_batch.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
}

Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, const std::string& source) {
  const std::size_t record = cifar_record_bytes(variant);
  const std::size_t label_bytes = record - kCifarImageBytes;
  if (bytes.size() % record != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % record;
    throw IoError(source + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                  std::to_string(bytes.size() % record) + " of " + std::to_string(record) + " bytes)");
  }
  Dataset out;
  out.channels = 3;
  out.image_size = 32;
  out.classes = cifar_classes(variant);
  const std::size_t count = bytes.size() / record;
  out.labels.reserve(count);
  out.pixels.resize(count * kCifarImageBytes);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t offset = r * record;
    const std::uint8_t label = bytes[offset + label_bytes - 1];
    if (label >= out.classes) {
      throw CorruptDataError(source + ": label " + std::to_string(label) + " at byte offset " +
                             std::to_string(offset + label_bytes - 1) + " outside [0, " +
                             std::to_string(out.classes) + ")");
    }
    if (variant == CifarVariant::Cifar100 && bytes[offset] >= 20) {
      throw CorruptDataError(source + ": coarse label " + std::to_string(bytes[offset]) + " at byte offset " +
                             std::to_string(offset));
    }
    out.labels.push_back(label);
    const std::uint8_t* px = bytes.data() + offset + label_bytes;
    float* dst = out.pixels.data() + r * kCifarImageBytes;
    for (std::size_t i = 0; i < kCifarImageBytes; ++i) dst[i] = static_cast<float>(px[i]) / 255.0f;
  }
  return out;
}

Dataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split) {
  Dataset out;
  out.classes = cifar_classes(variant);
  for (const std::string& name : cifar_files(variant, split)) {
    const std::filesystem::path file = dir / name;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError(file.string() + ": cannot open");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Dataset part = parse_cifar(bytes, variant, file.string());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    out.pixels.insert(out.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  return out;
}

void write_cifar10(const Dataset& data, const std::filesystem::path& file) {
  if (data.channels != 3 || data.image_size != 32) {
    throw ConfigError("write_cifar10: CIFAR layout needs 3x32x32 images");
  }
  if (data.classes > 10) throw ConfigError("write_cifar10: at most 10 classes");
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    std::vector<char> record(cifar_record_bytes(CifarVariant::Cifar10));
    for (std::size_t i = 0; i < data.size(); ++i) {
      record[0] = static_cast<char>(data.labels[i]);
      const auto img = data.image(i);
      for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
        const float v = std::clamp(img[j], 0.0f, 1.0f);
        record[j + 1] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
      out.write(record.data(), static_cast<std::streamsize>(record.size()));
    }
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, file);
}

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synth: classes must be >= 2");
  if (samples_per_class == 0) throw ConfigError("synth: samples_per_class must be >= 1");
  if (image_size < 2) throw ConfigError("synth: image_size must be >= 2");
  if (channels == 0) throw ConfigError("synth: channels must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
}

Dataset generate_synth(const SynthSpec& spec) {
  spec.validate();
  Dataset out;
  out.channels = spec.channels;
  out.image_size = spec.image_size;
  out.classes = spec.classes;
  const std::size_t n = spec.classes * spec.samples_per_class;
  const std::size_t size = spec.image_size;
  out.labels.reserve(n);
  out.pixels.resize(n * out.image_numel());
  Rng rng(derive_seed(spec.seed, 0x5157));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % spec.classes;
    out.labels.push_back(static_cast<int>(label));
    const double angle = std::numbers::pi * static_cast<double>(label) / static_cast<double>(spec.classes);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const double amplitude = 0.2 + 0.1 * rng.uniform();
    const double brightness = 0.45 + 0.1 * rng.uniform();
    float* img = out.pixels.data() + i * out.image_numel();
    for (std::size_t c = 0; c < spec.channels; ++c) {
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double u = 2.0 * static_cast<double>(x) / static_cast<double>(size - 1) - 1.0;
          const double v = 2.0 * static_cast<double>(y) / static_cast<double>(size - 1) - 1.0;
          const double value = brightness + amplitude * (dx * u + dy * v) + spec.noise * rng.normal();
          img[(c * size + y) * size + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

}  // namespace swgrid
