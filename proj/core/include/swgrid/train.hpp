#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "swgrid/data.hpp"
#include "swgrid/model.hpp"
#include "swgrid/random.hpp"

namespace swgrid {

struct TrainConfig {
  double lr_max = 0.2;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
  std::size_t t0 = 10;
  std::size_t t_mult = 2;
  std::size_t total_epochs = 630;
  std::uint64_t seed = 1;
  bool augment = true;
  /// Anneal within an epoch instead of holding the epoch's rate.
  bool per_iteration_lr = false;

  void validate() const;
};

/// Cosine annealing with warm restarts. Cycle i has length t0 * t_mult^i.
double sgdr_lr(const TrainConfig& cfg, double epoch);

/// Epochs at which a cycle ends, up to and including total_epochs.
std::vector<std::size_t> sgdr_cycle_ends(const TrainConfig& cfg);

/// Trainable tensor plus whether weight decay applies to it.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;
};

/// Trainable tensors of `net` in visit order; decay only on conv/linear weights.
template <typename T>
std::vector<ParamRef<T>> trainable_params(const Network<T>& net);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> velocity;

  static OptimizerState for_params(std::span<const ParamRef<T>> params);
};

/// g' = g + wd * w (decayed tensors only); v = m * v + g'; w -= lr * v.
/// Throws UsageError when a gradient is missing or the state does not match.
template <typename T>
void sgd_momentum_step(std::span<ParamRef<T>> params, OptimizerState<T>& state, double lr, const TrainConfig& cfg);

/// Copies one (C, S, S) image through zero padding of `pad` and an S x S crop
/// starting at (offset_y, offset_x) of the padded image, optionally mirrored.
template <typename T>
void crop_flip_image(std::span<const T> src, std::span<T> dst, std::size_t channels, std::size_t size,
                     std::size_t pad, std::size_t offset_y, std::size_t offset_x, bool flip);

inline constexpr std::size_t kAugmentPad = 4;

/// Pad-4 random crop plus horizontal flip with probability 0.5, per image.
template <typename T>
Tensor<T> augment_batch(const Tensor<T>& images, Rng& rng);

struct MetricsRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
  /// Optimizer steps taken in the epoch (not part of the CSV).
  std::size_t steps = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,test_loss,test_acc,wall_seconds";
std::string format_metrics_row(const MetricsRow& row);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// One pass over `train` in a seeded shuffled order. The last partial batch
/// is kept. Throws DivergenceError on a non-finite loss. When `test` is
/// given it is evaluated at the end of the epoch.
template <typename T>
MetricsRow train_epoch(Network<T>& net, const Dataset& train, const Dataset* test, const TrainConfig& cfg,
                       OptimizerState<T>& state, std::size_t epoch_index);

/// Inference-mode loss and accuracy; restores the previous mode. Argmax ties
/// resolve to the lowest class index.
template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t batch_size = 256);

struct EnsemblePrediction {
  std::vector<int> labels;
  /// (B, classes) mean of per-model softmax probabilities.
  Tensor<double> mean_probs;
};

/// Averages softmax probabilities over models; throws ConfigError when class
/// counts differ.
template <typename T>
EnsemblePrediction ensemble_predict(std::span<Network<T>* const> nets, const Tensor<T>& images);

/// Same as above over an entire dataset, batching the forward passes.
template <typename T>
EnsemblePrediction ensemble_predict(std::span<Network<T>* const> nets, const Dataset& data,
                                    std::size_t batch_size = 256);

}  // namespace swgrid
