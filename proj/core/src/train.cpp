#include "swgrid/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "swgrid/error.hpp"

namespace swgrid {

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0) || !(lr_min <= lr_max)) throw ConfigError("train: need 0 <= lr_min <= lr_max");
  if (t0 < 1) throw ConfigError("train: t0 must be >= 1");
  if (t_mult < 1) throw ConfigError("train: t_mult must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
}

double sgdr_lr(const TrainConfig& cfg, double epoch) {
  double start = 0.0;
  double length = static_cast<double>(cfg.t0);
  if (epoch > 0.0) {
    if (cfg.t_mult == 1) {
      start = std::floor(epoch / length) * length;
    } else {
      while (start + length <= epoch) {
        start += length;
        length *= static_cast<double>(cfg.t_mult);
      }
    }
  }
  const double phase = (epoch - start) / length;
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

std::vector<std::size_t> sgdr_cycle_ends(const TrainConfig& cfg) {
  std::vector<std::size_t> ends;
  std::size_t end = 0, length = cfg.t0;
  while (end + length <= cfg.total_epochs) {
    end += length;
    ends.push_back(end);
    length *= cfg.t_mult;
  }
  return ends;
}

template <typename T>
std::vector<ParamRef<T>> trainable_params(const Network<T>& net) {
  std::vector<ParamRef<T>> out;
  net.visit([&](const std::string& name, Tensor<T> t, ParamRole role) {
    if (is_trainable(role)) out.push_back({name, t, role == ParamRole::Weight});
  });
  return out;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(std::span<const ParamRef<T>> params) {
  OptimizerState<T> state;
  for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), T{0});
  return state;
}

template <typename T>
void sgd_momentum_step(std::span<ParamRef<T>> params, OptimizerState<T>& state, double lr, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size()) {
    throw UsageError("sgd: optimizer state tracks " + std::to_string(state.velocity.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  const T rate = static_cast<T>(lr);
  const T momentum = static_cast<T>(cfg.momentum);
  const T decay = static_cast<T>(cfg.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& w = params[k].tensor;
    std::vector<T>& v = state.velocity[k];
    if (!w.has_grad()) throw UsageError("sgd: missing gradient for " + params[k].name);
    if (v.size() != w.numel()) throw UsageError("sgd: velocity shape mismatch for " + params[k].name);
    const auto g = w.grad();
    auto values = w.data();
    const bool decayed = params[k].decay && decay != T{0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T grad = decayed ? g[i] + decay * values[i] : g[i];
      v[i] = momentum * v[i] + grad;
      values[i] -= rate * v[i];
    }
  }
}

template <typename T>
void crop_flip_image(std::span<const T> src, std::span<T> dst, std::size_t channels, std::size_t size,
                     std::size_t pad, std::size_t offset_y, std::size_t offset_x, bool flip) {
  if (offset_y > 2 * pad || offset_x > 2 * pad) throw InvalidInputError("crop offset outside padded image");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const std::size_t out_x = flip ? size - 1 - x : x;
        // Source position in the unpadded image.
        const auto sy = static_cast<std::ptrdiff_t>(y + offset_y) - static_cast<std::ptrdiff_t>(pad);
        const auto sx = static_cast<std::ptrdiff_t>(x + offset_x) - static_cast<std::ptrdiff_t>(pad);
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(size) &&
                            sx < static_cast<std::ptrdiff_t>(size);
        dst[(c * size + y) * size + out_x] = inside ? src[(c * size + sy) * size + sx] : T{0};
      }
    }
  }
}

template <typename T>
Tensor<T> augment_batch(const Tensor<T>& images, Rng& rng) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw ConfigError("augment: expected square (B,C,S,S) images, got " + shape_to_string(images.shape()));
  }
  const std::size_t batch = images.dim(0), channels = images.dim(1), size = images.dim(2);
  const std::size_t n = channels * size * size;
  Tensor<T> out(images.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t oy = rng.below(2 * kAugmentPad + 1);
    const std::size_t ox = rng.below(2 * kAugmentPad + 1);
    const bool flip = rng.coin();
    crop_flip_image<T>(images.data().subspan(b * n, n), out.data().subspan(b * n, n), channels, size, kAugmentPad,
                       oy, ox, flip);
  }
  return out;
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f", row.epoch, row.lr, row.train_loss,
                row.train_acc, row.test_loss, row.test_acc, row.wall_seconds);
  return buf;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  const std::vector<int> predicted = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return correct;
}

constexpr std::uint64_t kShuffleStream = 0x5eed5;

}  // namespace

template <typename T>
MetricsRow train_epoch(Network<T>& net, const Dataset& train, const Dataset* test, const TrainConfig& cfg,
                       OptimizerState<T>& state, std::size_t epoch_index) {
  cfg.validate();
  if (train.size() == 0) throw InvalidInputError("train_epoch: empty training set");
  const auto started = std::chrono::steady_clock::now();
  net.set_training(true);
  std::vector<ParamRef<T>> params = trainable_params(net);
  if (state.velocity.empty()) state = OptimizerState<T>::for_params(params);

  const std::vector<std::size_t> order = shuffled_indices(train.size(), derive_seed(cfg.seed, epoch_index, kShuffleStream));
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  MetricsRow row;
  row.epoch = epoch_index;
  row.lr = sgdr_lr(cfg, static_cast<double>(epoch_index));
  double loss_total = 0.0;
  std::size_t correct = 0;

  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t first = b * cfg.batch_size;
    const std::size_t count = std::min(cfg.batch_size, train.size() - first);
    const std::span<const std::size_t> idx(order.data() + first, count);
    Tensor<T> images = gather_images<T>(train, idx);
    if (cfg.augment) {
      Rng rng(derive_seed(cfg.seed, epoch_index, b + 1));
      images = augment_batch(images, rng);
    }
    const std::vector<int> labels = gather_labels(train, idx);
    const double lr = cfg.per_iteration_lr
                          ? sgdr_lr(cfg, static_cast<double>(epoch_index) +
                                             static_cast<double>(b) / static_cast<double>(batches))
                          : row.lr;

    Tape<T> tape;
    Tensor<T> logits = net.forward(images, &tape);
    Tensor<T> loss = softmax_cross_entropy<T>(logits, labels, &tape);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch_index) + ", batch " +
                            std::to_string(b) + " (lr " + std::to_string(lr) + ")");
    }
    for (auto& p : params) p.tensor.zero_grad();
    tape.backward(loss);
    sgd_momentum_step<T>(params, state, lr, cfg);
    ++row.steps;

    loss_total += loss_value * static_cast<double>(count);
    correct += count_correct(logits, labels);
  }
  row.train_loss = loss_total / static_cast<double>(train.size());
  row.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
  if (test != nullptr && test->size() > 0) {
    const EvalResult r = evaluate(net, *test);
    row.test_loss = r.loss;
    row.test_acc = r.accuracy;
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw InvalidInputError("evaluate: empty dataset");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
  const bool was_training = net.training();
  net.set_training(false);
  double loss_total = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    const Tensor<T> logits = net.forward(gather_images<T>(data, idx));
    const std::vector<int> labels = gather_labels(data, idx);
    loss_total += static_cast<double>(softmax_cross_entropy<T>(logits, labels).item()) * static_cast<double>(count);
    correct += count_correct(logits, labels);
  }
  net.set_training(was_training);
  return {loss_total / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

namespace {

template <typename T>
void check_class_counts(std::span<Network<T>* const> nets) {
  if (nets.empty()) throw ConfigError("ensemble: no models");
  for (const Network<T>* net : nets) {
    if (net->config().classes != nets.front()->config().classes) {
      throw ConfigError("ensemble: class counts differ (" + std::to_string(net->config().classes) + " vs " +
                        std::to_string(nets.front()->config().classes) + ")");
    }
  }
}

template <typename T>
void add_probs(std::span<Network<T>* const> nets, const Tensor<T>& images, Tensor<double>& mean, std::size_t row0) {
  const std::size_t classes = mean.dim(1);
  for (Network<T>* net : nets) {
    const bool was_training = net->training();
    net->set_training(false);
    const Tensor<T> probs = softmax(net->forward(images));
    net->set_training(was_training);
    for (std::size_t i = 0; i < probs.numel(); ++i) mean[row0 * classes + i] += static_cast<double>(probs[i]);
  }
}

}  // namespace

template <typename T>
EnsemblePrediction ensemble_predict(std::span<Network<T>* const> nets, const Tensor<T>& images) {
  check_class_counts(nets);
  EnsemblePrediction out;
  out.mean_probs = Tensor<double>::zeros({images.dim(0), nets.front()->config().classes});
  add_probs(nets, images, out.mean_probs, 0);
  const double inv = 1.0 / static_cast<double>(nets.size());
  for (double& p : out.mean_probs.data()) p *= inv;
  out.labels = argmax_rows(out.mean_probs);
  return out;
}

template <typename T>
EnsemblePrediction ensemble_predict(std::span<Network<T>* const> nets, const Dataset& data, std::size_t batch_size) {
  check_class_counts(nets);
  if (data.size() == 0) throw InvalidInputError("ensemble: empty dataset");
  EnsemblePrediction out;
  out.mean_probs = Tensor<double>::zeros({data.size(), nets.front()->config().classes});
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    add_probs(nets, gather_images<T>(data, idx), out.mean_probs, first);
  }
  const double inv = 1.0 / static_cast<double>(nets.size());
  for (double& p : out.mean_probs.data()) p *= inv;
  out.labels = argmax_rows(out.mean_probs);
  return out;
}

#define SWGRID_INSTANTIATE_TRAIN(T)                                                                            \
  template std::vector<ParamRef<T>> trainable_params<T>(const Network<T>&);                                   \
  template struct OptimizerState<T>;                                                                          \
  template void sgd_momentum_step<T>(std::span<ParamRef<T>>, OptimizerState<T>&, double, const TrainConfig&); \
  template void crop_flip_image<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t, std::size_t,    \
                                   std::size_t, std::size_t, bool);                                          \
  template Tensor<T> augment_batch<T>(const Tensor<T>&, Rng&);                                                \
  template MetricsRow train_epoch<T>(Network<T>&, const Dataset&, const Dataset*, const TrainConfig&,         \
                                     OptimizerState<T>&, std::size_t);                                        \
  template EvalResult evaluate<T>(Network<T>&, const Dataset&, std::size_t);                                  \
  template EnsemblePrediction ensemble_predict<T>(std::span<Network<T>* const>, const Tensor<T>&);            \
  template EnsemblePrediction ensemble_predict<T>(std::span<Network<T>* const>, const Dataset&, std::size_t);

SWGRID_INSTANTIATE_TRAIN(float)
SWGRID_INSTANTIATE_TRAIN(double)

}  // namespace swgrid
