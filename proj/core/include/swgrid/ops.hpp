#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "swgrid/tape.hpp"
#include "swgrid/tensor.hpp"

namespace swgrid {

/// Weight (out_ch, in_ch, kh, kw) plus optional bias (out_ch).
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when a batch norm follows
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }
};

/// Creates zero-initialised, grad-requiring conv parameters.
template <typename T>
ConvParams<T> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t padding,
                        bool with_bias, std::size_t stride = 1);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  /// Weight kept on the old running statistic at each update.
  T momentum = T(0.9);
  bool training = true;

  std::size_t channels() const { return gamma.numel(); }
};

/// gamma = 1, beta = 0, running mean 0, running var 1.
template <typename T>
BatchNormState<T> make_batch_norm(std::size_t channels);

struct ChannelRange {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Every op below is a pure function of its inputs (batch_norm additionally
// updates running statistics in training mode). Passing a tape records the
// op when any input requires grad.

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Window/stride average pooling over (H, W); no padding.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride, Tape<T>* tape = nullptr);

/// Mean over the full spatial extent, (B,C,H,W) -> (B,C,1,1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Elementwise arithmetic mean. Evaluated as x0 + sum(xi - x0) / k so that
/// k copies of the same tensor reproduce it exactly.
template <typename T>
Tensor<T> mean_combine(std::span<const Tensor<T>> inputs, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> channel_concat(std::span<const Tensor<T>> inputs, Tape<T>* tape = nullptr);

/// Ranges must be disjoint and lie inside the channel extent.
template <typename T>
std::vector<Tensor<T>> channel_slice(const Tensor<T>& input, std::span<const ChannelRange> ranges,
                                     Tape<T>* tape = nullptr);

/// input (B, ...) is flattened to (B, C); weight (K, C); bias (K) or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Mean over the batch of -log softmax(logits)[label]; returns shape {1}.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tape<T>* tape = nullptr);

/// Row-wise softmax of (B, K) logits. Not differentiable.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Index of the largest entry per row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& matrix);

}  // namespace swgrid
