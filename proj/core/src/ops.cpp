#include "swgrid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "gemm.hpp"

namespace swgrid {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                      shape_to_string(t.shape()));
  }
}

template <typename T>
void assert_finite([[maybe_unused]] std::span<const T> values) {
#ifndef NDEBUG
  for (T v : values) assert(std::isfinite(v));
#endif
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Lays out the receptive fields of one image as Cin*kh*kw rows of Ho*Wo
// values; consecutive rows start `ld` elements apart.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* col,
            std::size_t ld) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = col + ((c * kh + i) * kw + j) * ld;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(height) &&
                                x < static_cast<std::ptrdiff_t>(width);
            row[oy * out_w + ox] = inside ? image[(c * height + y) * width + x] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w,
                std::size_t ld, T* image) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = col + ((c * kh + i) * kw + j) * ld;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(c * height + y) * width + x] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

constexpr std::size_t kConvGroupElems = std::size_t{1} << 15;

// (B, C, rest...) viewed as batch, channels, per-channel spatial size.
struct ChannelLayout {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t spatial = 0;
};

template <typename T>
ChannelLayout channel_layout(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.rank() < 2) throw ConfigError(std::string(op) + ": expected (B, C, ...) input");
  return {t.dim(0), t.dim(1), t.numel() / (t.dim(0) * t.dim(1))};
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t padding,
                        bool with_bias, std::size_t stride) {
  if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0) {
    throw ConfigError("conv: channels, kernel and stride must be positive");
  }
  ConvParams<T> p;
  p.weight = Tensor<T>::zeros({out_ch, in_ch, kernel, kernel});
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>::zeros({out_ch});
    p.bias.set_requires_grad(true);
  }
  p.stride = stride;
  p.padding = padding;
  return p;
}

template <typename T>
BatchNormState<T> make_batch_norm(std::size_t channels) {
  if (channels == 0) throw ConfigError("batch_norm: zero channels");
  BatchNormState<T> s;
  s.gamma = Tensor<T>::ones({channels});
  s.gamma.set_requires_grad(true);
  s.beta = Tensor<T>::zeros({channels});
  s.beta.set_requires_grad(true);
  s.running_mean = Tensor<T>::zeros({channels});
  s.running_var = Tensor<T>::ones({channels});
  return s;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params, Tape<T>* tape) {
  require_rank(input, 4, "conv2d");
  require_rank(params.weight, 4, "conv2d weight");
  const std::size_t batch = input.dim(0), cin = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t cout = params.out_channels(), kh = params.kernel_h(), kw = params.kernel_w();
  const std::size_t stride = params.stride, pad = params.padding;
  if (cin != params.in_channels()) {
    throw ConfigError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                      std::to_string(params.in_channels()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (height + 2 * pad < kh || width + 2 * pad < kw) {
    throw ConfigError("conv2d: kernel larger than padded input " + shape_to_string(input.shape()));
  }
  if (params.bias.defined() && params.bias.numel() != cout) throw ConfigError("conv2d: bias size mismatch");
  const std::size_t out_h = (height + 2 * pad - kh) / stride + 1;
  const std::size_t out_w = (width + 2 * pad - kw) / stride + 1;
  const std::size_t kdim = cin * kh * kw;
  const std::size_t pixels = out_h * out_w;

  // Images are processed in groups whose column matrix stays cache-sized.
  const std::size_t group = std::clamp<std::size_t>(kConvGroupElems / (std::max(kdim, cout) * pixels), 1, batch);
  const std::size_t image_numel = cin * height * width;

  Tensor<T> out = Tensor<T>::zeros({batch, cout, out_h, out_w});
  // im2col writes every element, so the scratch buffers start uninitialised.
  const auto col = std::make_unique_for_overwrite<T[]>(kdim * group * pixels);
  const auto acc = std::make_unique_for_overwrite<T[]>(cout * group * pixels);
  const T* x = input.ptr();
  const T* w = params.weight.ptr();
  T* y = out.ptr();
  for (std::size_t b0 = 0; b0 < batch; b0 += group) {
    const std::size_t g = std::min(group, batch - b0);
    const std::size_t ld = g * pixels;
    for (std::size_t b = 0; b < g; ++b) {
      im2col(x + (b0 + b) * image_numel, cin, height, width, kh, kw, stride, pad, out_h, out_w,
             col.get() + b * pixels, ld);
    }
    std::fill_n(acc.get(), cout * ld, T{0});
    detail::gemm_nn(cout, ld, kdim, w, col.get(), acc.get());
    for (std::size_t b = 0; b < g; ++b) {
      T* yb = y + (b0 + b) * cout * pixels;
      for (std::size_t o = 0; o < cout; ++o) {
        const T bo = params.bias.defined() ? params.bias[o] : T{0};
        const T* src = acc.get() + o * ld + b * pixels;
        for (std::size_t p = 0; p < pixels; ++p) yb[o * pixels + p] = params.bias.defined() ? src[p] + bo : src[p];
      }
    }
  }
  assert_finite<T>(out.data());

  if (Tape<T>::wants(tape, {&input, &params.weight, &params.bias})) {
    tape->record(out, [=, weight = params.weight, bias = params.bias]() mutable {
      Tensor<T> in = input;
      Tensor<T> res = out;
      const T* gy = res.grad().data();
      std::vector<T> colbuf(kdim * group * pixels);
      std::vector<T> gybuf(cout * group * pixels);
      for (std::size_t b0 = 0; b0 < batch; b0 += group) {
        const std::size_t g = std::min(group, batch - b0);
        const std::size_t ld = g * pixels;
        for (std::size_t b = 0; b < g; ++b) {
          const T* gyb = gy + (b0 + b) * cout * pixels;
          for (std::size_t o = 0; o < cout; ++o) {
            std::copy_n(gyb + o * pixels, pixels, gybuf.data() + o * ld + b * pixels);
          }
        }
        if (weight.requires_grad()) {
          for (std::size_t b = 0; b < g; ++b) {
            im2col(in.ptr() + (b0 + b) * image_numel, cin, height, width, kh, kw, stride, pad, out_h, out_w,
                   colbuf.data() + b * pixels, ld);
          }
          detail::gemm_nt(cout, kdim, ld, gybuf.data(), colbuf.data(), weight.grad().data());
        }
        if (in.requires_grad()) {
          std::fill(colbuf.begin(), colbuf.end(), T{0});
          detail::gemm_tn(kdim, ld, cout, weight.ptr(), gybuf.data(), colbuf.data());
          for (std::size_t b = 0; b < g; ++b) {
            col2im_add(colbuf.data() + b * pixels, cin, height, width, kh, kw, stride, pad, out_h, out_w, ld,
                       in.grad().data() + (b0 + b) * image_numel);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t o = 0; o < cout; ++o) {
            T sum{0};
            for (std::size_t p = 0; p < ld; ++p) sum += gybuf[o * ld + p];
            gb[o] += sum;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state, Tape<T>* tape) {
  const ChannelLayout layout = channel_layout(input, "batch_norm");
  const std::size_t channels = layout.channels, spatial = layout.spatial, batch = layout.batch;
  if (channels != state.channels()) {
    throw ConfigError("batch_norm: input has " + std::to_string(channels) + " channels, state has " +
                      std::to_string(state.channels()));
  }
  if (!(state.eps > T{0})) throw ConfigError("batch_norm: eps must be positive");
  const std::size_t count = batch * spatial;
  if (count == 0) throw InvalidInputError("batch_norm: no elements per channel");

  Tensor<T> out(input.shape());
  const T* x = input.ptr();
  T* y = out.ptr();
  const T* gamma = state.gamma.ptr();
  const T* beta = state.beta.ptr();

  auto at = [channels, spatial](std::size_t b, std::size_t c) { return (b * channels + c) * spatial; };

  if (!state.training) {
    std::vector<T> inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      inv_std[c] = T{1} / std::sqrt(state.running_var[c] + state.eps);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        const T mean = state.running_mean[c];
        const T g = gamma[c] * inv_std[c];
        for (std::size_t s = 0; s < spatial; ++s) y[at(b, c) + s] = (x[at(b, c) + s] - mean) * g + beta[c];
      }
    }
    if (Tape<T>::wants(tape, {&input, &state.gamma, &state.beta})) {
      tape->record(out, [=, gamma_t = state.gamma, beta_t = state.beta, mean_t = state.running_mean]() mutable {
        Tensor<T> in = input;
        Tensor<T> res = out;
        const T* gy = res.grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const T mean = mean_t[c];
            T dgamma{0}, dbeta{0};
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t i = at(b, c) + s;
              dgamma += gy[i] * (in[i] - mean) * inv_std[c];
              dbeta += gy[i];
            }
            if (in.requires_grad()) {
              auto gx = in.grad();
              const T g = gamma_t[c] * inv_std[c];
              for (std::size_t s = 0; s < spatial; ++s) gx[at(b, c) + s] += gy[at(b, c) + s] * g;
            }
            if (gamma_t.requires_grad()) gamma_t.grad()[c] += dgamma;
            if (beta_t.requires_grad()) beta_t.grad()[c] += dbeta;
          }
        }
      });
    }
    assert_finite<T>(out.data());
    return out;
  }

  auto normalized = std::make_shared<std::vector<T>>(input.numel());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < spatial; ++s) total += x[at(b, c) + s];
    const double mean = total / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = x[at(b, c) + s] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
    (*inv_std)[c] = istd;
    const T m = static_cast<T>(mean);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = at(b, c) + s;
        const T xh = (x[i] - m) * istd;
        (*normalized)[i] = xh;
        y[i] = gamma[c] * xh + beta[c];
      }
    }
    const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
    state.running_mean[c] = state.momentum * state.running_mean[c] + (T{1} - state.momentum) * m;
    state.running_var[c] =
        state.momentum * state.running_var[c] + (T{1} - state.momentum) * static_cast<T>(unbiased);
  }
  assert_finite<T>(out.data());

  if (Tape<T>::wants(tape, {&input, &state.gamma, &state.beta})) {
    tape->record(out, [=, gamma_t = state.gamma, beta_t = state.beta]() mutable {
      Tensor<T> in = input;
      Tensor<T> res = out;
      const T* gy = res.grad().data();
      const std::vector<T>& xh = *normalized;
      const T inv_count = T{1} / static_cast<T>(count);
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_dy{0}, sum_dy_xh{0};
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t i = at(b, c) + s;
            sum_dy += gy[i];
            sum_dy_xh += gy[i] * xh[i];
          }
        }
        if (gamma_t.requires_grad()) gamma_t.grad()[c] += sum_dy_xh;
        if (beta_t.requires_grad()) beta_t.grad()[c] += sum_dy;
        if (in.requires_grad()) {
          auto gx = in.grad();
          const T scale_c = gamma_t[c] * (*inv_std)[c];
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t i = at(b, c) + s;
              gx[i] += scale_c * (gy[i] - inv_count * sum_dy - xh[i] * inv_count * sum_dy_xh);
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  if (Tape<T>::wants(tape, {&input})) {
    tape->record(out, [input = input, out]() mutable {
      const auto gy = out.grad();
      auto gx = input.grad();
      const auto x = input.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (x[i] > T{0}) gx[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride, Tape<T>* tape) {
  require_rank(input, 4, "avg_pool2d");
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (window == 0 || stride == 0) throw ConfigError("avg_pool2d: window and stride must be positive");
  if (window > height || window > width) {
    throw ConfigError("avg_pool2d: window " + std::to_string(window) + " exceeds input " +
                      shape_to_string(input.shape()));
  }
  if (window == stride && (height % stride != 0 || width % stride != 0)) {
    throw ConfigError("avg_pool2d: extent not divisible by stride " + std::to_string(stride));
  }
  const std::size_t out_h = (height - window) / stride + 1;
  const std::size_t out_w = (width - window) / stride + 1;
  const T inv_area = T{1} / static_cast<T>(window * window);
  Tensor<T> out = Tensor<T>::zeros({batch, channels, out_h, out_w});
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const T* xp = x + plane * height * width;
    T* yp = y + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        T acc{0};
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) acc += xp[(oy * stride + i) * width + ox * stride + j];
        yp[oy * out_w + ox] = acc * inv_area;
      }
    }
  }
  if (Tape<T>::wants(tape, {&input})) {
    tape->record(out, [=]() mutable {
      Tensor<T> in = input;
      Tensor<T> res = out;
      const T* gy = res.grad().data();
      T* gx = in.grad().data();
      for (std::size_t plane = 0; plane < batch * channels; ++plane) {
        T* gp = gx + plane * height * width;
        const T* gyp = gy + plane * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const T g = gyp[oy * out_w + ox] * inv_area;
            for (std::size_t i = 0; i < window; ++i)
              for (std::size_t j = 0; j < window; ++j) gp[(oy * stride + i) * width + ox * stride + j] += g;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t area = input.dim(2) * input.dim(3);
  const T inv_area = T{1} / static_cast<T>(area);
  Tensor<T> out = Tensor<T>::zeros({input.dim(0), input.dim(1), 1, 1});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc{0};
    for (std::size_t i = 0; i < area; ++i) acc += input[p * area + i];
    out[p] = acc * inv_area;
  }
  if (Tape<T>::wants(tape, {&input})) {
    tape->record(out, [=]() mutable {
      Tensor<T> in = input;
      Tensor<T> res = out;
      const auto gy = res.grad();
      auto gx = in.grad();
      for (std::size_t p = 0; p < planes; ++p) {
        const T g = gy[p] * inv_area;
        for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_combine(std::span<const Tensor<T>> inputs, Tape<T>* tape) {
  if (inputs.empty()) throw InvalidInputError("mean_combine: empty input list");
  const Shape& shape = inputs[0].shape();
  for (const auto& t : inputs) {
    if (t.shape() != shape) {
      throw InvalidInputError("mean_combine: shape " + shape_to_string(t.shape()) + " differs from " +
                              shape_to_string(shape));
    }
  }
  const std::size_t n = inputs[0].numel();
  const std::size_t k = inputs.size();
  Tensor<T> out = inputs[0].clone();
  if (k > 1) {
    std::vector<T> delta(n, T{0});
    const auto anchor = inputs[0].data();
    for (std::size_t t = 1; t < k; ++t) {
      const auto xs = inputs[t].data();
      for (std::size_t i = 0; i < n; ++i) delta[i] += xs[i] - anchor[i];
    }
    const T kk = static_cast<T>(k);
    auto y = out.data();
    for (std::size_t i = 0; i < n; ++i) y[i] += delta[i] / kk;
  }
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    std::vector<Tensor<T>> sources(inputs.begin(), inputs.end());
    tape->record(out, [sources, out, k]() mutable {
      const auto gy = out.grad();
      const T inv = T{1} / static_cast<T>(k);
      for (auto& src : sources) {
        if (!src.requires_grad()) continue;
        auto gx = src.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * inv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_concat(std::span<const Tensor<T>> inputs, Tape<T>* tape) {
  if (inputs.empty()) throw InvalidInputError("channel_concat: empty input list");
  const ChannelLayout first = channel_layout(inputs[0], "channel_concat");
  std::size_t total = 0;
  for (const auto& t : inputs) {
    const ChannelLayout l = channel_layout(t, "channel_concat");
    if (l.batch != first.batch || l.spatial != first.spatial || t.rank() != inputs[0].rank()) {
      throw InvalidInputError("channel_concat: " + shape_to_string(t.shape()) + " incompatible with " +
                              shape_to_string(inputs[0].shape()));
    }
    total += l.channels;
  }
  Shape shape = inputs[0].shape();
  shape[1] = total;
  Tensor<T> out(shape);
  const std::size_t batch = first.batch, spatial = first.spatial;
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t c = t.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(t.ptr() + b * c * spatial, c * spatial, out.ptr() + (b * total + offset) * spatial);
    }
    offset += c;
  }
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    std::vector<Tensor<T>> sources(inputs.begin(), inputs.end());
    tape->record(out, [sources, out, batch, spatial, total]() mutable {
      const auto gy = out.grad();
      std::size_t offset = 0;
      for (auto& src : sources) {
        const std::size_t c = src.dim(1);
        if (src.requires_grad()) {
          auto gx = src.grad();
          for (std::size_t b = 0; b < batch; ++b) {
            const T* from = gy.data() + (b * total + offset) * spatial;
            T* to = gx.data() + b * c * spatial;
            for (std::size_t i = 0; i < c * spatial; ++i) to[i] += from[i];
          }
        }
        offset += c;
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> channel_slice(const Tensor<T>& input, std::span<const ChannelRange> ranges,
                                     Tape<T>* tape) {
  const ChannelLayout layout = channel_layout(input, "channel_slice");
  std::vector<ChannelRange> sorted(ranges.begin(), ranges.end());
  std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a.start < b.start; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].length == 0 || sorted[i].start + sorted[i].length > layout.channels) {
      throw ConfigError("channel_slice: range [" + std::to_string(sorted[i].start) + ", +" +
                        std::to_string(sorted[i].length) + ") outside " + std::to_string(layout.channels) +
                        " channels");
    }
    if (i > 0 && sorted[i - 1].start + sorted[i - 1].length > sorted[i].start) {
      throw ConfigError("channel_slice: overlapping ranges");
    }
  }
  const std::size_t batch = layout.batch, spatial = layout.spatial, total = layout.channels;
  std::vector<Tensor<T>> outs;
  outs.reserve(ranges.size());
  for (const ChannelRange& r : ranges) {
    Shape shape = input.shape();
    shape[1] = r.length;
    Tensor<T> out(shape);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(input.ptr() + (b * total + r.start) * spatial, r.length * spatial,
                  out.ptr() + b * r.length * spatial);
    }
    if (Tape<T>::wants(tape, {&input})) {
      tape->record(out, [input = input, out, r, batch, spatial, total]() mutable {
        const auto gy = out.grad();
        auto gx = input.grad();
        for (std::size_t b = 0; b < batch; ++b) {
          const T* from = gy.data() + b * r.length * spatial;
          T* to = gx.data() + (b * total + r.start) * spatial;
          for (std::size_t i = 0; i < r.length * spatial; ++i) to[i] += from[i];
        }
      });
    }
    outs.push_back(std::move(out));
  }
  return outs;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape) {
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = input.dim(0);
  const std::size_t features = input.numel() / batch;
  const std::size_t classes = weight.dim(0);
  if (weight.dim(1) != features) {
    throw ConfigError("linear: input has " + std::to_string(features) + " features, weight expects " +
                      std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != classes) throw ConfigError("linear: bias size mismatch");
  Tensor<T> out = Tensor<T>::zeros({batch, classes});
  detail::gemm_nt(batch, classes, features, input.ptr(), weight.ptr(), out.ptr());
  if (bias.defined()) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < classes; ++k) out[b * classes + k] += bias[k];
  }
  assert_finite<T>(out.data());
  if (Tape<T>::wants(tape, {&input, &weight, &bias})) {
    tape->record(out, [=]() mutable {
      Tensor<T> in = input, w = weight, bs = bias, res = out;
      const T* gy = res.grad().data();
      if (in.requires_grad()) detail::gemm_nn(batch, features, classes, gy, w.ptr(), in.grad().data());
      if (w.requires_grad()) detail::gemm_tn(classes, features, batch, gy, in.ptr(), w.grad().data());
      if (bs.defined() && bs.requires_grad()) {
        auto gb = bs.grad();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t k = 0; k < classes; ++k) gb[k] += gy[b * classes + k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape()) {
    throw ConfigError("add: shape " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  if (Tape<T>::wants(tape, {&a, &b})) {
    tape->record(out, [a = a, b = b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) accumulate<T>(a.grad(), gy);
      if (b.requires_grad()) accumulate<T>(b.grad(), gy);
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = input[i] * factor;
  if (Tape<T>::wants(tape, {&input})) {
    tape->record(out, [input = input, out, factor]() mutable {
      const auto gy = out.grad();
      auto gx = input.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape) {
  T acc{0};
  for (T v : input.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (Tape<T>::wants(tape, {&input})) {
    tape->record(out, [input = input, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : input.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.ptr() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T total{0};
    for (std::size_t k = 0; k < classes; ++k) total += out[b * classes + k] = std::exp(row[k] - peak);
    for (std::size_t k = 0; k < classes; ++k) out[b * classes + k] /= total;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tape<T>* tape) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw InvalidInputError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                            std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InvalidInputError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs = softmax(logits);
  T loss{0};
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.ptr() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T total{0};
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(row[k] - peak);
    loss += peak + std::log(total) - row[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(batch));
  if (Tape<T>::wants(tape, {&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    tape->record(out, [logits = logits, out, probs, owned, batch, classes]() mutable {
      const T g = out.grad()[0] / static_cast<T>(batch);
      auto gx = logits.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < classes; ++k) {
          const T onehot = static_cast<std::size_t>(owned[b]) == k ? T{1} : T{0};
          gx[b * classes + k] += g * (probs[b * classes + k] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& matrix) {
  require_rank(matrix, 2, "argmax_rows");
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = matrix.ptr() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

#define SWGRID_INSTANTIATE_OPS(T)                                                                             \
  template ConvParams<T> make_conv<T>(std::size_t, std::size_t, std::size_t, std::size_t, bool, std::size_t); \
  template BatchNormState<T> make_batch_norm<T>(std::size_t);                                                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&, Tape<T>*);                              \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, BatchNormState<T>&, Tape<T>*);                            \
  template Tensor<T> relu<T>(const Tensor<T>&, Tape<T>*);                                                      \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, std::size_t, std::size_t, Tape<T>*);                      \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&, Tape<T>*);                                           \
  template Tensor<T> mean_combine<T>(std::span<const Tensor<T>>, Tape<T>*);                                    \
  template Tensor<T> channel_concat<T>(std::span<const Tensor<T>>, Tape<T>*);                                  \
  template std::vector<Tensor<T>> channel_slice<T>(const Tensor<T>&, std::span<const ChannelRange>, Tape<T>*); \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);                \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> scale<T>(const Tensor<T>&, T, Tape<T>*);                                                  \
  template Tensor<T> sum<T>(const Tensor<T>&, Tape<T>*);                                                       \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>, Tape<T>*);               \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                             \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);

SWGRID_INSTANTIATE_OPS(float)
SWGRID_INSTANTIATE_OPS(double)

}  // namespace swgrid
