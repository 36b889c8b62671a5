#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "lmtcnn/tensor.hpp"

namespace lmtcnn {

struct KernelLargerThanInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct WindowLargerThanInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InvalidRate : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Spatial padding policies.
///
/// kValid: no padding, output extent (in - k)/s + 1; the kernel must fit.
/// kSame:  zero padding split evenly before/after, output extent ceil(in/s).
///         At stride 1 the output has the input's size and odd kernels are
///         centered, so a center-tap identity kernel reproduces its input.
/// kCeil:  pooling only. Output extent ceil((in - k)/s) + 1; windows may run
///         past the bottom/right edge and the overhang never wins the max.
///         Windows always start inside the input.
enum class Padding { kValid, kSame, kCeil };

inline int conv_output_extent(int in, int kernel, int stride, Padding pad) {
  switch (pad) {
    case Padding::kValid:
      if (kernel > in)
        throw KernelLargerThanInput("valid conv: kernel " + std::to_string(kernel) +
                                    " exceeds input " + std::to_string(in));
      return (in - kernel) / stride + 1;
    case Padding::kSame:
      return (in + stride - 1) / stride;
    case Padding::kCeil:
      break;
  }
  throw std::invalid_argument("conv padding must be valid or same");
}

inline int pool_output_extent(int in, int window, int stride, Padding pad) {
  if (pad == Padding::kValid) {
    if (window > in)
      throw WindowLargerThanInput("valid pool: window " + std::to_string(window) +
                                  " exceeds input " + std::to_string(in));
    return (in - window) / stride + 1;
  }
  if (pad != Padding::kCeil) throw std::invalid_argument("pool padding must be valid or ceil");
  int out = in >= window ? (in - window + stride - 1) / stride + 1 : 1;
  while (out > 1 && (out - 1) * stride >= in) --out;
  return out;
}

/// Zero padding placed before the first window in same mode.
inline int same_pad_before(int in, int out, int kernel, int stride) {
  int total = std::max((out - 1) * stride + kernel - in, 0);
  return total / 2;
}

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  Padding padding = Padding::kValid;
  int channel_multiplier = 1;  // depthwise only
};

struct LrnSpec {
  int radius = 5;
  double bias = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;
};

namespace detail {

template <typename T>
void require_hwc(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3) throw ShapeMismatch(std::string(what) + ": expected a rank-3 tensor");
}

}  // namespace detail

/// General 2-D convolution. input [H,W,CI], kernel [K,K,CI,CO], bias [CO].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         const ConvSpec& spec) {
  detail::require_hwc(input, "conv2d input");
  if (kernel.rank() != 4 || kernel.extent(0) != spec.kernel || kernel.extent(1) != spec.kernel)
    throw ShapeMismatch("conv2d: kernel tensor disagrees with spec kernel size");
  const int h = input.extent(0), w = input.extent(1), ci = input.extent(2);
  const int k = spec.kernel, co = kernel.extent(3);
  if (kernel.extent(2) != ci) throw ShapeMismatch("conv2d: kernel input channels != input channels");
  if (bias.rank() != 1 || bias.extent(0) != co) throw ShapeMismatch("conv2d: bias length != output channels");

  const int ho = conv_output_extent(h, k, spec.stride, spec.padding);
  const int wo = conv_output_extent(w, k, spec.stride, spec.padding);
  const int py = spec.padding == Padding::kSame ? same_pad_before(h, ho, k, spec.stride) : 0;
  const int px = spec.padding == Padding::kSame ? same_pad_before(w, wo, k, spec.stride) : 0;

  Tensor<T> out({ho, wo, co});
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      T* acc = &out.data[(static_cast<std::size_t>(y) * wo + x) * co];
      for (int c = 0; c < co; ++c) acc[c] = bias.data[c];
      for (int dy = 0; dy < k; ++dy) {
        const int iy = y * spec.stride + dy - py;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = x * spec.stride + dx - px;
          if (ix < 0 || ix >= w) continue;
          const T* in_px = &input.data[(static_cast<std::size_t>(iy) * w + ix) * ci];
          const T* krow = &kernel.data[((static_cast<std::size_t>(dy) * k + dx) * ci) * co];
          for (int c = 0; c < ci; ++c) {
            const T v = in_px[c];
            const T* kc = krow + static_cast<std::size_t>(c) * co;
            for (int o = 0; o < co; ++o) acc[o] += v * kc[o];
          }
        }
      }
    }
  }
  return out;
}

/// Depthwise convolution: one K x K filter per (input channel, multiplier)
/// pair, no mixing across channels. kernel [K,K,C*m], bias [C*m]; output
/// channel c*m+j comes from input channel c alone.
template <typename T>
Tensor<T> depthwise_conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                                   const Tensor<T>& bias, const ConvSpec& spec) {
  detail::require_hwc(input, "depthwise input");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int k = spec.kernel, m = spec.channel_multiplier;
  const int cm = c * m;
  if (kernel.rank() != 3 || kernel.extent(0) != k || kernel.extent(1) != k || kernel.extent(2) != cm)
    throw ShapeMismatch("depthwise: kernel must be [K,K,C*multiplier]");
  if (bias.rank() != 1 || bias.extent(0) != cm) throw ShapeMismatch("depthwise: bias length != C*multiplier");

  const int ho = conv_output_extent(h, k, spec.stride, spec.padding);
  const int wo = conv_output_extent(w, k, spec.stride, spec.padding);
  const int py = spec.padding == Padding::kSame ? same_pad_before(h, ho, k, spec.stride) : 0;
  const int px = spec.padding == Padding::kSame ? same_pad_before(w, wo, k, spec.stride) : 0;

  Tensor<T> out({ho, wo, cm});
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      T* acc = &out.data[(static_cast<std::size_t>(y) * wo + x) * cm];
      for (int q = 0; q < cm; ++q) acc[q] = bias.data[q];
      for (int dy = 0; dy < k; ++dy) {
        const int iy = y * spec.stride + dy - py;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = x * spec.stride + dx - px;
          if (ix < 0 || ix >= w) continue;
          const T* in_px = &input.data[(static_cast<std::size_t>(iy) * w + ix) * c];
          const T* krow = &kernel.data[(static_cast<std::size_t>(dy) * k + dx) * cm];
          for (int cc = 0; cc < c; ++cc)
            for (int j = 0; j < m; ++j) acc[cc * m + j] += in_px[cc] * krow[cc * m + j];
        }
      }
    }
  }
  return out;
}

/// 1x1 convolution: a per-pixel matrix product mixing channels.
/// input [H,W,CI], kernel [CI,CO], bias [CO].
template <typename T>
Tensor<T> pointwise_conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                                   const Tensor<T>& bias) {
  detail::require_hwc(input, "pointwise input");
  const int h = input.extent(0), w = input.extent(1), ci = input.extent(2);
  if (kernel.rank() != 2 || kernel.extent(0) != ci)
    throw ShapeMismatch("pointwise: kernel must be [CI,CO] with CI matching input");
  const int co = kernel.extent(1);
  if (bias.rank() != 1 || bias.extent(0) != co) throw ShapeMismatch("pointwise: bias length != CO");

  Tensor<T> out({h, w, co});
  for (int p = 0; p < h * w; ++p) {
    const T* in_px = &input.data[static_cast<std::size_t>(p) * ci];
    T* acc = &out.data[static_cast<std::size_t>(p) * co];
    for (int o = 0; o < co; ++o) acc[o] = bias.data[o];
    for (int c = 0; c < ci; ++c) {
      const T v = in_px[c];
      const T* krow = &kernel.data[static_cast<std::size_t>(c) * co];
      for (int o = 0; o < co; ++o) acc[o] += v * krow[o];
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape);
  for (std::size_t i = 0; i < input.numel(); ++i) out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  return out;
}

/// Per-channel max over square windows. In ceil mode the window may overhang
/// the bottom/right edge; overhanging cells are ignored.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window, int stride, Padding pad) {
  detail::require_hwc(input, "maxpool input");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int ho = pool_output_extent(h, window, stride, pad);
  const int wo = pool_output_extent(w, window, stride, pad);

  Tensor<T> out({ho, wo, c});
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      T* best = &out.data[(static_cast<std::size_t>(y) * wo + x) * c];
      for (int cc = 0; cc < c; ++cc) best[cc] = -std::numeric_limits<T>::infinity();
      const int y1 = std::min(y * stride + window, h);
      const int x1 = std::min(x * stride + window, w);
      for (int iy = y * stride; iy < y1; ++iy) {
        for (int ix = x * stride; ix < x1; ++ix) {
          const T* in_px = &input.data[(static_cast<std::size_t>(iy) * w + ix) * c];
          for (int cc = 0; cc < c; ++cc) best[cc] = std::max(best[cc], in_px[cc]);
        }
      }
    }
  }
  return out;
}

/// Local response normalization across channels:
///   out[y,x,c] = in[y,x,c] / (k + alpha * sum_{|c'-c| <= r} in[y,x,c']^2)^beta
template <typename T>
Tensor<T> lrn(const Tensor<T>& input, const LrnSpec& spec) {
  detail::require_hwc(input, "lrn input");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  Tensor<T> out(input.shape);
  std::vector<T> prefix(static_cast<std::size_t>(c) + 1);
  for (int p = 0; p < h * w; ++p) {
    const T* in_px = &input.data[static_cast<std::size_t>(p) * c];
    T* out_px = &out.data[static_cast<std::size_t>(p) * c];
    prefix[0] = T(0);
    for (int cc = 0; cc < c; ++cc) prefix[cc + 1] = prefix[cc] + in_px[cc] * in_px[cc];
    for (int cc = 0; cc < c; ++cc) {
      const int lo = std::max(cc - spec.radius, 0);
      const int hi = std::min(cc + spec.radius, c - 1);
      const T sumsq = prefix[hi + 1] - prefix[lo];
      const T denom = static_cast<T>(spec.bias) + static_cast<T>(spec.alpha) * sumsq;
      out_px[cc] = in_px[cc] / std::pow(denom, static_cast<T>(spec.beta));
    }
  }
  return out;
}

/// out = input^T * weights + bias. input [N], weights [N,M], bias [M].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() != 1 || weights.rank() != 2 || weights.extent(0) != input.extent(0))
    throw ShapeMismatch("fully_connected: weights must be [N,M] with N = input length");
  const int n = input.extent(0), m = weights.extent(1);
  if (bias.rank() != 1 || bias.extent(0) != m) throw ShapeMismatch("fully_connected: bias length != M");
  Tensor<T> out({m});
  for (int j = 0; j < m; ++j) out.data[j] = bias.data[j];
  for (int i = 0; i < n; ++i) {
    const T v = input.data[i];
    const T* wrow = &weights.data[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) out.data[j] += v * wrow[j];
  }
  return out;
}

/// Numerically stable softmax; entries sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.extent(0) < 1) throw ShapeMismatch("softmax: expected a non-empty vector");
  Tensor<T> out(logits.shape);
  const T mx = *std::max_element(logits.data.begin(), logits.data.end());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    out.data[i] = std::exp(logits.data[i] - mx);
    sum += out.data[i];
  }
  for (auto& v : out.data) v /= sum;
  return out;
}

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  /// Per-entry multiplier applied to the input: 0 for dropped entries,
  /// 1/(1-rate) for survivors. All ones in inference mode.
  Tensor<T> mask;
};

/// Inverted dropout: inference mode is the identity.
template <typename T>
DropoutResult<T> dropout_with_mask(const Tensor<T>& input, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidRate("dropout rate must lie in [0, 1)");
  DropoutResult<T> r{Tensor<T>(input.shape), Tensor<T>(input.shape)};
  if (!training || rate == 0.0) {
    r.output = input;
    std::fill(r.mask.data.begin(), r.mask.data.end(), T(1));
    return r;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T m = rng.next_double() < rate ? T(0) : scale;
    r.mask.data[i] = m;
    r.output.data[i] = input.data[i] * m;
  }
  return r;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, bool training, Rng& rng) {
  return dropout_with_mask(input, rate, training, rng).output;
}

// ---------------------------------------------------------------------------
// Backward passes. Each returns the exact analytical gradients of the forward
// definition above, given the forward inputs and the upstream gradient.
// ---------------------------------------------------------------------------

template <typename T>
struct LayerGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvSpec& spec,
                              const Tensor<T>& grad_out, bool need_input_grad = true) {
  const int h = input.extent(0), w = input.extent(1), ci = input.extent(2);
  const int k = spec.kernel, co = kernel.extent(3);
  const int ho = grad_out.extent(0), wo = grad_out.extent(1);
  if (grad_out.rank() != 3 || grad_out.extent(2) != co ||
      ho != conv_output_extent(h, k, spec.stride, spec.padding) ||
      wo != conv_output_extent(w, k, spec.stride, spec.padding))
    throw ShapeMismatch("conv2d_backward: upstream gradient shape mismatch");
  const int py = spec.padding == Padding::kSame ? same_pad_before(h, ho, k, spec.stride) : 0;
  const int px = spec.padding == Padding::kSame ? same_pad_before(w, wo, k, spec.stride) : 0;

  LayerGrads<T> g;
  if (need_input_grad) g.input = Tensor<T>(input.shape);
  g.weights = Tensor<T>(kernel.shape);
  g.bias = Tensor<T>({co});

  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      const T* gout = &grad_out.data[(static_cast<std::size_t>(y) * wo + x) * co];
      for (int o = 0; o < co; ++o) g.bias.data[o] += gout[o];
      for (int dy = 0; dy < k; ++dy) {
        const int iy = y * spec.stride + dy - py;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = x * spec.stride + dx - px;
          if (ix < 0 || ix >= w) continue;
          const std::size_t in_off = (static_cast<std::size_t>(iy) * w + ix) * ci;
          const std::size_t k_off = ((static_cast<std::size_t>(dy) * k + dx) * ci) * co;
          for (int c = 0; c < ci; ++c) {
            const T v = input.data[in_off + c];
            const T* krow = &kernel.data[k_off + static_cast<std::size_t>(c) * co];
            T* dkrow = &g.weights.data[k_off + static_cast<std::size_t>(c) * co];
            T din = T(0);
            for (int o = 0; o < co; ++o) {
              dkrow[o] += v * gout[o];
              din += krow[o] * gout[o];
            }
            if (need_input_grad) g.input.data[in_off + c] += din;
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
LayerGrads<T> depthwise_conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                        const ConvSpec& spec, const Tensor<T>& grad_out) {
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int k = spec.kernel, m = spec.channel_multiplier, cm = c * m;
  const int ho = grad_out.extent(0), wo = grad_out.extent(1);
  if (grad_out.rank() != 3 || grad_out.extent(2) != cm ||
      ho != conv_output_extent(h, k, spec.stride, spec.padding) ||
      wo != conv_output_extent(w, k, spec.stride, spec.padding))
    throw ShapeMismatch("depthwise_backward: upstream gradient shape mismatch");
  const int py = spec.padding == Padding::kSame ? same_pad_before(h, ho, k, spec.stride) : 0;
  const int px = spec.padding == Padding::kSame ? same_pad_before(w, wo, k, spec.stride) : 0;

  LayerGrads<T> g{Tensor<T>(input.shape), Tensor<T>(kernel.shape), Tensor<T>({cm})};
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      const T* gout = &grad_out.data[(static_cast<std::size_t>(y) * wo + x) * cm];
      for (int q = 0; q < cm; ++q) g.bias.data[q] += gout[q];
      for (int dy = 0; dy < k; ++dy) {
        const int iy = y * spec.stride + dy - py;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = x * spec.stride + dx - px;
          if (ix < 0 || ix >= w) continue;
          const std::size_t in_off = (static_cast<std::size_t>(iy) * w + ix) * c;
          const std::size_t k_off = (static_cast<std::size_t>(dy) * k + dx) * cm;
          for (int cc = 0; cc < c; ++cc) {
            T din = T(0);
            for (int j = 0; j < m; ++j) {
              const int q = cc * m + j;
              g.weights.data[k_off + q] += input.data[in_off + cc] * gout[q];
              din += kernel.data[k_off + q] * gout[q];
            }
            g.input.data[in_off + cc] += din;
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
LayerGrads<T> pointwise_conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                        const Tensor<T>& grad_out) {
  const int h = input.extent(0), w = input.extent(1), ci = input.extent(2);
  const int co = kernel.extent(1);
  if (grad_out.rank() != 3 || grad_out.extent(0) != h || grad_out.extent(1) != w ||
      grad_out.extent(2) != co)
    throw ShapeMismatch("pointwise_backward: upstream gradient shape mismatch");

  LayerGrads<T> g{Tensor<T>(input.shape), Tensor<T>(kernel.shape), Tensor<T>({co})};
  for (int p = 0; p < h * w; ++p) {
    const T* in_px = &input.data[static_cast<std::size_t>(p) * ci];
    const T* gout = &grad_out.data[static_cast<std::size_t>(p) * co];
    T* din = &g.input.data[static_cast<std::size_t>(p) * ci];
    for (int o = 0; o < co; ++o) g.bias.data[o] += gout[o];
    for (int c = 0; c < ci; ++c) {
      const T* krow = &kernel.data[static_cast<std::size_t>(c) * co];
      T* dkrow = &g.weights.data[static_cast<std::size_t>(c) * co];
      T acc = T(0);
      for (int o = 0; o < co; ++o) {
        dkrow[o] += in_px[c] * gout[o];
        acc += krow[o] * gout[o];
      }
      din[c] += acc;
    }
  }
  return g;
}

/// Subgradient convention: zero at exactly zero input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (!input.same_shape(grad_out)) throw ShapeMismatch("relu_backward: shape mismatch");
  Tensor<T> g(input.shape);
  for (std::size_t i = 0; i < input.numel(); ++i)
    g.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0);
  return g;
}

/// Routes each window's gradient to its first maximum in scan order.
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& input, int window, int stride, Padding pad,
                             const Tensor<T>& grad_out) {
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int ho = pool_output_extent(h, window, stride, pad);
  const int wo = pool_output_extent(w, window, stride, pad);
  if (grad_out.rank() != 3 || grad_out.extent(0) != ho || grad_out.extent(1) != wo ||
      grad_out.extent(2) != c)
    throw ShapeMismatch("maxpool_backward: upstream gradient shape mismatch");

  Tensor<T> g(input.shape);
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      const int y1 = std::min(y * stride + window, h);
      const int x1 = std::min(x * stride + window, w);
      for (int cc = 0; cc < c; ++cc) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t arg = 0;
        for (int iy = y * stride; iy < y1; ++iy) {
          for (int ix = x * stride; ix < x1; ++ix) {
            const std::size_t off = (static_cast<std::size_t>(iy) * w + ix) * c + cc;
            if (input.data[off] > best) {
              best = input.data[off];
              arg = off;
            }
          }
        }
        g.data[arg] += grad_out.data[(static_cast<std::size_t>(y) * wo + x) * c + cc];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& input, const LrnSpec& spec, const Tensor<T>& grad_out) {
  if (!input.same_shape(grad_out)) throw ShapeMismatch("lrn_backward: shape mismatch");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  Tensor<T> g(input.shape);
  std::vector<T> prefix(static_cast<std::size_t>(c) + 1);
  std::vector<T> aux(static_cast<std::size_t>(c) + 1);  // prefix of gout * x * denom^(-beta-1)
  for (int p = 0; p < h * w; ++p) {
    const T* x = &input.data[static_cast<std::size_t>(p) * c];
    const T* go = &grad_out.data[static_cast<std::size_t>(p) * c];
    T* gx = &g.data[static_cast<std::size_t>(p) * c];
    prefix[0] = T(0);
    for (int cc = 0; cc < c; ++cc) prefix[cc + 1] = prefix[cc] + x[cc] * x[cc];
    aux[0] = T(0);
    std::vector<T> denom_pow(static_cast<std::size_t>(c));
    for (int cc = 0; cc < c; ++cc) {
      const int lo = std::max(cc - spec.radius, 0);
      const int hi = std::min(cc + spec.radius, c - 1);
      const T denom = static_cast<T>(spec.bias) + static_cast<T>(spec.alpha) * (prefix[hi + 1] - prefix[lo]);
      denom_pow[cc] = std::pow(denom, static_cast<T>(-spec.beta));
      aux[cc + 1] = aux[cc] + go[cc] * x[cc] * denom_pow[cc] / denom;
    }
    const T scale = static_cast<T>(2.0 * spec.alpha * spec.beta);
    for (int cc = 0; cc < c; ++cc) {
      const int lo = std::max(cc - spec.radius, 0);
      const int hi = std::min(cc + spec.radius, c - 1);
      gx[cc] = go[cc] * denom_pow[cc] - scale * x[cc] * (aux[hi + 1] - aux[lo]);
    }
  }
  return g;
}

template <typename T>
LayerGrads<T> fully_connected_backward(const Tensor<T>& input, const Tensor<T>& weights,
                                       const Tensor<T>& grad_out) {
  const int n = input.extent(0), m = weights.extent(1);
  if (grad_out.rank() != 1 || grad_out.extent(0) != m)
    throw ShapeMismatch("fully_connected_backward: upstream gradient length != M");
  LayerGrads<T> g{Tensor<T>({n}), Tensor<T>(weights.shape), grad_out};
  for (int i = 0; i < n; ++i) {
    const T* wrow = &weights.data[static_cast<std::size_t>(i) * m];
    T* dwrow = &g.weights.data[static_cast<std::size_t>(i) * m];
    T acc = T(0);
    for (int j = 0; j < m; ++j) {
      acc += wrow[j] * grad_out.data[j];
      dwrow[j] = input.data[i] * grad_out.data[j];
    }
    g.input.data[i] = acc;
  }
  return g;
}

/// d/dx of softmax given its own output y: dx_i = y_i * (g_i - sum_j g_j y_j).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& softmax_out, const Tensor<T>& grad_out) {
  if (!softmax_out.same_shape(grad_out)) throw ShapeMismatch("softmax_backward: shape mismatch");
  T dot = T(0);
  for (std::size_t i = 0; i < softmax_out.numel(); ++i) dot += softmax_out.data[i] * grad_out.data[i];
  Tensor<T> g(softmax_out.shape);
  for (std::size_t i = 0; i < softmax_out.numel(); ++i)
    g.data[i] = softmax_out.data[i] * (grad_out.data[i] - dot);
  return g;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& grad_out) {
  return mul(mask, grad_out);
}

}  // namespace lmtcnn
